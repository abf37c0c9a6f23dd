//! Synthetic dataset generation: seeded noise backgrounds plus channel
//! patterns with linear boundary ramps, packed into non-overlapping
//! instances, split train/val/test with optionally held-out pattern
//! families.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_features_csv, write_manifest, DatasetManifest, Split, VideoEntry};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Minimum spacing between packed instances, in snippets.
const INSTANCE_GAP: f64 = 3.0;

/// Peak L2 amplitude of a pattern family across channels.
const PATTERN_GAIN: f64 = 2.0;

/// Boundary ramps span one tenth of the instance duration divided by
/// `boundary_sharpness` (1 keeps the full tenth; larger values sharpen).
const RAMP_DURATION_FRACTION: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Training videos; val and test each get a quarter of this (at least 1).
    pub num_videos: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub feature_dim: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Instance duration range in snippets.
    pub min_duration: f64,
    pub max_duration: f64,
    pub boundary_sharpness: f64,
    /// Standard deviation of the background noise.
    pub noise_level: f64,
    pub num_pattern_families: usize,
    /// Fraction of pattern families reserved for the test split.
    pub holdout_pattern_fraction: f64,
    /// Stamp this rescale target into the generated manifests.
    pub rescale_to: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_videos: 200,
            min_len: 120,
            max_len: 200,
            feature_dim: 8,
            min_instances: 1,
            max_instances: 3,
            min_duration: 8.0,
            max_duration: 30.0,
            boundary_sharpness: 1.0,
            noise_level: 0.1,
            num_pattern_families: 8,
            holdout_pattern_fraction: 0.25,
            rescale_to: None,
            seed: 1,
        }
    }
}

impl SynthConfig {
    fn margin(&self) -> f64 {
        let ramp = (self.max_duration / RAMP_DURATION_FRACTION) / self.boundary_sharpness;
        (ramp / 2.0).ceil() + 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 {
            return Err(Error::invalid_argument("num_videos must be positive"));
        }
        if self.feature_dim < 2 {
            return Err(Error::invalid_argument(format!(
                "feature_dim must be at least 2, got {}",
                self.feature_dim
            )));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::invalid_argument(format!(
                "length range [{}, {}] is invalid",
                self.min_len, self.max_len
            )));
        }
        if self.min_instances > self.max_instances {
            return Err(Error::invalid_argument(format!(
                "instance range [{}, {}] is invalid",
                self.min_instances, self.max_instances
            )));
        }
        if !(self.min_duration >= 1.0 && self.min_duration <= self.max_duration)
            || !self.max_duration.is_finite()
        {
            return Err(Error::invalid_argument(format!(
                "duration range [{}, {}] is invalid",
                self.min_duration, self.max_duration
            )));
        }
        if !(self.boundary_sharpness > 0.0) || !self.boundary_sharpness.is_finite() {
            return Err(Error::invalid_argument(format!(
                "boundary_sharpness must be positive, got {}",
                self.boundary_sharpness
            )));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(Error::invalid_argument(format!(
                "noise_level must be non-negative, got {}",
                self.noise_level
            )));
        }
        if self.num_pattern_families == 0 {
            return Err(Error::invalid_argument("need at least one pattern family"));
        }
        if !(0.0..1.0).contains(&self.holdout_pattern_fraction) {
            return Err(Error::invalid_argument(format!(
                "holdout_pattern_fraction must lie in [0, 1), got {}",
                self.holdout_pattern_fraction
            )));
        }
        if self.holdout_pattern_fraction > 0.0 && self.num_pattern_families < 2 {
            return Err(Error::invalid_argument(
                "holding out families requires at least two of them",
            ));
        }
        if let Some(l) = self.rescale_to {
            if l < 2 {
                return Err(Error::invalid_argument(format!(
                    "rescale_to must be at least 2, got {l}"
                )));
            }
        }
        if self.max_instances > 0 {
            let worst = self.max_instances as f64 * self.max_duration
                + (self.max_instances - 1) as f64 * INSTANCE_GAP;
            let usable = self.min_len as f64 - 2.0 * self.margin();
            if worst > usable {
                return Err(Error::invalid_argument(format!(
                    "infeasible packing: {} instances of up to {} snippets need {worst:.1} \
                     snippets but the shortest video offers {usable:.1}",
                    self.max_instances, self.max_duration
                )));
            }
        }
        Ok(())
    }

    fn holdout_family_count(&self) -> usize {
        if self.holdout_pattern_fraction == 0.0 {
            return 0;
        }
        let n = (self.holdout_pattern_fraction * self.num_pattern_families as f64).floor()
            as usize;
        n.clamp(1, self.num_pattern_families - 1)
    }
}

/// Unit-L2 non-negative channel amplitudes, scaled to the pattern gain.
fn make_families(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..cfg.num_pattern_families)
        .map(|_| {
            let mut amps: Vec<f64> = (0..cfg.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
                .collect();
            let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            for a in amps.iter_mut() {
                *a *= PATTERN_GAIN / norm;
            }
            amps
        })
        .collect()
}

/// Trapezoidal envelope: ramps linearly across a window of width `w`
/// centered on each boundary, flat at 1 in between.
fn envelope(t: f64, start: f64, end: f64, w: f64) -> f64 {
    let rise = (t - (start - w / 2.0)) / w;
    let fall = ((end + w / 2.0) - t) / w;
    rise.min(fall).min(1.0).max(0.0)
}

struct PackedVideo {
    features: Matrix,
    annotations: Vec<[f64; 2]>,
}

fn generate_video(
    cfg: &SynthConfig,
    families: &[Vec<f64>],
    allowed_families: &[usize],
    rng: &mut ChaCha8Rng,
) -> PackedVideo {
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let mut features = Matrix::zeros(len, cfg.feature_dim);
    for r in 0..len {
        for c in 0..cfg.feature_dim {
            let noise: f64 = rng.sample(StandardNormal);
            features.set(r, c, noise * cfg.noise_level);
        }
    }

    let count = rng.random_range(cfg.min_instances..=cfg.max_instances);
    let mut annotations = Vec::with_capacity(count);
    if count > 0 {
        let durations: Vec<f64> = (0..count)
            .map(|_| rng.random_range(cfg.min_duration..=cfg.max_duration))
            .collect();
        let margin = cfg.margin();
        let usable = len as f64 - 2.0 * margin;
        let total: f64 = durations.iter().sum::<f64>() + (count - 1) as f64 * INSTANCE_GAP;
        let free = (usable - total).max(0.0);
        let weights: Vec<f64> = (0..=count).map(|_| rng.random_range(0.0..1.0)).collect();
        let weight_sum: f64 = weights.iter().sum();

        let mut cursor = margin;
        for (i, d) in durations.iter().enumerate() {
            cursor += free * weights[i] / weight_sum;
            let start = cursor;
            let end = start + d;
            annotations.push([start, end]);
            cursor = end + INSTANCE_GAP;

            let family = &families[allowed_families[rng.random_range(0..allowed_families.len())]];
            let w = (d / RAMP_DURATION_FRACTION) / cfg.boundary_sharpness;
            for t in 0..len {
                let env = envelope(t as f64, start, end, w);
                if env > 0.0 {
                    for (c, amp) in family.iter().enumerate() {
                        features.set(t, c, features.get(t, c) + amp * env);
                    }
                }
            }
        }
    }
    PackedVideo {
        features,
        annotations,
    }
}

/// Per-split manifest paths plus the family partition sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub manifests: BTreeMap<Split, PathBuf>,
    pub train_families: usize,
    pub holdout_families: usize,
}

/// Generates feature files and manifests for all three splits under
/// `out_dir`. Same config -> byte-identical files. Test videos draw their
/// patterns from the held-out families when any are reserved.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut family_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let families = make_families(cfg, &mut family_rng);
    let n_holdout = cfg.holdout_family_count();
    let n_train = cfg.num_pattern_families - n_holdout;
    let train_families: Vec<usize> = (0..n_train).collect();
    let holdout_families: Vec<usize> = (n_train..cfg.num_pattern_families).collect();

    let side_count = (cfg.num_videos / 4).max(1);
    let mut manifests = BTreeMap::new();
    for (offset, split, count) in [
        (1u64, Split::Train, cfg.num_videos),
        (2, Split::Val, side_count),
        (3, Split::Test, side_count),
    ] {
        let allowed: &[usize] = match split {
            Split::Test if n_holdout > 0 => &holdout_families,
            _ => &train_families,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(offset));
        let mut videos = Vec::with_capacity(count);
        for i in 0..count {
            let video_id = format!("{split}_{i:04}");
            let packed = generate_video(cfg, &families, allowed, &mut rng);
            let feature_rel = format!("features/{split}/{video_id}.csv");
            write_features_csv(&out_dir.join(&feature_rel), &packed.features)?;
            videos.push(VideoEntry {
                video_id,
                feature_path: feature_rel,
                duration_seconds: packed.features.rows() as f64,
                snippet_interval: 1.0,
                annotations: packed.annotations,
            });
        }
        let manifest = DatasetManifest {
            split,
            rescale_to: cfg.rescale_to,
            videos,
        };
        let path = out_dir.join(format!("{split}.json"));
        write_manifest(&path, &manifest)?;
        manifests.insert(split, path);
    }
    Ok(SynthOutput {
        manifests,
        train_families: n_train,
        holdout_families: n_holdout,
    })
}
