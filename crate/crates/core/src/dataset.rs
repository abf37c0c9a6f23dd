//! Dataset manifest schema, feature-file IO, the seconds/index conversion
//! and the two dataset layout modes (native length vs rescaled to a fixed
//! grid).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervals::{interpolate_clamped, TemporalInterval};
use crate::ioutil;
use crate::nn::Matrix;
use crate::tem::{AnnotationSet, FeatureSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid_argument(format!(
                "unknown split {other:?}; expected train, val or test"
            ))),
        }
    }
}

/// One video's manifest row. Times are in seconds; `feature_path` is
/// relative to the manifest file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub feature_path: String,
    pub duration_seconds: f64,
    /// Snippet spacing in seconds; index `n` covers time `n * snippet_interval`.
    pub snippet_interval: f64,
    pub annotations: Vec<[f64; 2]>,
}

/// A split's video list plus its layout mode: `rescale_to = Some(l)` loads
/// every sequence resampled to length `l`, `None` keeps native lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    #[serde(default)]
    pub rescale_to: Option<usize>,
    pub videos: Vec<VideoEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.rescale_to {
            if l < 2 {
                return Err(Error::invalid_argument(format!(
                    "rescale_to must be at least 2, got {l}"
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for entry in &self.videos {
            if !seen.insert(entry.video_id.as_str()) {
                return Err(Error::invalid_argument(format!(
                    "duplicate video_id {:?} in {} manifest",
                    entry.video_id, self.split
                )));
            }
            if !(entry.duration_seconds > 0.0) || !entry.duration_seconds.is_finite() {
                return Err(Error::invalid_argument(format!(
                    "video {:?} has invalid duration {}",
                    entry.video_id, entry.duration_seconds
                )));
            }
            if !(entry.snippet_interval > 0.0) || !entry.snippet_interval.is_finite() {
                return Err(Error::invalid_argument(format!(
                    "video {:?} has invalid snippet_interval {}",
                    entry.video_id, entry.snippet_interval
                )));
            }
            for (i, a) in entry.annotations.iter().enumerate() {
                if !(a[0].is_finite() && a[1].is_finite() && a[0] < a[1]) {
                    return Err(Error::invalid_argument(format!(
                        "video {:?} annotation {i} has invalid span [{}, {}]",
                        entry.video_id, a[0], a[1]
                    )));
                }
                if a[0] < 0.0 || a[1] > entry.duration_seconds {
                    return Err(Error::invalid_argument(format!(
                        "video {:?} annotation {i} [{}, {}] lies outside [0, {}]",
                        entry.video_id, a[0], a[1], entry.duration_seconds
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    ioutil::write_json_pretty(path, manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = ioutil::read_json(path)?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn seconds_to_index(t_seconds: f64, snippet_interval: f64) -> f64 {
    t_seconds / snippet_interval
}

pub fn index_to_seconds(index: f64, snippet_interval: f64) -> f64 {
    index * snippet_interval
}

/// Feature files hold one comma-separated row per snippet, no header.
pub fn read_features_csv(path: &Path) -> Result<Matrix> {
    let body = ioutil::read_to_string(path)?;
    let display = path.display();
    let mut data = Vec::new();
    let mut cols = 0usize;
    let mut rows = 0usize;
    for (line_no, line) in body.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row_len = 0usize;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Csv {
                path: display.to_string(),
                message: format!("line {}: unparsable value {field:?}", line_no + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    path: display.to_string(),
                    message: format!("line {}: non-finite value", line_no + 1),
                });
            }
            data.push(v);
            row_len += 1;
        }
        if rows == 0 {
            cols = row_len;
        } else if row_len != cols {
            return Err(Error::Csv {
                path: display.to_string(),
                message: format!(
                    "line {}: expected {cols} columns, found {row_len}",
                    line_no + 1
                ),
            });
        }
        rows += 1;
    }
    if rows == 0 || cols == 0 {
        return Err(Error::Csv {
            path: display.to_string(),
            message: "empty feature file".into(),
        });
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn write_features_csv(path: &Path, features: &Matrix) -> Result<()> {
    let mut body = String::new();
    for r in 0..features.rows() {
        let row = features.row(r);
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                body.push(',');
            }
            body.push_str(&format!("{v}"));
        }
        body.push('\n');
    }
    ioutil::write_atomic(path, body.as_bytes())
}

/// Resamples a sequence onto a `target_len` endpoint-inclusive grid with
/// per-dimension linear interpolation. The snippet interval is stretched so
/// the covered duration is preserved.
pub fn rescale_features(fs: &FeatureSequence, target_len: usize) -> Result<FeatureSequence> {
    if target_len < 2 {
        return Err(Error::invalid_argument(format!(
            "rescale target must be at least 2, got {target_len}"
        )));
    }
    let l = fs.len();
    let d = fs.feature_dim();
    let mut out = Matrix::zeros(target_len, d);
    let scale = (l - 1) as f64 / (target_len - 1) as f64;
    for dim in 0..d {
        let column: Vec<f64> = (0..l).map(|r| fs.features.get(r, dim)).collect();
        for j in 0..target_len {
            out.set(j, dim, interpolate_clamped(&column, j as f64 * scale));
        }
    }
    FeatureSequence::new(
        fs.video_id.clone(),
        out,
        fs.snippet_interval * l as f64 / target_len as f64,
    )
}

/// Maps annotation indices onto the rescaled grid by the length ratio,
/// clamped to the new grid.
pub fn rescale_annotations(
    ann: &AnnotationSet,
    original_len: usize,
    target_len: usize,
) -> Result<AnnotationSet> {
    if original_len < 2 || target_len < 2 {
        return Err(Error::invalid_argument(
            "rescaling needs at least two snippets on both grids",
        ));
    }
    let factor = target_len as f64 / original_len as f64;
    let max_index = (target_len - 1) as f64;
    let mut instances = Vec::with_capacity(ann.instances.len());
    for inst in &ann.instances {
        let s = (inst.start() * factor).clamp(0.0, max_index);
        let e = (inst.end() * factor).clamp(0.0, max_index);
        if !(s < e) {
            return Err(Error::invalid_argument(format!(
                "video {:?}: instance [{}, {}] collapses on the length-{target_len} grid",
                ann.video_id,
                inst.start(),
                inst.end()
            )));
        }
        instances.push(TemporalInterval::new(s, e)?);
    }
    Ok(AnnotationSet::new(ann.video_id.clone(), instances))
}

/// Loads one video: reads its feature file, checks the row count against
/// `duration / snippet_interval`, converts annotation seconds to snippet
/// indices (clamped to the grid) and applies the manifest's rescale mode.
pub fn load_video(
    manifest_dir: &Path,
    manifest: &DatasetManifest,
    entry: &VideoEntry,
) -> Result<(FeatureSequence, AnnotationSet)> {
    let feature_path = manifest_dir.join(&entry.feature_path);
    let features = read_features_csv(&feature_path)?;
    let expected = (entry.duration_seconds / entry.snippet_interval).round() as usize;
    let rows = features.rows();
    if rows.abs_diff(expected) > 1 {
        return Err(Error::invalid_argument(format!(
            "video {:?}: feature file has {rows} rows but duration {} s at interval {} s implies {expected}",
            entry.video_id, entry.duration_seconds, entry.snippet_interval
        )));
    }
    let fs = FeatureSequence::new(entry.video_id.clone(), features, entry.snippet_interval)?;

    let max_index = (fs.len() - 1) as f64;
    let mut instances = Vec::with_capacity(entry.annotations.len());
    for (i, a) in entry.annotations.iter().enumerate() {
        let s = seconds_to_index(a[0], entry.snippet_interval).clamp(0.0, max_index);
        let e = seconds_to_index(a[1], entry.snippet_interval).clamp(0.0, max_index);
        if !(s < e) {
            return Err(Error::invalid_argument(format!(
                "video {:?} annotation {i} [{}, {}] collapses on the snippet grid",
                entry.video_id, a[0], a[1]
            )));
        }
        instances.push(TemporalInterval::new(s, e)?);
    }
    let ann = AnnotationSet::new(entry.video_id.clone(), instances);

    match manifest.rescale_to {
        Some(target) => {
            let original_len = fs.len();
            Ok((
                rescale_features(&fs, target)?,
                rescale_annotations(&ann, original_len, target)?,
            ))
        }
        None => Ok((fs, ann)),
    }
}

/// Loads every video of a manifest, in manifest order.
pub fn load_split(manifest_path: &Path) -> Result<Vec<(FeatureSequence, AnnotationSet)>> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path
        .parent()
        .ok_or_else(|| Error::invalid_argument("manifest path has no parent directory"))?;
    manifest
        .videos
        .iter()
        .map(|entry| load_video(dir, &manifest, entry))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_sequence(len: usize, dim: usize) -> FeatureSequence {
        let mut m = Matrix::zeros(len, dim);
        for r in 0..len {
            for c in 0..dim {
                m.set(r, c, r as f64 + 100.0 * c as f64);
            }
        }
        FeatureSequence::new("ramp".into(), m, 1.0).unwrap()
    }

    fn write_manifest_fixture(dir: &Path, rescale_to: Option<usize>) -> std::path::PathBuf {
        let features = Matrix::from_vec(
            5,
            2,
            vec![0.0, 1.0, 1.0, 1.5, 2.0, 2.0, 3.0, 2.5, 4.0, 3.0],
        )
        .unwrap();
        write_features_csv(&dir.join("v0.csv"), &features).unwrap();
        let manifest = DatasetManifest {
            split: Split::Train,
            rescale_to,
            videos: vec![VideoEntry {
                video_id: "v0".into(),
                feature_path: "v0.csv".into(),
                duration_seconds: 10.0,
                snippet_interval: 2.0,
                annotations: vec![[2.0, 8.0]],
            }],
        };
        let path = dir.join("train.json");
        write_manifest(&path, &manifest).unwrap();
        path
    }

    #[test]
    fn split_names_round_trip() {
        for split in Split::ALL {
            assert_eq!(split.as_str().parse::<Split>().unwrap(), split);
        }
        assert!("validation".parse::<Split>().is_err());
    }

    #[test]
    fn feature_csv_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let m = Matrix::from_vec(
            3,
            2,
            vec![0.1 + 0.2, 1.0 / 3.0, -4.25, f64::MIN_POSITIVE, 0.0, 1e300],
        )
        .unwrap();
        write_features_csv(&path, &m).unwrap();
        let back = read_features_csv(&path).unwrap();
        assert_eq!(back.rows(), 3);
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(back.get(r, c).to_bits(), m.get(r, c).to_bits());
            }
        }
    }

    #[test]
    fn feature_csv_rejects_ragged_and_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "1.0,2.0\n3.0\n").unwrap();
        assert!(read_features_csv(&ragged).is_err());
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(read_features_csv(&empty).is_err());
        let bad = dir.path().join("nan.csv");
        std::fs::write(&bad, "1.0,nan\n").unwrap();
        assert!(read_features_csv(&bad).is_err());
    }

    #[test]
    fn manifest_validation_catches_bad_entries() {
        let entry = VideoEntry {
            video_id: "a".into(),
            feature_path: "a.csv".into(),
            duration_seconds: 10.0,
            snippet_interval: 1.0,
            annotations: vec![[0.0, 11.0]],
        };
        let manifest = DatasetManifest {
            split: Split::Val,
            rescale_to: None,
            videos: vec![entry.clone()],
        };
        assert!(manifest.validate().is_err());

        let mut dup = manifest.clone();
        dup.videos = vec![
            VideoEntry {
                annotations: vec![],
                ..entry.clone()
            },
            VideoEntry {
                annotations: vec![],
                ..entry
            },
        ];
        assert!(dup.validate().is_err());
    }

    #[test]
    fn load_video_converts_seconds_to_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest_fixture(dir.path(), None);
        let videos = load_split(&path).unwrap();
        assert_eq!(videos.len(), 1);
        let (fs, ann) = &videos[0];
        assert_eq!(fs.len(), 5);
        assert_eq!(fs.feature_dim(), 2);
        // [2 s, 8 s] at 2 s spacing -> indices [1, 4]
        assert_eq!(ann.instances[0].start(), 1.0);
        assert_eq!(ann.instances[0].end(), 4.0);
    }

    #[test]
    fn row_count_must_match_duration() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest_fixture(dir.path(), None);
        let mut manifest = read_manifest(&path).unwrap();
        manifest.videos[0].duration_seconds = 40.0;
        write_manifest(&path, &manifest).unwrap();
        assert!(load_split(&path).is_err());
    }

    #[test]
    fn edge_touching_annotations_clamp_to_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest_fixture(dir.path(), None);
        let mut manifest = read_manifest(&path).unwrap();
        manifest.videos[0].annotations = vec![[0.0, 10.0]];
        write_manifest(&path, &manifest).unwrap();
        let videos = load_split(&path).unwrap();
        let (_, ann) = &videos[0];
        // 10 s -> index 5, clamped to the last snippet (4); within one interval
        assert_eq!(ann.instances[0].start(), 0.0);
        assert_eq!(ann.instances[0].end(), 4.0);
    }

    #[test]
    fn rescale_identity_at_equal_length() {
        let fs = ramp_sequence(7, 3);
        let out = rescale_features(&fs, 7).unwrap();
        for r in 0..7 {
            for c in 0..3 {
                assert_eq!(out.features.get(r, c).to_bits(), fs.features.get(r, c).to_bits());
            }
        }
    }

    #[test]
    fn rescale_picks_grid_points_on_a_ramp() {
        // length 5 -> 3 lands on original indices {0, 2, 4}
        let fs = ramp_sequence(5, 2);
        let out = rescale_features(&fs, 3).unwrap();
        for c in 0..2 {
            assert_eq!(out.features.get(0, c), fs.features.get(0, c));
            assert_eq!(out.features.get(1, c), fs.features.get(2, c));
            assert_eq!(out.features.get(2, c), fs.features.get(4, c));
        }
    }

    #[test]
    fn rescale_is_exact_on_affine_inputs() {
        // values 2 + 3 * position stay affine under linear interpolation
        let mut m = Matrix::zeros(6, 1);
        for r in 0..6 {
            m.set(r, 0, 2.0 + 3.0 * r as f64);
        }
        let fs = FeatureSequence::new("affine".into(), m, 1.0).unwrap();
        let out = rescale_features(&fs, 11).unwrap();
        for j in 0..11 {
            let pos = j as f64 * 5.0 / 10.0;
            assert!((out.features.get(j, 0) - (2.0 + 3.0 * pos)).abs() < 1e-12);
        }
    }

    #[test]
    fn rescale_constant_is_constant() {
        let mut m = Matrix::zeros(4, 2);
        for r in 0..4 {
            m.set(r, 0, 0.75);
            m.set(r, 1, -1.5);
        }
        let fs = FeatureSequence::new("const".into(), m, 1.0).unwrap();
        let out = rescale_features(&fs, 9).unwrap();
        for j in 0..9 {
            assert_eq!(out.features.get(j, 0), 0.75);
            assert_eq!(out.features.get(j, 1), -1.5);
        }
    }

    #[test]
    fn rescale_rejects_tiny_targets() {
        let fs = ramp_sequence(5, 1);
        assert!(rescale_features(&fs, 1).is_err());
    }

    #[test]
    fn rescaled_manifest_mode_applies_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest_fixture(dir.path(), Some(9));
        let videos = load_split(&path).unwrap();
        let (fs, ann) = &videos[0];
        assert_eq!(fs.len(), 9);
        // annotation indices [1, 4] scaled by 9/5
        assert!((ann.instances[0].start() - 1.8).abs() < 1e-12);
        assert!((ann.instances[0].end() - 7.2).abs() < 1e-12);
    }

    #[test]
    fn seconds_index_round_trip() {
        for sigma in [0.5, 1.0, 5.0, 16.0] {
            for t in [0.0, 3.25, 97.5] {
                let idx = seconds_to_index(t, sigma);
                assert!((index_to_seconds(idx, sigma) - t).abs() < 1e-12);
            }
        }
    }
}
