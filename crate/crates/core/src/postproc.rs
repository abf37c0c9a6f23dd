//! Post-processing: score fusion and redundant-proposal suppression, plus the
//! final per-video proposal file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervals::iou;
use crate::ioutil;
use crate::pgm::Proposal;
use std::path::Path;

/// Suppression algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsMode {
    SoftGaussian,
    Greedy,
}

/// Suppression parameters.
///
/// `iou_threshold` gates suppression; `gaussian_width` sets the decay scale
/// for the soft variant; proposals scoring below `score_floor` after
/// suppression are dropped (0 keeps all).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmsConfig {
    pub mode: NmsMode,
    pub iou_threshold: f64,
    pub gaussian_width: f64,
    pub score_floor: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self::soft_gaussian()
    }
}

impl NmsConfig {
    pub fn soft_gaussian() -> Self {
        Self {
            mode: NmsMode::SoftGaussian,
            iou_threshold: 0.8,
            gaussian_width: 0.75,
            score_floor: 0.0,
        }
    }

    pub fn greedy() -> Self {
        Self {
            mode: NmsMode::Greedy,
            iou_threshold: 0.65,
            gaussian_width: 0.75,
            score_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::invalid_argument(format!(
                "iou_threshold must lie in (0, 1), got {}",
                self.iou_threshold
            )));
        }
        if !(self.gaussian_width > 0.0) || !self.gaussian_width.is_finite() {
            return Err(Error::invalid_argument(format!(
                "gaussian_width must be positive, got {}",
                self.gaussian_width
            )));
        }
        if !(self.score_floor >= 0.0) || !self.score_floor.is_finite() {
            return Err(Error::invalid_argument(format!(
                "score_floor must be finite and non-negative, got {}",
                self.score_floor
            )));
        }
        Ok(())
    }
}

/// Sets `p_fused = p_conf * p_start_at_ts * p_end_at_te` on every proposal.
pub fn fuse_scores(props: &mut [Proposal]) -> Result<()> {
    for (i, p) in props.iter_mut().enumerate() {
        let conf = p.p_conf.ok_or_else(|| {
            Error::invalid_argument(format!("proposal {i} has no confidence score to fuse"))
        })?;
        p.p_fused = Some(conf * p.p_start_at_ts * p.p_end_at_te);
    }
    Ok(())
}

/// Confidence-free fusion variant: `p_fused = p_start_at_ts * p_end_at_te`.
pub fn fuse_boundary_scores(props: &mut [Proposal]) {
    for p in props.iter_mut() {
        p.p_fused = Some(p.p_start_at_ts * p.p_end_at_te);
    }
}

fn fused_score(p: &Proposal, i: usize) -> Result<f64> {
    match p.p_fused {
        Some(s) if s.is_finite() => Ok(s),
        Some(s) => Err(Error::invalid_argument(format!(
            "proposal {i} has non-finite fused score {s}"
        ))),
        None => Err(Error::invalid_argument(format!(
            "proposal {i} has no fused score; run fusion first"
        ))),
    }
}

/// Index of the highest-scoring proposal; ties go to the lexicographically
/// smallest `(t_s, t_e)`.
fn argmax(pool: &[Proposal]) -> usize {
    let mut best = 0;
    for i in 1..pool.len() {
        let (s, b) = (&pool[i], &pool[best]);
        let score_s = s.p_fused.unwrap();
        let score_b = b.p_fused.unwrap();
        let earlier = (s.interval.start(), s.interval.end())
            < (b.interval.start(), b.interval.end());
        if score_s > score_b || (score_s == score_b && earlier) {
            best = i;
        }
    }
    best
}

fn sort_final(out: &mut [Proposal]) {
    out.sort_by(|a, b| {
        b.p_fused
            .unwrap()
            .total_cmp(&a.p_fused.unwrap())
            .then(a.interval.start().total_cmp(&b.interval.start()))
            .then(a.interval.end().total_cmp(&b.interval.end()))
    });
}

/// Gaussian-decay suppression: repeatedly selects the highest-scoring
/// proposal and decays every remaining proposal overlapping it at
/// `iou >= iou_threshold` by `exp(-iou^2 / gaussian_width)`. All proposals
/// survive with re-weighted scores, sorted descending, except those falling
/// below `score_floor`.
pub fn soft_nms(props: &[Proposal], cfg: &NmsConfig) -> Result<Vec<Proposal>> {
    cfg.validate()?;
    let mut pool = props.to_vec();
    for (i, p) in pool.iter().enumerate() {
        fused_score(p, i)?;
    }
    let mut out = Vec::with_capacity(pool.len());
    while !pool.is_empty() {
        let selected = pool.swap_remove(argmax(&pool));
        for q in pool.iter_mut() {
            let v = iou(&selected.interval, &q.interval);
            if v >= cfg.iou_threshold {
                let decayed = q.p_fused.unwrap() * (-v * v / cfg.gaussian_width).exp();
                q.p_fused = Some(decayed);
            }
        }
        out.push(selected);
    }
    out.retain(|p| p.p_fused.unwrap() >= cfg.score_floor);
    sort_final(&mut out);
    Ok(out)
}

/// Classic suppression: repeatedly selects the highest-scoring proposal and
/// removes every remaining proposal overlapping it at `iou >= iou_threshold`.
/// Survivors keep their scores and are pairwise below the threshold.
pub fn greedy_nms(props: &[Proposal], cfg: &NmsConfig) -> Result<Vec<Proposal>> {
    cfg.validate()?;
    let mut pool = props.to_vec();
    for (i, p) in pool.iter().enumerate() {
        fused_score(p, i)?;
    }
    let mut out = Vec::new();
    while !pool.is_empty() {
        let selected = pool.swap_remove(argmax(&pool));
        pool.retain(|q| iou(&selected.interval, &q.interval) < cfg.iou_threshold);
        out.push(selected);
    }
    out.retain(|p| p.p_fused.unwrap() >= cfg.score_floor);
    sort_final(&mut out);
    Ok(out)
}

/// Runs the suppression algorithm selected by `cfg.mode`.
pub fn apply_nms(props: &[Proposal], cfg: &NmsConfig) -> Result<Vec<Proposal>> {
    match cfg.mode {
        NmsMode::SoftGaussian => soft_nms(props, cfg),
        NmsMode::Greedy => greedy_nms(props, cfg),
    }
}

/// One line of the final per-video proposal file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalProposal {
    pub t_s: f64,
    pub t_e: f64,
    pub score: f64,
}

/// Projects suppressed proposals onto the final `(t_s, t_e, score)` records.
pub fn finalize(props: &[Proposal]) -> Result<Vec<FinalProposal>> {
    props
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(FinalProposal {
                t_s: p.interval.start(),
                t_e: p.interval.end(),
                score: fused_score(p, i)?,
            })
        })
        .collect()
}

pub fn write_final_json(path: &Path, finals: &[FinalProposal]) -> Result<()> {
    ioutil::write_json(path, &finals)
}

pub fn read_final_json(path: &Path) -> Result<Vec<FinalProposal>> {
    let finals: Vec<FinalProposal> = ioutil::read_json(path)?;
    for (i, f) in finals.iter().enumerate() {
        if !(f.t_s.is_finite() && f.t_e.is_finite() && f.t_e > f.t_s) {
            return Err(Error::invalid_argument(format!(
                "final proposal {i} in {} has invalid span [{}, {}]",
                path.display(),
                f.t_s,
                f.t_e
            )));
        }
        if !f.score.is_finite() {
            return Err(Error::invalid_argument(format!(
                "final proposal {i} in {} has non-finite score",
                path.display()
            )));
        }
    }
    Ok(finals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervals::TemporalInterval;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scored(t_s: f64, t_e: f64, score: f64) -> Proposal {
        let mut p = Proposal::new(TemporalInterval::new(t_s, t_e).unwrap(), 0.5, 0.5);
        p.p_fused = Some(score);
        p
    }

    fn keys(props: &[Proposal]) -> Vec<(u64, u64, u64)> {
        props
            .iter()
            .map(|p| {
                (
                    p.interval.start().to_bits(),
                    p.interval.end().to_bits(),
                    p.p_fused.unwrap().to_bits(),
                )
            })
            .collect()
    }

    /// Direct transcription of the suppression recurrence on parallel index
    /// arrays, for cross-checking the production path.
    fn soft_nms_oracle(props: &[Proposal], cfg: &NmsConfig) -> Vec<(f64, f64, f64)> {
        let mut remaining: Vec<(f64, f64, f64)> = props
            .iter()
            .map(|p| (p.interval.start(), p.interval.end(), p.p_fused.unwrap()))
            .collect();
        let mut selected = Vec::new();
        while !remaining.is_empty() {
            let mut m = 0;
            for i in 1..remaining.len() {
                let (ts, te, s) = remaining[i];
                let (bts, bte, bs) = remaining[m];
                if s > bs || (s == bs && (ts, te) < (bts, bte)) {
                    m = i;
                }
            }
            let (mts, mte, ms) = remaining.remove(m);
            let m_int = TemporalInterval::new(mts, mte).unwrap();
            for r in remaining.iter_mut() {
                let r_int = TemporalInterval::new(r.0, r.1).unwrap();
                let v = iou(&m_int, &r_int);
                if v >= cfg.iou_threshold {
                    r.2 *= (-v * v / cfg.gaussian_width).exp();
                }
            }
            selected.push((mts, mte, ms));
        }
        selected.retain(|r| r.2 >= cfg.score_floor);
        selected.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then(a.0.total_cmp(&b.0))
                .then(a.1.total_cmp(&b.1))
        });
        selected
    }

    fn random_proposals(rng: &mut ChaCha8Rng, max_n: usize) -> Vec<Proposal> {
        let n = rng.random_range(0..=max_n);
        (0..n)
            .map(|_| {
                let t_s = rng.random_range(0.0..80.0);
                let d = rng.random_range(1.0..40.0);
                scored(t_s, t_s + d, rng.random_range(0.0..1.0))
            })
            .collect()
    }

    #[test]
    fn fusion_multiplies_the_three_scores() {
        let mut props = vec![
            Proposal::new(TemporalInterval::new(0.0, 5.0).unwrap(), 1.0, 1.0),
            Proposal::new(TemporalInterval::new(0.0, 5.0).unwrap(), 0.8, 0.9),
            Proposal::new(TemporalInterval::new(0.0, 5.0).unwrap(), 0.0, 0.9),
        ];
        props[0].p_conf = Some(1.0);
        props[1].p_conf = Some(0.5);
        props[2].p_conf = Some(0.7);
        fuse_scores(&mut props).unwrap();
        assert_eq!(props[0].p_fused, Some(1.0));
        assert!((props[1].p_fused.unwrap() - 0.36).abs() < 1e-12);
        assert_eq!(props[2].p_fused, Some(0.0));
    }

    #[test]
    fn fusion_requires_confidence() {
        let mut props = vec![Proposal::new(
            TemporalInterval::new(0.0, 5.0).unwrap(),
            0.8,
            0.9,
        )];
        assert!(fuse_scores(&mut props).is_err());
        fuse_boundary_scores(&mut props);
        assert!((props[0].p_fused.unwrap() - 0.72).abs() < 1e-12);
    }

    #[test]
    fn disjoint_proposals_keep_their_scores() {
        let props = vec![scored(0.0, 10.0, 0.9), scored(50.0, 60.0, 0.4)];
        let out = soft_nms(&props, &NmsConfig::soft_gaussian()).unwrap();
        assert_eq!(out[0].p_fused.unwrap().to_bits(), 0.9f64.to_bits());
        assert_eq!(out[1].p_fused.unwrap().to_bits(), 0.4f64.to_bits());
    }

    #[test]
    fn identical_interval_decays_by_the_gaussian_at_full_overlap() {
        let props = vec![scored(0.0, 10.0, 1.0), scored(0.0, 10.0, 0.8)];
        let out = soft_nms(&props, &NmsConfig::soft_gaussian()).unwrap();
        let factor = out[1].p_fused.unwrap() / 0.8;
        assert!((factor - 0.26360).abs() < 1e-5, "decay factor {factor}");
    }

    #[test]
    fn hand_value_at_iou_point_eight() {
        // [0, 9] vs [1, 10]: intersection 8, union 10.
        let props = vec![scored(0.0, 9.0, 1.0), scored(1.0, 10.0, 0.9)];
        let cfg = NmsConfig {
            iou_threshold: 0.65,
            ..NmsConfig::soft_gaussian()
        };
        let out = soft_nms(&props, &cfg).unwrap();
        assert!((out[1].p_fused.unwrap() - 0.38339).abs() < 1e-5);
    }

    #[test]
    fn soft_output_is_a_rescored_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let props = random_proposals(&mut rng, 15);
        let out = soft_nms(&props, &NmsConfig::soft_gaussian()).unwrap();
        assert_eq!(out.len(), props.len());
        let mut got: Vec<(u64, u64)> = out
            .iter()
            .map(|p| (p.interval.start().to_bits(), p.interval.end().to_bits()))
            .collect();
        let mut want: Vec<(u64, u64)> = props
            .iter()
            .map(|p| (p.interval.start().to_bits(), p.interval.end().to_bits()))
            .collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want);
        for w in out.windows(2) {
            assert!(w[0].p_fused.unwrap() >= w[1].p_fused.unwrap());
        }
    }

    #[test]
    fn near_one_threshold_is_the_identity_on_scores() {
        let props = vec![
            scored(0.0, 10.0, 0.9),
            scored(0.0, 9.0, 0.8),
            scored(1.0, 10.0, 0.7),
            scored(2.0, 12.0, 0.6),
        ];
        let cfg = NmsConfig {
            iou_threshold: 0.9999,
            ..NmsConfig::soft_gaussian()
        };
        let out = soft_nms(&props, &cfg).unwrap();
        for (o, p) in out.iter().zip(props.iter()) {
            assert_eq!(o.p_fused.unwrap().to_bits(), p.p_fused.unwrap().to_bits());
        }
    }

    #[test]
    fn equal_scores_break_ties_toward_earlier_spans() {
        let props = vec![scored(30.0, 40.0, 0.5), scored(0.0, 10.0, 0.5)];
        let out = soft_nms(&props, &NmsConfig::soft_gaussian()).unwrap();
        assert_eq!(out[0].interval.start(), 0.0);
        let out = greedy_nms(&props, &NmsConfig::greedy()).unwrap();
        assert_eq!(out[0].interval.start(), 0.0);
    }

    #[test]
    fn matches_the_index_oracle_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..60 {
            let props = random_proposals(&mut rng, 12);
            let cfg = NmsConfig {
                iou_threshold: rng.random_range(0.2..0.95),
                gaussian_width: rng.random_range(0.3..1.5),
                ..NmsConfig::soft_gaussian()
            };
            let got = soft_nms(&props, &cfg).unwrap();
            let want = soft_nms_oracle(&props, &cfg);
            assert_eq!(got.len(), want.len(), "case {case}");
            for (g, w) in got.iter().zip(want.iter()) {
                assert_eq!(g.interval.start(), w.0, "case {case}");
                assert_eq!(g.interval.end(), w.1, "case {case}");
                assert!((g.p_fused.unwrap() - w.2).abs() < 1e-12, "case {case}");
            }
        }
    }

    #[test]
    fn score_floor_prunes_decayed_proposals() {
        let props = vec![scored(0.0, 10.0, 1.0), scored(0.0, 10.0, 0.8)];
        let cfg = NmsConfig {
            score_floor: 0.5,
            ..NmsConfig::soft_gaussian()
        };
        let out = soft_nms(&props, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].p_fused, Some(1.0));
    }

    #[test]
    fn greedy_keeps_one_duplicate_and_all_disjoint() {
        let props = vec![
            scored(0.0, 10.0, 0.9),
            scored(0.0, 10.0, 0.8),
            scored(50.0, 60.0, 0.3),
        ];
        let out = greedy_nms(&props, &NmsConfig::greedy()).unwrap();
        assert_eq!(keys(&out), keys(&[scored(0.0, 10.0, 0.9), scored(50.0, 60.0, 0.3)]));
    }

    #[test]
    fn greedy_suppresses_the_middle_of_an_overlap_chain() {
        // A overlaps B at iou 0.5, B overlaps C at 0.5, A and C are disjoint.
        let props = vec![
            scored(0.0, 10.0, 0.9),
            scored(0.0, 20.0, 0.8),
            scored(10.0, 20.0, 0.7),
        ];
        let cfg = NmsConfig {
            iou_threshold: 0.45,
            ..NmsConfig::greedy()
        };
        let out = greedy_nms(&props, &cfg).unwrap();
        assert_eq!(
            keys(&out),
            keys(&[scored(0.0, 10.0, 0.9), scored(10.0, 20.0, 0.7)])
        );
    }

    #[test]
    fn suppression_requires_fused_scores() {
        let props = vec![Proposal::new(
            TemporalInterval::new(0.0, 5.0).unwrap(),
            0.5,
            0.5,
        )];
        assert!(soft_nms(&props, &NmsConfig::soft_gaussian()).is_err());
        assert!(greedy_nms(&props, &NmsConfig::greedy()).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let mut cfg = NmsConfig::soft_gaussian();
        cfg.iou_threshold = 1.0;
        assert!(cfg.validate().is_err());
        cfg = NmsConfig::soft_gaussian();
        cfg.gaussian_width = 0.0;
        assert!(cfg.validate().is_err());
        cfg = NmsConfig::soft_gaussian();
        cfg.score_floor = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_input_yields_empty_output() {
        assert!(soft_nms(&[], &NmsConfig::soft_gaussian()).unwrap().is_empty());
        assert!(greedy_nms(&[], &NmsConfig::greedy()).unwrap().is_empty());
    }

    #[test]
    fn final_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("final").join("v1.json");
        let props = vec![scored(0.0, 10.0, 0.9), scored(5.0, 25.0, 0.1 + 0.2)];
        let finals = finalize(&props).unwrap();
        write_final_json(&path, &finals).unwrap();
        let back = read_final_json(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(finals.iter()) {
            assert_eq!(a.t_s.to_bits(), b.t_s.to_bits());
            assert_eq!(a.t_e.to_bits(), b.t_e.to_bits());
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }

    #[test]
    fn final_file_rejects_invalid_spans() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"[{"t_s": 5.0, "t_e": 5.0, "score": 0.5}]"#).unwrap();
        assert!(read_final_json(&path).is_err());
    }

    proptest! {
        #[test]
        fn soft_never_increases_scores(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let props = random_proposals(&mut rng, 10);
            let cfg = NmsConfig {
                iou_threshold: rng.random_range(0.1..0.95),
                ..NmsConfig::soft_gaussian()
            };
            let out = soft_nms(&props, &cfg).unwrap();
            let original: std::collections::BTreeMap<(u64, u64), f64> = props
                .iter()
                .map(|p| {
                    (
                        (p.interval.start().to_bits(), p.interval.end().to_bits()),
                        p.p_fused.unwrap(),
                    )
                })
                .collect();
            for p in &out {
                let key = (p.interval.start().to_bits(), p.interval.end().to_bits());
                prop_assert!(p.p_fused.unwrap() <= original[&key] + 1e-15);
            }
        }

        #[test]
        fn input_order_does_not_matter(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
            let props = random_proposals(&mut rng, 10);
            let mut shuffled = props.clone();
            shuffled.reverse();
            let cfg = NmsConfig::soft_gaussian();
            prop_assert_eq!(
                keys(&soft_nms(&props, &cfg).unwrap()),
                keys(&soft_nms(&shuffled, &cfg).unwrap())
            );
        }

        #[test]
        fn greedy_survivors_are_pairwise_below_threshold(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5000));
            let props = random_proposals(&mut rng, 14);
            let cfg = NmsConfig {
                iou_threshold: rng.random_range(0.1..0.95),
                ..NmsConfig::greedy()
            };
            let out = greedy_nms(&props, &cfg).unwrap();
            for i in 0..out.len() {
                for j in (i + 1)..out.len() {
                    prop_assert!(iou(&out[i].interval, &out[j].interval) < cfg.iou_threshold);
                }
            }
        }
    }
}
