//! Proposal generation stage: picks probable boundary locations, pairs them
//! into duration-valid proposals and summarizes each proposal's actionness
//! profile as a fixed-length interpolated feature.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervals::{linear_sample, TemporalInterval};
use crate::ioutil;
use crate::tem::ProbabilitySequences;

/// Default probability threshold for the high-score boundary rule.
pub const BOUNDARY_THRESHOLD: f64 = 0.9;

/// Samples per proposal region: boundary regions get 8 each, the center 16.
pub const BSP_BOUNDARY_SAMPLES: usize = 8;
pub const BSP_CENTER_SAMPLES: usize = 16;
pub const BSP_LEN: usize = 2 * BSP_BOUNDARY_SAMPLES + BSP_CENTER_SAMPLES;

/// Boundary regions extend `duration / REGION_DIVISOR` on each side of a
/// proposal endpoint.
const REGION_DIVISOR: f64 = 5.0;

/// Candidate start and end locations with their boundary probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBoundarySet {
    /// `(index, p_start)` pairs, indices strictly increasing.
    pub starts: Vec<(usize, f64)>,
    /// `(index, p_end)` pairs, indices strictly increasing.
    pub ends: Vec<(usize, f64)>,
}

impl CandidateBoundarySet {
    pub fn new(starts: Vec<(usize, f64)>, ends: Vec<(usize, f64)>) -> Result<Self> {
        for list in [&starts, &ends] {
            for pair in list.windows(2) {
                if pair[1].0 <= pair[0].0 {
                    return Err(Error::invalid_argument(
                        "candidate boundary indices must be strictly increasing",
                    ));
                }
            }
            for (_, p) in list {
                if !p.is_finite() || *p < 0.0 || *p > 1.0 {
                    return Err(Error::invalid_argument(format!(
                        "boundary probability {p} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { starts, ends })
    }

    /// Applies the selection rules to the start and end sequences.
    pub fn select(probs: &ProbabilitySequences, threshold: f64) -> Result<Self> {
        let pick = |p: &[f64]| -> Vec<(usize, f64)> {
            select_candidate_boundaries(p, threshold)
                .into_iter()
                .map(|i| (i, p[i]))
                .collect()
        };
        Self::new(pick(&probs.p_start), pick(&probs.p_end))
    }
}

/// One temporal proposal as it flows through the pipeline. `bsp` is filled by
/// [`construct_bsp`], `p_conf` by the confidence stage, `p_fused` and `g_iou`
/// by fusion and training-label assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub interval: TemporalInterval,
    pub p_start_at_ts: f64,
    pub p_end_at_te: f64,
    pub bsp: Vec<f64>,
    pub p_conf: Option<f64>,
    pub p_fused: Option<f64>,
    pub g_iou: Option<f64>,
}

impl Proposal {
    pub fn new(interval: TemporalInterval, p_start_at_ts: f64, p_end_at_te: f64) -> Self {
        Self {
            interval,
            p_start_at_ts,
            p_end_at_te,
            bsp: Vec::new(),
            p_conf: None,
            p_fused: None,
            g_iou: None,
        }
    }
}

/// Allowed proposal durations, in snippet-index units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationBounds {
    pub d_min: f64,
    pub d_max: f64,
}

impl DurationBounds {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self> {
        if !(d_min > 0.0) || !d_min.is_finite() || !d_max.is_finite() || d_max < d_min {
            return Err(Error::invalid_argument(format!(
                "duration bounds need 0 < d_min <= d_max, got [{d_min}, {d_max}]"
            )));
        }
        Ok(Self { d_min, d_max })
    }

    /// Minimum and maximum ground-truth durations over `annotations`, widened
    /// by `relaxation` (`d_min / relaxation`, `d_max * relaxation`).
    pub fn from_annotations(
        annotations: &[crate::tem::AnnotationSet],
        relaxation: f64,
    ) -> Result<Self> {
        if !(relaxation >= 1.0) || !relaxation.is_finite() {
            return Err(Error::invalid_argument(format!(
                "relaxation must be >= 1, got {relaxation}"
            )));
        }
        let mut d_min = f64::INFINITY;
        let mut d_max = f64::NEG_INFINITY;
        for ann in annotations {
            for inst in &ann.instances {
                d_min = d_min.min(inst.duration());
                d_max = d_max.max(inst.duration());
            }
        }
        if !d_min.is_finite() {
            return Err(Error::invalid_argument(
                "cannot derive duration bounds: no annotated instances",
            ));
        }
        Self::new(d_min / relaxation, d_max * relaxation)
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.d_min && d <= self.d_max
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ioutil::write_json_pretty(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b: DurationBounds = ioutil::read_json(path)?;
        Self::new(b.d_min, b.d_max)
    }
}

/// Selects boundary locations: index `n` qualifies when `p[n] > threshold`,
/// or when it is a strict local peak (`p[n] > p[n-1]` and `p[n] > p[n+1]`,
/// requiring both neighbors). Returned ascending, each index once.
pub fn select_candidate_boundaries(p: &[f64], threshold: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for n in 0..p.len() {
        let high = p[n] > threshold;
        let peak = n > 0 && n + 1 < p.len() && p[n] > p[n - 1] && p[n] > p[n + 1];
        if high || peak {
            out.push(n);
        }
    }
    out
}

/// Pairs every candidate start with every later candidate end whose distance
/// lies within the duration bounds. Output is sorted by `(t_s, t_e)`.
pub fn generate_candidate_proposals(
    bounds: &CandidateBoundarySet,
    db: &DurationBounds,
) -> Vec<Proposal> {
    let mut out = Vec::new();
    for &(ts, ps) in &bounds.starts {
        for &(te, pe) in &bounds.ends {
            let d = te as f64 - ts as f64;
            if d > 0.0 && db.contains(d) {
                let interval = TemporalInterval::new(ts as f64, te as f64)
                    .expect("positive duration checked");
                out.push(Proposal::new(interval, ps, pe));
            }
        }
    }
    out.sort_by(|a, b| {
        (a.interval.start(), a.interval.end())
            .partial_cmp(&(b.interval.start(), b.interval.end()))
            .expect("finite endpoints")
    });
    out.dedup_by(|a, b| a.interval == b.interval);
    out
}

/// Samples the actionness profile of a proposal: 8 points over the start
/// region `[t_s - d/5, t_s + d/5]`, 16 over the center `[t_s, t_e]` and 8
/// over the end region `[t_e - d/5, t_e + d/5]`, concatenated. Sample
/// positions outside the sequence are clamped to its edges.
pub fn construct_bsp(p_action: &[f64], interval: &TemporalInterval) -> Result<Vec<f64>> {
    let d = interval.duration();
    let ext = d / REGION_DIVISOR;
    let start_region = TemporalInterval::new(interval.start() - ext, interval.start() + ext)?;
    let end_region = TemporalInterval::new(interval.end() - ext, interval.end() + ext)?;

    let mut bsp = Vec::with_capacity(BSP_LEN);
    bsp.extend(linear_sample(p_action, &start_region, BSP_BOUNDARY_SAMPLES)?);
    bsp.extend(linear_sample(p_action, interval, BSP_CENTER_SAMPLES)?);
    bsp.extend(linear_sample(p_action, &end_region, BSP_BOUNDARY_SAMPLES)?);
    Ok(bsp)
}

/// Full per-video stage: select boundaries, pair them, attach BSP features.
pub fn build_proposals(
    probs: &ProbabilitySequences,
    threshold: f64,
    db: &DurationBounds,
) -> Result<Vec<Proposal>> {
    let candidates = CandidateBoundarySet::select(probs, threshold)?;
    let mut proposals = generate_candidate_proposals(&candidates, db);
    for prop in proposals.iter_mut() {
        prop.bsp = construct_bsp(&probs.p_action, &prop.interval)?;
    }
    Ok(proposals)
}

/// Wire format for proposal dumps: one record per proposal.
#[derive(Debug, Serialize, Deserialize)]
struct ProposalRecord {
    t_s: f64,
    t_e: f64,
    p_start: f64,
    p_end: f64,
    bsp: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    p_conf: Option<f64>,
}

/// Writes a per-video proposal dump as a JSON array of
/// `{t_s, t_e, p_start, p_end, bsp[32]}` records (`p_conf` included once the
/// confidence stage has filled it).
pub fn write_proposals_json(path: &Path, proposals: &[Proposal]) -> Result<()> {
    let records: Vec<ProposalRecord> = proposals
        .iter()
        .map(|p| ProposalRecord {
            t_s: p.interval.start(),
            t_e: p.interval.end(),
            p_start: p.p_start_at_ts,
            p_end: p.p_end_at_te,
            bsp: p.bsp.clone(),
            p_conf: p.p_conf,
        })
        .collect();
    ioutil::write_json(path, &records)
}

/// Reads a dump written by [`write_proposals_json`].
pub fn read_proposals_json(path: &Path) -> Result<Vec<Proposal>> {
    let records: Vec<ProposalRecord> = ioutil::read_json(path)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        if r.bsp.len() != BSP_LEN {
            return Err(Error::invalid_argument(format!(
                "{}: record {i} has bsp of length {}, expected {BSP_LEN}",
                path.display(),
                r.bsp.len()
            )));
        }
        if r.bsp.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}: record {i} bsp",
                path.display()
            )));
        }
        out.push(Proposal {
            interval: TemporalInterval::new(r.t_s, r.t_e)?,
            p_start_at_ts: r.p_start,
            p_end_at_te: r.p_end,
            bsp: r.bsp,
            p_conf: r.p_conf,
            p_fused: None,
            g_iou: None,
        });
    }
    Ok(out)
}
