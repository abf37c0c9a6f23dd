//! Recall-based proposal quality metrics: recall at a tIoU threshold,
//! average recall against the per-video proposal budget (AR@AN), and the
//! area under that curve.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ioutil;
use crate::postproc::FinalProposal;
use crate::tem::AnnotationSet;

/// Metric parameters: the tIoU threshold grid and the largest per-video
/// proposal budget on the AR curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tiou_thresholds: Vec<f64>,
    pub an_max: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tiou_thresholds: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            an_max: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiou_thresholds.is_empty() {
            return Err(Error::invalid_argument("tiou_thresholds is empty"));
        }
        for w in self.tiou_thresholds.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::invalid_argument(
                    "tiou_thresholds must be strictly increasing",
                ));
            }
        }
        for &t in &self.tiou_thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid_argument(format!(
                    "tiou threshold {t} outside (0, 1]"
                )));
            }
        }
        if self.an_max == 0 {
            return Err(Error::invalid_argument("an_max must be positive"));
        }
        Ok(())
    }
}

/// One video's evaluation input: its ground truth and its scored proposals.
#[derive(Debug, Clone)]
pub struct ScoredVideo {
    pub annotations: AnnotationSet,
    pub proposals: Vec<FinalProposal>,
}

/// IoU between a final proposal and a ground-truth instance. Proposals with
/// a non-positive span never match.
fn span_iou(p: &FinalProposal, g_start: f64, g_end: f64) -> f64 {
    if !(p.t_e > p.t_s) {
        return 0.0;
    }
    let inter = p.t_e.min(g_end) - p.t_s.max(g_start);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = (p.t_e - p.t_s) + (g_end - g_start) - inter;
    inter / union
}

fn sorted_by_score(proposals: &[FinalProposal]) -> Vec<FinalProposal> {
    let mut out = proposals.to_vec();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.t_s.total_cmp(&b.t_s))
            .then(a.t_e.total_cmp(&b.t_e))
    });
    out
}

/// Fraction of ground-truth instances matched (`iou >= tiou`) by some
/// proposal among the top `n` by score. Each instance counts once; one
/// proposal may cover several instances. `None` when the video has no
/// ground truth (recall is undefined there).
pub fn recall_at(
    proposals: &[FinalProposal],
    gt: &AnnotationSet,
    n: usize,
    tiou: f64,
) -> Option<f64> {
    if gt.instances.is_empty() {
        return None;
    }
    let sorted = sorted_by_score(proposals);
    let top = &sorted[..n.min(sorted.len())];
    let matched = gt
        .instances
        .iter()
        .filter(|inst| {
            top.iter()
                .any(|p| span_iou(p, inst.start(), inst.end()) >= tiou)
        })
        .count();
    Some(matched as f64 / gt.instances.len() as f64)
}

/// The AR@AN curve: average recall at each per-video proposal budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArCurve {
    pub an: Vec<usize>,
    pub ar: Vec<f64>,
}

/// For every budget `an = 1..=an_max`, the mean over annotated videos of the
/// mean over tIoU thresholds of `recall_at`. Videos without ground truth are
/// skipped; a dataset with none at all is an error.
pub fn average_recall_at_an(videos: &[ScoredVideo], cfg: &EvalConfig) -> Result<ArCurve> {
    cfg.validate()?;
    let annotated: Vec<&ScoredVideo> = videos
        .iter()
        .filter(|v| !v.annotations.instances.is_empty())
        .collect();
    if annotated.is_empty() {
        return Err(Error::invalid_argument(
            "no annotated videos to evaluate; recall is undefined everywhere",
        ));
    }

    // min_ranks[video][threshold][instance]: smallest budget whose top set
    // matches the instance (usize::MAX when no proposal ever does).
    let mut min_ranks: Vec<Vec<Vec<usize>>> = Vec::with_capacity(annotated.len());
    for v in &annotated {
        let sorted = sorted_by_score(&v.proposals);
        let per_threshold = cfg
            .tiou_thresholds
            .iter()
            .map(|&tiou| {
                v.annotations
                    .instances
                    .iter()
                    .map(|inst| {
                        sorted
                            .iter()
                            .position(|p| span_iou(p, inst.start(), inst.end()) >= tiou)
                            .map_or(usize::MAX, |i| i + 1)
                    })
                    .collect()
            })
            .collect();
        min_ranks.push(per_threshold);
    }

    let mut ar = Vec::with_capacity(cfg.an_max);
    for an in 1..=cfg.an_max {
        let mut video_sum = 0.0;
        for (v, per_threshold) in annotated.iter().zip(min_ranks.iter()) {
            let gt_count = v.annotations.instances.len() as f64;
            let mut threshold_sum = 0.0;
            for ranks in per_threshold {
                let matched = ranks.iter().filter(|&&r| r <= an).count();
                threshold_sum += matched as f64 / gt_count;
            }
            video_sum += threshold_sum / cfg.tiou_thresholds.len() as f64;
        }
        ar.push(video_sum / annotated.len() as f64);
    }
    Ok(ArCurve {
        an: (1..=cfg.an_max).collect(),
        ar,
    })
}

/// Area under the AR@AN curve as a percentage of its ideal value:
/// `100 * trapezoid(ar over an) / (an span)`.
pub fn auc_ar_an(curve: &ArCurve) -> Result<f64> {
    if curve.an.len() != curve.ar.len() {
        return Err(Error::invalid_argument(format!(
            "curve has {} budgets but {} recall values",
            curve.an.len(),
            curve.ar.len()
        )));
    }
    if curve.an.len() < 2 {
        return Err(Error::invalid_argument(
            "area under the curve needs at least two points",
        ));
    }
    for w in curve.an.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::invalid_argument("budgets must be strictly increasing"));
        }
    }
    let mut integral = 0.0;
    for i in 0..curve.an.len() - 1 {
        let width = (curve.an[i + 1] - curve.an[i]) as f64;
        integral += width * (curve.ar[i] + curve.ar[i + 1]) / 2.0;
    }
    let span = (curve.an[curve.an.len() - 1] - curve.an[0]) as f64;
    Ok(100.0 * integral / span)
}

/// Mean recall per tIoU threshold at each fixed budget; rows follow
/// `cfg.tiou_thresholds`, columns follow `budgets`.
pub fn recall_vs_tiou(
    videos: &[ScoredVideo],
    cfg: &EvalConfig,
    budgets: &[usize],
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if budgets.is_empty() {
        return Err(Error::invalid_argument("no budgets given"));
    }
    let annotated: Vec<&ScoredVideo> = videos
        .iter()
        .filter(|v| !v.annotations.instances.is_empty())
        .collect();
    if annotated.is_empty() {
        return Err(Error::invalid_argument(
            "no annotated videos to evaluate; recall is undefined everywhere",
        ));
    }
    let mut table = Vec::with_capacity(cfg.tiou_thresholds.len());
    for &tiou in &cfg.tiou_thresholds {
        let mut row = Vec::with_capacity(budgets.len());
        for &n in budgets {
            let sum: f64 = annotated
                .iter()
                .map(|v| recall_at(&v.proposals, &v.annotations, n, tiou).unwrap())
                .sum();
            row.push(sum / annotated.len() as f64);
        }
        table.push(row);
    }
    Ok(table)
}

/// Summary of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub videos: usize,
    pub videos_without_ground_truth: usize,
    pub tiou_thresholds: Vec<f64>,
    pub auc: f64,
    /// Average recall at a few snapshot budgets.
    pub ar_at_an: BTreeMap<usize, f64>,
    pub curve: ArCurve,
}

/// Snapshot budgets reported in [`MetricReport::ar_at_an`] (those within
/// the configured `an_max`).
const SNAPSHOT_BUDGETS: [usize; 6] = [1, 5, 10, 50, 100, 1000];

/// Computes the AR@AN curve, its area, and snapshot recalls for a dataset.
pub fn evaluate(videos: &[ScoredVideo], cfg: &EvalConfig) -> Result<MetricReport> {
    let curve = average_recall_at_an(videos, cfg)?;
    let auc = auc_ar_an(&curve)?;
    let mut ar_at_an = BTreeMap::new();
    for &an in &SNAPSHOT_BUDGETS {
        if an <= cfg.an_max {
            ar_at_an.insert(an, curve.ar[an - 1]);
        }
    }
    Ok(MetricReport {
        videos: videos.len(),
        videos_without_ground_truth: videos
            .iter()
            .filter(|v| v.annotations.instances.is_empty())
            .count(),
        tiou_thresholds: cfg.tiou_thresholds.clone(),
        auc,
        ar_at_an,
        curve,
    })
}

pub fn write_metrics_json(path: &Path, report: &MetricReport) -> Result<()> {
    ioutil::write_json_pretty(path, report)
}

pub fn read_metrics_json(path: &Path) -> Result<MetricReport> {
    ioutil::read_json(path)
}

/// Plot-ready `an,ar` pairs.
pub fn write_ar_an_csv(path: &Path, curve: &ArCurve) -> Result<()> {
    let mut body = String::from("an,ar\n");
    for (an, ar) in curve.an.iter().zip(curve.ar.iter()) {
        body.push_str(&format!("{an},{ar}\n"));
    }
    ioutil::write_atomic(path, body.as_bytes())
}

/// Plot-ready recall-vs-tIoU table, one column per budget.
pub fn write_recall_tiou_csv(
    path: &Path,
    cfg: &EvalConfig,
    budgets: &[usize],
    table: &[Vec<f64>],
) -> Result<()> {
    if table.len() != cfg.tiou_thresholds.len() {
        return Err(Error::invalid_argument(format!(
            "table has {} rows for {} thresholds",
            table.len(),
            cfg.tiou_thresholds.len()
        )));
    }
    let mut body = String::from("tiou");
    for b in budgets {
        body.push_str(&format!(",recall_at_{b}"));
    }
    body.push('\n');
    for (tiou, row) in cfg.tiou_thresholds.iter().zip(table.iter()) {
        if row.len() != budgets.len() {
            return Err(Error::invalid_argument(format!(
                "row for threshold {tiou} has {} columns for {} budgets",
                row.len(),
                budgets.len()
            )));
        }
        body.push_str(&format!("{tiou}"));
        for v in row {
            body.push_str(&format!(",{v}"));
        }
        body.push('\n');
    }
    ioutil::write_atomic(path, body.as_bytes())
}
