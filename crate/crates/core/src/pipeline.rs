//! End-to-end orchestration: configuration, the working-directory layout and
//! the pipeline stages from synthetic data generation through evaluation.
//!
//! Every stage reads its inputs from and writes its outputs to a fixed
//! layout under one working directory, so each is independently re-runnable
//! and the whole flow is reproducible from the seeds in the configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_split, read_manifest, Split};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, recall_vs_tiou, write_ar_an_csv, write_metrics_json, write_recall_tiou_csv,
    EvalConfig, MetricReport, ScoredVideo,
};
use crate::ioutil;
use crate::nn::{Checkpoint, OptimizerConfig, ScheduleStep};
use crate::pem::{label_proposals, sample_training_set, score_proposals, train_pem, PemConfig};
use crate::pgm::{build_proposals, read_proposals_json, write_proposals_json, DurationBounds};
use crate::postproc::{
    apply_nms, finalize, fuse_boundary_scores, fuse_scores, read_final_json, write_final_json,
    NmsConfig, NmsMode,
};
use crate::synth::{generate_synthetic_dataset, SynthConfig, SynthOutput};
use crate::tem::{
    infer_probabilities, read_probabilities_csv, train_tem, write_probabilities_csv, TemArch,
    TemLossConfig,
};

/// Boundary-model stage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemStageConfig {
    pub window_len: usize,
    pub hidden_filters: usize,
    pub kernel: usize,
    pub lambda: f64,
    pub theta_iop: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for TemStageConfig {
    fn default() -> Self {
        Self {
            window_len: 100,
            hidden_filters: 512,
            kernel: 3,
            lambda: 2.0,
            theta_iop: 0.5,
            optimizer: OptimizerConfig::adam(
                vec![
                    ScheduleStep {
                        epochs: 10,
                        learning_rate: 1e-3,
                    },
                    ScheduleStep {
                        epochs: 10,
                        learning_rate: 1e-4,
                    },
                ],
                16,
                2,
            ),
        }
    }
}

impl TemStageConfig {
    fn validate(&self) -> Result<()> {
        if self.window_len < 2 {
            return Err(Error::invalid_argument("tem.window_len must be at least 2"));
        }
        if self.hidden_filters == 0 {
            return Err(Error::invalid_argument("tem.hidden_filters must be positive"));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::invalid_argument("tem.kernel must be odd"));
        }
        TemLossConfig {
            lambda: self.lambda,
            theta_iop: self.theta_iop,
            window_len: self.window_len,
        }
        .validate()?;
        self.optimizer.validate()
    }

    fn arch(&self) -> TemArch {
        TemArch {
            hidden_filters: self.hidden_filters,
            kernel: self.kernel,
        }
    }

    fn loss_config(&self) -> TemLossConfig {
        TemLossConfig {
            lambda: self.lambda,
            theta_iop: self.theta_iop,
            window_len: self.window_len,
        }
    }
}

/// Proposal-generation stage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgmStageConfig {
    pub boundary_threshold: f64,
    /// Widens the training-set duration bounds: `d_min / r`, `d_max * r`.
    pub duration_relaxation: f64,
}

impl Default for PgmStageConfig {
    fn default() -> Self {
        Self {
            boundary_threshold: 0.9,
            duration_relaxation: 1.0,
        }
    }
}

impl PgmStageConfig {
    fn validate(&self) -> Result<()> {
        if !(self.boundary_threshold > 0.0 && self.boundary_threshold < 1.0) {
            return Err(Error::invalid_argument(
                "pgm.boundary_threshold must lie in (0, 1)",
            ));
        }
        if !(self.duration_relaxation >= 1.0) || !self.duration_relaxation.is_finite() {
            return Err(Error::invalid_argument(
                "pgm.duration_relaxation must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Confidence-model stage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PemStageConfig {
    pub pos_threshold: f64,
    pub neg_threshold: f64,
    pub neg_to_pos_ratio: f64,
    pub hidden_units: usize,
    pub sample_seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for PemStageConfig {
    fn default() -> Self {
        Self {
            pos_threshold: 0.7,
            neg_threshold: 0.3,
            neg_to_pos_ratio: 2.0,
            hidden_units: 512,
            sample_seed: 4,
            optimizer: OptimizerConfig::adam(
                vec![
                    ScheduleStep {
                        epochs: 10,
                        learning_rate: 1e-3,
                    },
                    ScheduleStep {
                        epochs: 10,
                        learning_rate: 1e-4,
                    },
                ],
                256,
                3,
            ),
        }
    }
}

impl PemStageConfig {
    fn to_pem_config(&self) -> PemConfig {
        PemConfig {
            pos_threshold: self.pos_threshold,
            neg_threshold: self.neg_threshold,
            neg_to_pos_ratio: self.neg_to_pos_ratio,
            hidden_units: self.hidden_units,
            seed: self.sample_seed,
        }
    }

    fn validate(&self) -> Result<()> {
        self.to_pem_config().validate()?;
        self.optimizer.validate()
    }
}

/// Fusion and suppression settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocStageConfig {
    pub mode: NmsMode,
    pub iou_threshold: f64,
    pub gaussian_width: f64,
    pub score_floor: f64,
    /// With confidence off, fused scores use boundary probabilities only and
    /// the scoring stage is skipped (the confidence-free ablation).
    pub use_confidence: bool,
}

impl Default for PostprocStageConfig {
    fn default() -> Self {
        let nms = NmsConfig::soft_gaussian();
        Self {
            mode: nms.mode,
            iou_threshold: nms.iou_threshold,
            gaussian_width: nms.gaussian_width,
            score_floor: nms.score_floor,
            use_confidence: true,
        }
    }
}

impl PostprocStageConfig {
    fn to_nms_config(&self) -> NmsConfig {
        NmsConfig {
            mode: self.mode,
            iou_threshold: self.iou_threshold,
            gaussian_width: self.gaussian_width,
            score_floor: self.score_floor,
        }
    }
}

/// Metric stage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStageConfig {
    pub tiou_thresholds: Vec<f64>,
    pub an_max: usize,
    /// Budgets reported in the recall-vs-tIoU table.
    pub report_budgets: Vec<usize>,
}

impl Default for EvalStageConfig {
    fn default() -> Self {
        let eval = EvalConfig::default();
        Self {
            tiou_thresholds: eval.tiou_thresholds,
            an_max: eval.an_max,
            report_budgets: vec![100, 1000],
        }
    }
}

impl EvalStageConfig {
    fn to_eval_config(&self) -> EvalConfig {
        EvalConfig {
            tiou_thresholds: self.tiou_thresholds.clone(),
            an_max: self.an_max,
        }
    }

    fn validate(&self) -> Result<()> {
        self.to_eval_config().validate()?;
        if self.report_budgets.is_empty() {
            return Err(Error::invalid_argument("eval.report_budgets is empty"));
        }
        Ok(())
    }
}

/// The whole pipeline's configuration, usually loaded from a TOML file with
/// one section per stage. Missing fields take these defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub tem: TemStageConfig,
    pub pgm: PgmStageConfig,
    pub pem: PemStageConfig,
    pub postproc: PostprocStageConfig,
    pub eval: EvalStageConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.tem.validate()?;
        self.pgm.validate()?;
        self.pem.validate()?;
        self.postproc.to_nms_config().validate()?;
        self.eval.validate()
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    if let Ok(table) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::Config(format!("override key {key:?} descends into a non-table value"))
            })?;
    }
    current.insert(parts[parts.len() - 1].to_string(), parse_toml_value(value));
    Ok(())
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Loads the configuration by layering: defaults, then the optional TOML
/// file, then `key=value` overrides (dotted keys address nested sections).
/// Tables merge field-wise at every level; unknown keys are rejected.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig> {
    let mut table = toml::Table::try_from(PipelineConfig::default())
        .map_err(|e| Error::Config(e.to_string()))?;
    if let Some(p) = path {
        let file: toml::Table = ioutil::read_to_string(p)?
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        merge_tables(&mut table, file);
    }
    for entry in overrides {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {entry:?} is not of the form key=value"))
        })?;
        apply_override(&mut table, key.trim(), value.trim())?;
    }
    let cfg: PipelineConfig = table
        .try_into()
        .map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// The fixed artifact layout under one working directory.
#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest_path(&self, split: Split) -> PathBuf {
        self.data_dir().join(format!("{split}.json"))
    }

    pub fn tem_checkpoint_path(&self) -> PathBuf {
        self.root.join("checkpoints").join("tem.json")
    }

    pub fn pem_checkpoint_path(&self) -> PathBuf {
        self.root.join("checkpoints").join("pem.json")
    }

    pub fn bounds_path(&self) -> PathBuf {
        self.root.join("bounds.json")
    }

    pub fn probabilities_path(&self, split: Split, video_id: &str) -> PathBuf {
        self.root
            .join("probabilities")
            .join(split.as_str())
            .join(format!("{video_id}.csv"))
    }

    pub fn proposals_path(&self, split: Split, video_id: &str) -> PathBuf {
        self.root
            .join("proposals")
            .join(split.as_str())
            .join(format!("{video_id}.json"))
    }

    pub fn scored_path(&self, split: Split, video_id: &str) -> PathBuf {
        self.root
            .join("scored")
            .join(split.as_str())
            .join(format!("{video_id}.json"))
    }

    pub fn final_path(&self, split: Split, video_id: &str) -> PathBuf {
        self.root
            .join("final")
            .join(split.as_str())
            .join(format!("{video_id}.json"))
    }

    pub fn metrics_dir(&self, split: Split) -> PathBuf {
        self.root.join("metrics").join(split.as_str())
    }
}

fn tag<T>(stage: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::stage(stage, other),
    })
}

/// Generates the synthetic dataset into `<workdir>/data`.
pub fn stage_synth(cfg: &PipelineConfig, work: &Workdir) -> Result<SynthOutput> {
    tag(
        "synth",
        generate_synthetic_dataset(&cfg.synth, &work.data_dir()),
    )
}

/// Boundary-model training summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemSummary {
    pub videos: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub degenerate_task_windows: u64,
}

/// Trains the boundary model on the train split; writes the checkpoint and
/// the duration bounds derived from the training annotations.
pub fn stage_train_tem(cfg: &PipelineConfig, work: &Workdir) -> Result<TemSummary> {
    tag("train-tem", (|| {
        let dataset = load_split(&work.manifest_path(Split::Train))?;
        let out = train_tem(
            &dataset,
            &cfg.tem.arch(),
            &cfg.tem.optimizer,
            &cfg.tem.loss_config(),
        )?;
        let feature_dim = dataset[0].0.feature_dim();
        Checkpoint::new(out.stack)
            .with_meta("stage", "tem".into())
            .with_meta("feature_dim", feature_dim.into())
            .with_meta("window_len", cfg.tem.window_len.into())
            .save(&work.tem_checkpoint_path())?;

        let annotations: Vec<_> = dataset.iter().map(|(_, a)| a.clone()).collect();
        DurationBounds::from_annotations(&annotations, cfg.pgm.duration_relaxation)?
            .save(&work.bounds_path())?;
        Ok(TemSummary {
            videos: dataset.len(),
            epochs: out.history.len(),
            final_loss: *out.history.last().unwrap_or(&f64::NAN),
            degenerate_task_windows: out.degenerate_task_windows,
        })
    })())
}

/// Runs boundary inference over a split, one probability CSV per video.
pub fn stage_infer_tem(cfg: &PipelineConfig, work: &Workdir, split: Split) -> Result<usize> {
    let _ = cfg;
    tag("infer-tem", (|| {
        let checkpoint = Checkpoint::load(&work.tem_checkpoint_path())?;
        let window_len = checkpoint.meta_u64("window_len")? as usize;
        let feature_dim = checkpoint.meta_u64("feature_dim")? as usize;
        let dataset = load_split(&work.manifest_path(split))?;
        for (fs, _) in &dataset {
            if fs.feature_dim() != feature_dim {
                return Err(Error::invalid_argument(format!(
                    "video {:?} has {} feature dimensions but the checkpoint was trained on {}",
                    fs.video_id,
                    fs.feature_dim(),
                    feature_dim
                )));
            }
            let probs = infer_probabilities(&checkpoint.stack, fs, window_len)?;
            write_probabilities_csv(&work.probabilities_path(split, &fs.video_id), &probs)?;
        }
        Ok(dataset.len())
    })())
}

/// Proposal-generation summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProposeSummary {
    pub videos: usize,
    pub proposals: usize,
}

/// Builds candidate proposals with BSP features for a split.
pub fn stage_propose(cfg: &PipelineConfig, work: &Workdir, split: Split) -> Result<ProposeSummary> {
    tag("propose", (|| {
        let bounds = DurationBounds::load(&work.bounds_path())?;
        let manifest = read_manifest(&work.manifest_path(split))?;
        let mut total = 0;
        for entry in &manifest.videos {
            let probs = read_probabilities_csv(&work.probabilities_path(split, &entry.video_id))?;
            let props = build_proposals(&probs, cfg.pgm.boundary_threshold, &bounds)?;
            total += props.len();
            write_proposals_json(&work.proposals_path(split, &entry.video_id), &props)?;
        }
        Ok(ProposeSummary {
            videos: manifest.videos.len(),
            proposals: total,
        })
    })())
}

/// Confidence-model training summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PemSummary {
    pub videos: usize,
    pub labeled: usize,
    pub positives: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub final_mse: f64,
}

/// Labels the train split's proposals against ground truth, balances the
/// sample set and trains the confidence model.
pub fn stage_train_pem(cfg: &PipelineConfig, work: &Workdir) -> Result<PemSummary> {
    tag("train-pem", (|| {
        let dataset = load_split(&work.manifest_path(Split::Train))?;
        let mut pool = Vec::new();
        for (fs, ann) in &dataset {
            let props = read_proposals_json(&work.proposals_path(Split::Train, &fs.video_id))?;
            pool.extend(label_proposals(&props, ann)?);
        }
        let pem_cfg = cfg.pem.to_pem_config();
        let balanced = sample_training_set(&pool, &pem_cfg)?;
        if balanced.no_positives {
            return Err(Error::InvalidState(
                "no proposal overlaps ground truth above the positive threshold; \
                 cannot train the confidence model"
                    .into(),
            ));
        }
        let out = train_pem(&balanced.samples, &cfg.pem.optimizer, &pem_cfg)?;
        Checkpoint::new(out.stack)
            .with_meta("stage", "pem".into())
            .with_meta("hidden_units", cfg.pem.hidden_units.into())
            .save(&work.pem_checkpoint_path())?;
        Ok(PemSummary {
            videos: dataset.len(),
            labeled: pool.len(),
            positives: balanced.positives,
            negatives: balanced.negatives,
            epochs: out.history.len(),
            final_mse: *out.history.last().unwrap_or(&f64::NAN),
        })
    })())
}

/// Attaches confidence scores to a split's proposals.
pub fn stage_score(cfg: &PipelineConfig, work: &Workdir, split: Split) -> Result<usize> {
    let _ = cfg;
    tag("score", (|| {
        let checkpoint = Checkpoint::load(&work.pem_checkpoint_path())?;
        let manifest = read_manifest(&work.manifest_path(split))?;
        for entry in &manifest.videos {
            let mut props = read_proposals_json(&work.proposals_path(split, &entry.video_id))?;
            score_proposals(&checkpoint.stack, &mut props)?;
            write_proposals_json(&work.scored_path(split, &entry.video_id), &props)?;
        }
        Ok(manifest.videos.len())
    })())
}

/// Fuses scores and suppresses redundant proposals, writing the final
/// per-video files. Reads scored proposals, or raw ones in the
/// confidence-free ablation.
pub fn stage_nms(cfg: &PipelineConfig, work: &Workdir, split: Split) -> Result<usize> {
    tag("nms", (|| {
        let manifest = read_manifest(&work.manifest_path(split))?;
        let nms_cfg = cfg.postproc.to_nms_config();
        for entry in &manifest.videos {
            let mut props = if cfg.postproc.use_confidence {
                read_proposals_json(&work.scored_path(split, &entry.video_id))?
            } else {
                read_proposals_json(&work.proposals_path(split, &entry.video_id))?
            };
            if cfg.postproc.use_confidence {
                fuse_scores(&mut props)?;
            } else {
                fuse_boundary_scores(&mut props);
            }
            let kept = apply_nms(&props, &nms_cfg)?;
            write_final_json(
                &work.final_path(split, &entry.video_id),
                &finalize(&kept)?,
            )?;
        }
        Ok(manifest.videos.len())
    })())
}

/// Evaluates a split's final proposals and writes the metric artifacts.
pub fn stage_eval(cfg: &PipelineConfig, work: &Workdir, split: Split) -> Result<MetricReport> {
    tag("eval", (|| {
        let dataset = load_split(&work.manifest_path(split))?;
        let mut videos = Vec::with_capacity(dataset.len());
        for (fs, ann) in dataset {
            let proposals = read_final_json(&work.final_path(split, &fs.video_id))?;
            videos.push(ScoredVideo {
                annotations: ann,
                proposals,
            });
        }
        let eval_cfg = cfg.eval.to_eval_config();
        let report = evaluate(&videos, &eval_cfg)?;
        let dir = work.metrics_dir(split);
        write_metrics_json(&dir.join("metrics.json"), &report)?;
        write_ar_an_csv(&dir.join("ar_an.csv"), &report.curve)?;
        let table = recall_vs_tiou(&videos, &eval_cfg, &cfg.eval.report_budgets)?;
        write_recall_tiou_csv(
            &dir.join("recall_tiou.csv"),
            &eval_cfg,
            &cfg.eval.report_budgets,
            &table,
        )?;
        Ok(report)
    })())
}

/// Metric reports from a full pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunAllSummary {
    pub val: MetricReport,
    pub test: MetricReport,
}

/// Runs every stage in order: generate data, train the boundary model,
/// infer and propose on all splits, train the confidence model, then score,
/// suppress and evaluate the val and test splits.
pub fn run_all(cfg: &PipelineConfig, work: &Workdir) -> Result<RunAllSummary> {
    stage_synth(cfg, work)?;
    stage_train_tem(cfg, work)?;
    for split in Split::ALL {
        stage_infer_tem(cfg, work, split)?;
        stage_propose(cfg, work, split)?;
    }
    if cfg.postproc.use_confidence {
        stage_train_pem(cfg, work)?;
    }
    for split in [Split::Val, Split::Test] {
        if cfg.postproc.use_confidence {
            stage_score(cfg, work, split)?;
        }
        stage_nms(cfg, work, split)?;
        stage_eval(cfg, work, split)?;
    }
    Ok(RunAllSummary {
        val: read_metrics_json_for(work, Split::Val)?,
        test: read_metrics_json_for(work, Split::Test)?,
    })
}

fn read_metrics_json_for(work: &Workdir, split: Split) -> Result<MetricReport> {
    crate::eval::read_metrics_json(&work.metrics_dir(split).join("metrics.json"))
}
