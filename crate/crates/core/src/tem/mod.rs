//! Temporal evaluation stage: a 3-layer temporal conv network mapping a
//! feature sequence to per-location actionness, start and end probabilities.
//!
//! Output channel convention everywhere in this stage: row 0 = actionness,
//! row 1 = start, row 2 = end. The probability CSV columns follow the same
//! order after the index column.

mod loss;
mod targets;
mod train;

pub use loss::{tem_loss, TemLossConfig, TemLossResult, PROB_CLAMP};
pub use targets::assign_tem_targets;
pub use train::{build_tem_stack, train_tem, TemArch, TemTrainOutput};

use std::path::Path;

use crate::error::{Error, Result};
use crate::intervals::TemporalInterval;
use crate::ioutil;
use crate::nn::{LayerStack, Matrix};

/// Pre-extracted per-snippet feature vectors for one video.
///
/// `features` is `[l_s x D]`: one row per snippet location. All positions and
/// annotations downstream are expressed in snippet-index units; the
/// seconds-to-index conversion happens at manifest load.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub video_id: String,
    pub features: Matrix,
    /// Frames (or seconds) covered by one snippet; carried for provenance.
    pub snippet_interval: f64,
}

impl FeatureSequence {
    pub fn new(video_id: String, features: Matrix, snippet_interval: f64) -> Result<Self> {
        if features.rows() < 2 {
            return Err(Error::invalid_argument(format!(
                "feature sequence for {video_id} needs at least 2 snippets, got {}",
                features.rows()
            )));
        }
        if features.cols() == 0 {
            return Err(Error::invalid_argument(format!(
                "feature sequence for {video_id} has zero feature dimensions"
            )));
        }
        if let Some(bad) = features.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature sequence for {video_id} (value {bad})"
            )));
        }
        if !(snippet_interval > 0.0) || !snippet_interval.is_finite() {
            return Err(Error::invalid_argument(format!(
                "snippet interval must be positive and finite, got {snippet_interval}"
            )));
        }
        Ok(Self {
            video_id,
            features,
            snippet_interval,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Transposed window `[D x window_len]` starting at snippet `start`,
    /// zero-padded past the end of the sequence. Returns the input and the
    /// number of valid (unpadded) positions.
    pub fn window_input(&self, start: usize, window_len: usize) -> (Matrix, usize) {
        let d = self.feature_dim();
        let valid = self.len().saturating_sub(start).min(window_len);
        let mut m = Matrix::zeros(d, window_len);
        for t in 0..valid {
            let row = self.features.row(start + t);
            for (c, v) in row.iter().enumerate() {
                m.set(c, t, *v);
            }
        }
        (m, valid)
    }
}

/// Ground-truth action instances for one video, in snippet-index units.
#[derive(Debug, Clone)]
pub struct AnnotationSet {
    pub video_id: String,
    pub instances: Vec<TemporalInterval>,
}

impl AnnotationSet {
    pub fn new(video_id: String, instances: Vec<TemporalInterval>) -> Self {
        Self {
            video_id,
            instances,
        }
    }

    /// Checks every instance lies inside `[0, l_s)`.
    pub fn validate_within(&self, l_s: usize) -> Result<()> {
        for inst in &self.instances {
            if inst.start() < 0.0 || inst.end() >= l_s as f64 {
                return Err(Error::invalid_argument(format!(
                    "instance [{}, {}] of {} outside sequence of length {l_s}",
                    inst.start(),
                    inst.end(),
                    self.video_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-location target overlaps for one window: maximum IoP of the location
/// region against the action/start/end regions over all instances.
#[derive(Debug, Clone, PartialEq)]
pub struct TemTargets {
    pub g_action: Vec<f64>,
    pub g_start: Vec<f64>,
    pub g_end: Vec<f64>,
}

impl TemTargets {
    pub fn len(&self) -> usize {
        self.g_action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g_action.is_empty()
    }

    pub fn slice(&self, start: usize, count: usize) -> TemTargets {
        TemTargets {
            g_action: self.g_action[start..start + count].to_vec(),
            g_start: self.g_start[start..start + count].to_vec(),
            g_end: self.g_end[start..start + count].to_vec(),
        }
    }
}

/// The three per-location probability sequences for one video.
///
/// Values live in `[0, 1]`; they are strictly inside except where the
/// producing sigmoid saturates at 64-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilitySequences {
    pub p_action: Vec<f64>,
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
}

impl ProbabilitySequences {
    pub fn new(p_action: Vec<f64>, p_start: Vec<f64>, p_end: Vec<f64>) -> Result<Self> {
        if p_action.len() != p_start.len() || p_action.len() != p_end.len() {
            return Err(Error::invalid_argument(format!(
                "probability sequences must align: {} / {} / {}",
                p_action.len(),
                p_start.len(),
                p_end.len()
            )));
        }
        for v in p_action.iter().chain(&p_start).chain(&p_end) {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::invalid_argument(format!(
                    "probability {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            p_action,
            p_start,
            p_end,
        })
    }

    pub fn len(&self) -> usize {
        self.p_action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_action.is_empty()
    }
}

/// Runs the trained stack over a feature sequence in non-overlapping windows
/// of `window_len` (last window zero-padded) and returns the three
/// probability sequences trimmed back to the sequence length.
pub fn infer_probabilities(
    stack: &LayerStack,
    fs: &FeatureSequence,
    window_len: usize,
) -> Result<ProbabilitySequences> {
    if window_len == 0 {
        return Err(Error::invalid_argument("window length must be positive"));
    }
    let expected = stack
        .layers()
        .first()
        .map(|l| l.input_width())
        .unwrap_or(0);
    if expected != fs.feature_dim() {
        return Err(Error::invalid_argument(format!(
            "stack expects {expected} feature dimensions, {} has {}",
            fs.video_id,
            fs.feature_dim()
        )));
    }
    let mut p_action = Vec::with_capacity(fs.len());
    let mut p_start = Vec::with_capacity(fs.len());
    let mut p_end = Vec::with_capacity(fs.len());
    let mut start = 0;
    while start < fs.len() {
        let (input, valid) = fs.window_input(start, window_len);
        let out = stack.predict(&input)?;
        if out.rows() != 3 {
            return Err(Error::invalid_argument(format!(
                "probability stack must output 3 channels, got {}",
                out.rows()
            )));
        }
        for t in 0..valid {
            p_action.push(out.get(0, t));
            p_start.push(out.get(1, t));
            p_end.push(out.get(2, t));
        }
        start += window_len;
    }
    ProbabilitySequences::new(p_action, p_start, p_end)
}

/// Writes a probability CSV with columns `index,p_action,p_start,p_end`.
pub fn write_probabilities_csv(path: &Path, probs: &ProbabilitySequences) -> Result<()> {
    let mut body = String::from("index,p_action,p_start,p_end\n");
    for i in 0..probs.len() {
        body.push_str(&format!(
            "{i},{},{},{}\n",
            probs.p_action[i], probs.p_start[i], probs.p_end[i]
        ));
    }
    ioutil::write_atomic(path, body.as_bytes())
}

/// Reads a probability CSV written by [`write_probabilities_csv`].
pub fn read_probabilities_csv(path: &Path) -> Result<ProbabilitySequences> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: display.clone(),
            message: e.to_string(),
        })?;
    let mut p_action = Vec::new();
    let mut p_start = Vec::new();
    let mut p_end = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: display.clone(),
            message: e.to_string(),
        })?;
        if record.len() != 4 {
            return Err(Error::Csv {
                path: display.clone(),
                message: format!("row {row_idx}: expected 4 columns, got {}", record.len()),
            });
        }
        let parse = |field: usize| -> Result<f64> {
            record[field].parse::<f64>().map_err(|e| Error::Csv {
                path: display.clone(),
                message: format!("row {row_idx} column {field}: {e}"),
            })
        };
        let index = parse(0)?;
        if index as usize != row_idx {
            return Err(Error::Csv {
                path: display.clone(),
                message: format!("row {row_idx}: unexpected index {index}"),
            });
        }
        p_action.push(parse(1)?);
        p_start.push(parse(2)?);
        p_end.push(parse(3)?);
    }
    ProbabilitySequences::new(p_action, p_start, p_end)
}
