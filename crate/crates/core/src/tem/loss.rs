//! Weighted binary logistic loss over the three probability sequences.

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::tem::TemTargets;

/// Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Loss weights and thresholds for the boundary network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemLossConfig {
    /// Weight of the actionness term in the total.
    pub lambda: f64,
    /// Overlap above which a location counts as positive (strictly).
    pub theta_iop: f64,
    /// Nominal training window length.
    pub window_len: usize,
}

impl Default for TemLossConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            theta_iop: 0.5,
            window_len: 100,
        }
    }
}

impl TemLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid_argument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.theta_iop > 0.0 && self.theta_iop < 1.0) {
            return Err(Error::invalid_argument(format!(
                "theta_iop must be in (0, 1), got {}",
                self.theta_iop
            )));
        }
        if self.window_len == 0 {
            return Err(Error::invalid_argument("window_len must be positive"));
        }
        Ok(())
    }
}

/// Task order: actionness, start, end (matches the network channel order).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemLossResult {
    pub total: f64,
    pub per_task: [f64; 3],
    /// A task is degenerate in a window when it has no positives or no
    /// negatives; it then contributes zero loss and zero gradient.
    pub degenerate: [bool; 3],
}

impl TemLossResult {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }
}

/// Evaluates the window loss and its gradient with respect to the predicted
/// probabilities.
///
/// `probs` is `[3 x n]` (rows: actionness, start, end); only the first
/// `valid` columns participate, the rest are padding and receive zero
/// gradient. `targets` must hold exactly `valid` locations.
///
/// Per task with `l+` positives (`g > theta_iop`) and `l- = valid - l+`
/// negatives, the loss is the negated mean of
/// `a_pos * b_i * ln p_i + a_neg * (1 - b_i) * ln(1 - p_i)` with
/// inverse-frequency weights `a_pos = valid / l+`, `a_neg = valid / l-`, so a
/// constant prediction of 0.5 always costs `2 ln 2` regardless of class
/// imbalance. The total is `lambda * L_action + L_start + L_end`.
pub fn tem_loss(
    probs: &Matrix,
    targets: &TemTargets,
    valid: usize,
    cfg: &TemLossConfig,
) -> Result<(TemLossResult, Matrix)> {
    cfg.validate()?;
    if probs.rows() != 3 {
        return Err(Error::invalid_argument(format!(
            "expected 3 probability rows, got {}",
            probs.rows()
        )));
    }
    if valid == 0 || valid > probs.cols() {
        return Err(Error::invalid_argument(format!(
            "valid count {valid} outside window of {} columns",
            probs.cols()
        )));
    }
    if targets.len() != valid {
        return Err(Error::invalid_argument(format!(
            "targets hold {} locations but window has {valid} valid ones",
            targets.len()
        )));
    }

    let mut per_task = [0.0; 3];
    let mut degenerate = [false; 3];
    let mut grad = Matrix::zeros(3, probs.cols());
    let task_weights = [cfg.lambda, 1.0, 1.0];
    let task_targets = [&targets.g_action, &targets.g_start, &targets.g_end];

    for task in 0..3 {
        let g = task_targets[task];
        let l_pos = g.iter().filter(|v| **v > cfg.theta_iop).count();
        let l_neg = valid - l_pos;
        if l_pos == 0 || l_neg == 0 {
            degenerate[task] = true;
            continue;
        }
        let a_pos = valid as f64 / l_pos as f64;
        let a_neg = valid as f64 / l_neg as f64;
        let norm = 1.0 / valid as f64;

        let mut sum = 0.0;
        for i in 0..valid {
            let p = probs.get(task, i);
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let inside_clamp = p > PROB_CLAMP && p < 1.0 - PROB_CLAMP;
            if g[i] > cfg.theta_iop {
                sum += a_pos * pc.ln();
                if inside_clamp {
                    grad.set(task, i, -task_weights[task] * norm * a_pos / pc);
                }
            } else {
                sum += a_neg * (1.0 - pc).ln();
                if inside_clamp {
                    grad.set(task, i, task_weights[task] * norm * a_neg / (1.0 - pc));
                }
            }
        }
        per_task[task] = -norm * sum;
    }

    let total = cfg.lambda * per_task[0] + per_task[1] + per_task[2];
    Ok((
        TemLossResult {
            total,
            per_task,
            degenerate,
        },
        grad,
    ))
}
