//! Proposal evaluation stage: labels proposals with their best ground-truth
//! overlap, balances a training set, trains the confidence regressor and
//! scores proposals.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::intervals::iou;
use crate::nn::{Activation, Layer, LayerStack, Matrix, Optimizer, OptimizerConfig};
use crate::pgm::{Proposal, BSP_LEN};
use crate::tem::AnnotationSet;

/// One confidence-regression training example.
#[derive(Debug, Clone, PartialEq)]
pub struct PemSample {
    pub bsp: Vec<f64>,
    /// Maximum IoU against all ground-truth instances; 0 without ground truth.
    pub g_iou: f64,
}

/// Labeling thresholds, balancing ratio and regressor width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PemConfig {
    /// Samples with `g_iou` strictly above this are positives.
    pub pos_threshold: f64,
    /// Samples with `g_iou` strictly below this are negatives.
    pub neg_threshold: f64,
    /// Kept negatives per positive (floor of ratio x positives).
    pub neg_to_pos_ratio: f64,
    pub hidden_units: usize,
    pub seed: u64,
}

impl Default for PemConfig {
    fn default() -> Self {
        Self {
            pos_threshold: 0.7,
            neg_threshold: 0.3,
            neg_to_pos_ratio: 2.0,
            hidden_units: 512,
            seed: 0,
        }
    }
}

impl PemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.neg_threshold >= 0.0
            && self.neg_threshold < self.pos_threshold
            && self.pos_threshold <= 1.0)
        {
            return Err(Error::invalid_argument(format!(
                "thresholds need 0 <= neg < pos <= 1, got neg {} pos {}",
                self.neg_threshold, self.pos_threshold
            )));
        }
        if !(self.neg_to_pos_ratio > 0.0) || !self.neg_to_pos_ratio.is_finite() {
            return Err(Error::invalid_argument(format!(
                "neg_to_pos_ratio must be positive, got {}",
                self.neg_to_pos_ratio
            )));
        }
        if self.hidden_units == 0 {
            return Err(Error::invalid_argument("hidden_units must be positive"));
        }
        Ok(())
    }
}

/// Labels each proposal with its maximum IoU against ground truth.
pub fn label_proposals(props: &[Proposal], gt: &AnnotationSet) -> Result<Vec<PemSample>> {
    let mut out = Vec::with_capacity(props.len());
    for (i, p) in props.iter().enumerate() {
        if p.bsp.len() != BSP_LEN {
            return Err(Error::invalid_argument(format!(
                "proposal {i} has bsp of length {}, expected {BSP_LEN}",
                p.bsp.len()
            )));
        }
        let g_iou = gt
            .instances
            .iter()
            .map(|inst| iou(&p.interval, inst))
            .fold(0.0, f64::max);
        out.push(PemSample {
            bsp: p.bsp.clone(),
            g_iou,
        });
    }
    Ok(out)
}

/// A balanced training set: all positives plus a seeded uniform subsample of
/// negatives.
#[derive(Debug, Clone)]
pub struct BalancedSet {
    pub samples: Vec<PemSample>,
    pub positives: usize,
    pub negatives: usize,
    /// Set when the input had no positives; the result is then empty and
    /// training should be skipped.
    pub no_positives: bool,
}

/// Keeps every positive (`g_iou > pos_threshold`) and uniformly subsamples
/// negatives (`g_iou < neg_threshold`) without replacement down to
/// `floor(ratio x positives)`. Mid-range samples are discarded. Deterministic
/// under `cfg.seed`.
pub fn sample_training_set(samples: &[PemSample], cfg: &PemConfig) -> Result<BalancedSet> {
    cfg.validate()?;
    let positives: Vec<&PemSample> = samples
        .iter()
        .filter(|s| s.g_iou > cfg.pos_threshold)
        .collect();
    if positives.is_empty() {
        return Ok(BalancedSet {
            samples: Vec::new(),
            positives: 0,
            negatives: 0,
            no_positives: true,
        });
    }
    let negatives: Vec<&PemSample> = samples
        .iter()
        .filter(|s| s.g_iou < cfg.neg_threshold)
        .collect();
    let want = ((cfg.neg_to_pos_ratio * positives.len() as f64).floor() as usize)
        .min(negatives.len());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chosen = rand::seq::index::sample(&mut rng, negatives.len(), want).into_vec();
    chosen.sort_unstable();

    let mut out: Vec<PemSample> = positives.iter().map(|s| (*s).clone()).collect();
    out.extend(chosen.iter().map(|&i| negatives[i].clone()));
    Ok(BalancedSet {
        positives: positives.len(),
        negatives: want,
        samples: out,
        no_positives: false,
    })
}

/// Builds the confidence regressor: `dense(hidden, ReLU) -> dense(1, sigmoid)`
/// over the 32-dim BSP input.
pub fn build_pem_stack(cfg: &PemConfig, seed: u64) -> Result<LayerStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LayerStack::new(vec![
        Layer::dense(BSP_LEN, cfg.hidden_units, Activation::Relu, &mut rng)?,
        Layer::dense(cfg.hidden_units, 1, Activation::Sigmoid, &mut rng)?,
    ])
}

/// Mean squared error of predictions (`[n x 1]`) against labels, with its
/// gradient with respect to the predictions.
pub fn pem_loss(pred: &Matrix, labels: &[f64]) -> Result<(f64, Matrix)> {
    if pred.cols() != 1 || pred.rows() != labels.len() {
        return Err(Error::invalid_argument(format!(
            "prediction shape {}x{} does not match {} labels",
            pred.rows(),
            pred.cols(),
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(pred.rows(), 1);
    let mut loss = 0.0;
    for (i, g) in labels.iter().enumerate() {
        let d = pred.get(i, 0) - g;
        loss += d * d / n;
        grad.set(i, 0, 2.0 * d / n);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct PemTrainOutput {
    pub stack: LayerStack,
    /// Mean squared error per epoch, measured as the epoch is traversed.
    pub history: Vec<f64>,
}

fn batch_matrix(samples: &[&PemSample]) -> Matrix {
    let mut m = Matrix::zeros(samples.len(), BSP_LEN);
    for (r, s) in samples.iter().enumerate() {
        for (c, v) in s.bsp.iter().enumerate() {
            m.set(r, c, *v);
        }
    }
    m
}

/// Trains the confidence regressor on a balanced sample set by minimizing
/// mean squared error. Deterministic given the optimizer seed.
pub fn train_pem(
    samples: &[PemSample],
    opt: &OptimizerConfig,
    cfg: &PemConfig,
) -> Result<PemTrainOutput> {
    opt.validate()?;
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid_argument("confidence training set is empty"));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.bsp.len() != BSP_LEN {
            return Err(Error::invalid_argument(format!(
                "sample {i} has bsp of length {}, expected {BSP_LEN}",
                s.bsp.len()
            )));
        }
    }

    let mut stack = build_pem_stack(cfg, opt.seed)?;
    let mut optimizer = Optimizer::new(
        opt.algorithm,
        opt.learning_rate_for_epoch(0),
        stack.param_count(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(opt.total_epochs());

    for epoch in 0..opt.total_epochs() {
        optimizer.set_learning_rate(opt.learning_rate_for_epoch(epoch));
        order.shuffle(&mut rng);
        let mut sq_sum = 0.0;
        for batch in order.chunks(opt.batch_size) {
            let members: Vec<&PemSample> = batch.iter().map(|&i| &samples[i]).collect();
            let labels: Vec<f64> = members.iter().map(|s| s.g_iou).collect();
            let input = batch_matrix(&members);
            let pred = stack.forward(&input)?;
            let (loss, grad) = pem_loss(&pred, &labels)?;
            sq_sum += loss * labels.len() as f64;
            let grads = stack.backward(&grad)?;
            optimizer.step(&mut stack, &grads.wrt_params)?;
        }
        history.push(sq_sum / samples.len() as f64);
    }
    Ok(PemTrainOutput { stack, history })
}

/// Scores proposals in place: runs the regressor over their BSP features and
/// stores `p_conf`. Order is preserved; scoring is independent per proposal.
pub fn score_proposals(stack: &LayerStack, props: &mut [Proposal]) -> Result<()> {
    if props.is_empty() {
        return Ok(());
    }
    for (i, p) in props.iter().enumerate() {
        if p.bsp.len() != BSP_LEN {
            return Err(Error::invalid_argument(format!(
                "proposal {i} has bsp of length {}, expected {BSP_LEN}",
                p.bsp.len()
            )));
        }
    }
    let mut input = Matrix::zeros(props.len(), BSP_LEN);
    for (r, p) in props.iter().enumerate() {
        for (c, v) in p.bsp.iter().enumerate() {
            input.set(r, c, *v);
        }
    }
    let pred = stack.predict(&input)?;
    if pred.cols() != 1 {
        return Err(Error::invalid_argument(format!(
            "confidence stack must output one value per proposal, got {} columns",
            pred.cols()
        )));
    }
    for (r, p) in props.iter_mut().enumerate() {
        p.p_conf = Some(pred.get(r, 0));
    }
    Ok(())
}
