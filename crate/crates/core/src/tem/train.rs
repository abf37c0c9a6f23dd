//! Training loop for the boundary-probability network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, LayerStack, Matrix, Optimizer, OptimizerConfig};
use crate::tem::{assign_tem_targets, tem_loss, AnnotationSet, FeatureSequence, TemLossConfig, TemTargets};

/// Network shape: `Conv(hidden, kernel, ReLU) -> Conv(hidden, kernel, ReLU)
/// -> Conv(3, 1, Sigmoid)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemArch {
    pub hidden_filters: usize,
    pub kernel: usize,
}

impl Default for TemArch {
    fn default() -> Self {
        Self {
            hidden_filters: 512,
            kernel: 3,
        }
    }
}

/// Builds an initialized (untrained) probability network for `feature_dim`
/// input channels.
pub fn build_tem_stack(feature_dim: usize, arch: &TemArch, seed: u64) -> Result<LayerStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LayerStack::new(vec![
        Layer::conv1d(feature_dim, arch.hidden_filters, arch.kernel, Activation::Relu, &mut rng)?,
        Layer::conv1d(
            arch.hidden_filters,
            arch.hidden_filters,
            arch.kernel,
            Activation::Relu,
            &mut rng,
        )?,
        Layer::conv1d(arch.hidden_filters, 3, 1, Activation::Sigmoid, &mut rng)?,
    ])
}

#[derive(Debug, Clone)]
pub struct TemTrainOutput {
    pub stack: LayerStack,
    /// Mean window loss per epoch, measured as the epoch is traversed.
    pub history: Vec<f64>,
    /// Task-window pairs skipped as degenerate (single-class), summed over
    /// all epochs.
    pub degenerate_task_windows: u64,
}

struct Window {
    input: Matrix,
    targets: TemTargets,
    valid: usize,
}

/// Cuts every sequence into non-overlapping `window_len` windows (last one
/// zero-padded and masked) and returns them with their targets.
fn collect_windows(
    dataset: &[(FeatureSequence, AnnotationSet)],
    window_len: usize,
) -> Result<Vec<Window>> {
    let mut windows = Vec::new();
    for (fs, ann) in dataset {
        ann.validate_within(fs.len())?;
        let full = assign_tem_targets(ann, 0, fs.len(), 1.0)?;
        let mut start = 0;
        while start < fs.len() {
            let (input, valid) = fs.window_input(start, window_len);
            windows.push(Window {
                input,
                targets: full.slice(start, valid),
                valid,
            });
            start += window_len;
        }
    }
    Ok(windows)
}

/// Trains the boundary network. Deterministic given the optimizer seed: the
/// window shuffle, batch order and every reduction follow a fixed order.
pub fn train_tem(
    dataset: &[(FeatureSequence, AnnotationSet)],
    arch: &TemArch,
    opt: &OptimizerConfig,
    loss_cfg: &TemLossConfig,
) -> Result<TemTrainOutput> {
    opt.validate()?;
    loss_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid_argument("training dataset is empty"));
    }
    let feature_dim = dataset[0].0.feature_dim();
    for (fs, _) in dataset {
        if fs.feature_dim() != feature_dim {
            return Err(Error::invalid_argument(format!(
                "feature dimension mismatch: {} has {}, expected {feature_dim}",
                fs.video_id,
                fs.feature_dim()
            )));
        }
    }

    let windows = collect_windows(dataset, loss_cfg.window_len)?;
    let mut stack = build_tem_stack(feature_dim, arch, opt.seed)?;
    let mut optimizer = Optimizer::new(
        opt.algorithm,
        opt.learning_rate_for_epoch(0),
        stack.param_count(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(opt.total_epochs());
    let mut degenerate: u64 = 0;

    for epoch in 0..opt.total_epochs() {
        optimizer.set_learning_rate(opt.learning_rate_for_epoch(epoch));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(opt.batch_size) {
            let mut grad_acc = vec![0.0; stack.param_count()];
            for &wi in batch {
                let w = &windows[wi];
                let probs = stack.forward(&w.input)?;
                let (res, grad_probs) = tem_loss(&probs, &w.targets, w.valid, loss_cfg)?;
                degenerate += res.degenerate_count() as u64;
                loss_sum += res.total;
                let grads = stack.backward(&grad_probs)?;
                for (acc, g) in grad_acc.iter_mut().zip(grads.wrt_params.iter()) {
                    *acc += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grad_acc.iter_mut() {
                *g *= scale;
            }
            optimizer.step(&mut stack, &grad_acc)?;
        }
        history.push(loss_sum / windows.len() as f64);
    }

    Ok(TemTrainOutput {
        stack,
        history,
        degenerate_task_windows: degenerate,
    })
}
