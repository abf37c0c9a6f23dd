//! Gradient-descent optimizers over the stack's flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerStack;

/// Update rule. Adaptive-moment descent is the default; plain SGD is kept for
/// comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Algorithm {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd,
}

impl Algorithm {
    pub fn adam_default() -> Self {
        Algorithm::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One phase of a piecewise-constant learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleStep {
    pub epochs: usize,
    pub learning_rate: f64,
}

/// Full training-loop configuration shared by both trainable stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub schedule: Vec<ScheduleStep>,
    pub batch_size: usize,
    pub seed: u64,
}

impl OptimizerConfig {
    /// Adaptive-moment config with default betas.
    pub fn adam(schedule: Vec<ScheduleStep>, batch_size: usize, seed: u64) -> Self {
        Self {
            algorithm: Algorithm::adam_default(),
            schedule,
            batch_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid_argument("batch_size must be at least 1"));
        }
        if self.schedule.is_empty() {
            return Err(Error::invalid_argument("schedule must not be empty"));
        }
        for step in &self.schedule {
            if !(step.learning_rate > 0.0) || !step.learning_rate.is_finite() {
                return Err(Error::invalid_argument(format!(
                    "learning rate must be positive and finite, got {}",
                    step.learning_rate
                )));
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|s| s.epochs).sum()
    }

    /// Learning rate in effect for a zero-based epoch index.
    pub fn learning_rate_for_epoch(&self, epoch: usize) -> f64 {
        let mut remaining = epoch;
        for step in &self.schedule {
            if remaining < step.epochs {
                return step.learning_rate;
            }
            remaining -= step.epochs;
        }
        self.schedule
            .last()
            .map(|s| s.learning_rate)
            .unwrap_or(0.0)
    }
}

/// Mutable optimizer state for one stack.
#[derive(Debug, Clone)]
pub struct Optimizer {
    algorithm: Algorithm,
    learning_rate: f64,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl Optimizer {
    pub fn new(algorithm: Algorithm, learning_rate: f64, param_count: usize) -> Self {
        Self {
            algorithm,
            learning_rate,
            step_count: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.learning_rate = learning_rate;
    }

    /// Applies one update. Rejects non-finite gradients, naming the offending
    /// parameter tensor.
    pub fn step(&mut self, stack: &mut LayerStack, gradients: &[f64]) -> Result<()> {
        if gradients.len() != self.first_moment.len() {
            return Err(Error::invalid_argument(format!(
                "optimizer sized for {} parameters, got {} gradients",
                self.first_moment.len(),
                gradients.len()
            )));
        }
        if let Some(bad) = gradients.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient for {} is not finite",
                locate_tensor(stack, bad)
            )));
        }

        let mut params = stack.params();
        self.step_count += 1;
        match self.algorithm {
            Algorithm::Sgd => {
                for (p, g) in params.iter_mut().zip(gradients.iter()) {
                    *p -= self.learning_rate * g;
                }
            }
            Algorithm::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(gradients.iter()).enumerate() {
                    let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
                    let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
                    self.first_moment[i] = m;
                    self.second_moment[i] = v;
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *p -= self.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        stack.set_params(&params)
    }
}

/// Maps a flat parameter index to its tensor name for error reporting.
fn locate_tensor(stack: &LayerStack, index: usize) -> String {
    let mut offset = 0;
    for (name, len) in stack.param_layout() {
        if index < offset + len {
            return name;
        }
        offset += len;
    }
    format!("parameter {index}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer, Matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn single_dense(seed: u64) -> LayerStack {
        let layer = Layer::dense(1, 1, Activation::None, &mut rng(seed)).unwrap();
        LayerStack::new(vec![layer]).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut cfg = OptimizerConfig::adam(
            vec![ScheduleStep {
                epochs: 10,
                learning_rate: 0.001,
            }],
            16,
            7,
        );
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 16;
        cfg.schedule[0].learning_rate = -1.0;
        assert!(cfg.validate().is_err());
        cfg.schedule.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn schedule_lookup_covers_phase_boundaries() {
        let cfg = OptimizerConfig::adam(
            vec![
                ScheduleStep {
                    epochs: 10,
                    learning_rate: 0.001,
                },
                ScheduleStep {
                    epochs: 10,
                    learning_rate: 0.0001,
                },
            ],
            16,
            0,
        );
        assert_eq!(cfg.total_epochs(), 20);
        assert_eq!(cfg.learning_rate_for_epoch(0), 0.001);
        assert_eq!(cfg.learning_rate_for_epoch(9), 0.001);
        assert_eq!(cfg.learning_rate_for_epoch(10), 0.0001);
        assert_eq!(cfg.learning_rate_for_epoch(19), 0.0001);
        assert_eq!(cfg.learning_rate_for_epoch(25), 0.0001);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        for algorithm in [Algorithm::adam_default(), Algorithm::Sgd] {
            let mut stack = single_dense(1);
            let before = stack.params();
            let n = stack.param_count();
            let mut opt = Optimizer::new(algorithm, 0.1, n);
            opt.step(&mut stack, &vec![0.0; n]).unwrap();
            assert_eq!(stack.params(), before);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_tensor_name() {
        let mut stack = single_dense(2);
        let mut opt = Optimizer::new(Algorithm::adam_default(), 0.1, 2);
        let err = opt.step(&mut stack, &[0.0, f64::NAN]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer0.dense.bias"), "got: {msg}");
    }

    #[test]
    fn adam_descends_on_scalar_quadratic() {
        // f(w) = w^2 from w = 1: one step must decrease f.
        let mut stack = single_dense(3);
        stack.set_params(&[1.0, 0.0]).unwrap();
        let mut opt = Optimizer::new(Algorithm::adam_default(), 0.1, 2);
        opt.step(&mut stack, &[2.0, 0.0]).unwrap();
        let w = stack.params()[0];
        assert!(w * w < 1.0, "f went from 1 to {}", w * w);
    }

    #[test]
    fn sgd_solves_two_parameter_linear_regression() {
        // Full-batch gradient descent on sum-of-squares for y = 2x + 1.
        let xs = [-1.0, 0.0, 1.0, 2.0];
        let mut stack = single_dense(4);
        let mut opt = Optimizer::new(Algorithm::Sgd, 0.2, 2);
        let mut last_loss = f64::INFINITY;
        for _ in 0..200 {
            let mut grad_w = 0.0;
            let mut grad_b = 0.0;
            let mut loss = 0.0;
            for &x in &xs {
                let input = Matrix::from_row(vec![x]);
                let y = stack.forward(&input).unwrap().get(0, 0);
                let r = y - (2.0 * x + 1.0);
                loss += 0.5 * r * r;
                grad_w += r * x;
                grad_b += r;
            }
            opt.step(&mut stack, &[grad_w, grad_b]).unwrap();
            last_loss = loss;
        }
        assert!(last_loss < 1e-6, "final loss {last_loss}");
        let p = stack.params();
        assert!((p[0] - 2.0).abs() < 1e-3 && (p[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn adam_reaches_linear_regression_optimum_with_schedule() {
        let xs = [-1.0, 0.0, 1.0, 2.0];
        let cfg = OptimizerConfig::adam(
            vec![
                ScheduleStep {
                    epochs: 120,
                    learning_rate: 0.1,
                },
                ScheduleStep {
                    epochs: 80,
                    learning_rate: 0.001,
                },
            ],
            4,
            0,
        );
        cfg.validate().unwrap();
        let mut stack = single_dense(5);
        let mut opt = Optimizer::new(cfg.algorithm, cfg.learning_rate_for_epoch(0), 2);
        for epoch in 0..cfg.total_epochs() {
            opt.set_learning_rate(cfg.learning_rate_for_epoch(epoch));
            let mut grad_w = 0.0;
            let mut grad_b = 0.0;
            for &x in &xs {
                let input = Matrix::from_row(vec![x]);
                let y = stack.forward(&input).unwrap().get(0, 0);
                let r = y - (2.0 * x + 1.0);
                grad_w += r * x;
                grad_b += r;
            }
            opt.step(&mut stack, &[grad_w, grad_b]).unwrap();
        }
        let p = stack.params();
        assert!(
            (p[0] - 2.0).abs() < 0.05 && (p[1] - 1.0).abs() < 0.05,
            "got w = {}, b = {}",
            p[0],
            p[1]
        );
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let run = || {
            let mut stack = single_dense(11);
            let mut opt = Optimizer::new(Algorithm::adam_default(), 0.05, 2);
            for i in 0..50 {
                let g = ((i as f64) * 0.13).sin();
                opt.step(&mut stack, &[g, -g]).unwrap();
            }
            stack.params()
        };
        let a = run();
        let b = run();
        for (u, v) in a.iter().zip(b.iter()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
}
