//! Minimal differentiable layer stack used by both network stages: temporal
//! convolution and dense layers with ReLU/sigmoid activations, an
//! adaptive-moment optimizer, finite-difference gradient verification and
//! bit-exact JSON checkpoints.
//!
//! All math is 64-bit. Parameters are exposed as one flat vector (layer
//! order, weights before bias) so the optimizer and the gradient checker
//! share a single addressing scheme.
//!
//! A stack is single-writer: training mutates it and must be externally
//! serialized. [`LayerStack::predict`] on a shared reference is pure and safe
//! to call from multiple threads.

mod checkpoint;
mod gradcheck;
mod layer;
mod optimizer;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, squared_error};
pub use layer::{Activation, Conv1d, Dense, Layer};
pub use optimizer::{Algorithm, Optimizer, OptimizerConfig, ScheduleStep};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major 2-D array. Convolution layers treat it as
/// `[channels × time]`, dense layers as `[samples × features]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid_argument(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Single-row matrix wrapping one sample or one channel.
    pub fn from_row(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Result of one backward pass through a stack.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Flat parameter gradients, aligned with [`LayerStack::params`].
    pub wrt_params: Vec<f64>,
    /// Gradient with respect to the stack input.
    pub wrt_input: Matrix,
}

/// Ordered sequence of layers trained and applied as one unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for pair in layers.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            if prev.output_width() != next.input_width() {
                return Err(Error::invalid_argument(format!(
                    "adjacent layer shapes incompatible: {} outputs width {} but {} expects {}",
                    prev.describe(),
                    prev.output_width(),
                    next.describe(),
                    next.input_width()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Forward pass that caches activations for a following [`Self::backward`].
    pub fn forward(&mut self, input: &Matrix) -> Result<Matrix> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    /// Pure forward pass; leaves training caches untouched.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.predict(&x)?;
        }
        Ok(x)
    }

    /// Backpropagates `grad_output` (gradient of the loss with respect to the
    /// stack output) through the caches left by the last [`Self::forward`].
    /// Consumes those caches, so each backward needs a fresh forward.
    pub fn backward(&mut self, grad_output: &Matrix) -> Result<Gradients> {
        let mut grad = grad_output.clone();
        let mut per_layer: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter_mut().rev() {
            let (grad_input, grad_params) = layer.backward(&grad)?;
            per_layer.push(grad_params);
            grad = grad_input;
        }
        per_layer.reverse();
        Ok(Gradients {
            wrt_params: per_layer.concat(),
            wrt_input: grad,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// All parameters as one flat vector: layers in order, weights before bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            layer.append_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid_argument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.param_count();
            layer.load_params(&params[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `(tensor name, length)` per parameter tensor, in flat-vector order.
    pub fn param_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let kind = layer.describe();
            out.push((format!("layer{i}.{kind}.weights"), layer.weight_count()));
            out.push((format!("layer{i}.{kind}.bias"), layer.bias_count()));
        }
        out
    }
}
