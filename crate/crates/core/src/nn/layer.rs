//! Layer definitions: 1-D temporal convolution and dense, each with an
//! optional fused elementwise activation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Elementwise nonlinearity applied after a layer's linear map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::None => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative dy/dz expressed through the post-activation value `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Xavier-uniform bound for a layer with the given fan-in/out.
fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn init_weights(rng: &mut impl Rng, count: usize, bound: f64) -> Vec<f64> {
    (0..count).map(|_| rng.random_range(-bound..bound)).collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Cache {
    #[serde(skip)]
    input: Option<Matrix>,
    #[serde(skip)]
    output: Option<Matrix>,
}

/// Temporal convolution over `[channels x time]` input, stride 1, symmetric
/// zero padding of `(kernel - 1) / 2` so output length equals input length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conv1d {
    in_channels: usize,
    filters: usize,
    kernel: usize,
    activation: Activation,
    /// `[filters x in_channels x kernel]`, flattened row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    #[serde(skip)]
    cache: Cache,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        filters: usize,
        kernel: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if in_channels == 0 || filters == 0 {
            return Err(Error::invalid_argument(
                "conv1d needs at least one input channel and one filter",
            ));
        }
        if kernel % 2 == 0 {
            return Err(Error::invalid_argument(format!(
                "conv1d kernel must be odd for symmetric padding, got {kernel}"
            )));
        }
        let bound = init_bound(in_channels * kernel, filters * kernel);
        Ok(Self {
            in_channels,
            filters,
            kernel,
            activation,
            weights: init_weights(rng, filters * in_channels * kernel, bound),
            bias: vec![0.0; filters],
            cache: Cache::default(),
        })
    }

    fn weight(&self, f: usize, c: usize, j: usize) -> f64 {
        self.weights[(f * self.in_channels + c) * self.kernel + j]
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() != self.in_channels {
            return Err(Error::invalid_argument(format!(
                "conv1d expects {} input channels, got {}",
                self.in_channels,
                x.rows()
            )));
        }
        Ok(())
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let t_len = x.cols();
        let pad = (self.kernel - 1) / 2;
        let mut y = Matrix::zeros(self.filters, t_len);
        for f in 0..self.filters {
            for t in 0..t_len {
                let mut z = self.bias[f];
                for c in 0..self.in_channels {
                    for j in 0..self.kernel {
                        let src = t as isize + j as isize - pad as isize;
                        if src >= 0 && (src as usize) < t_len {
                            z += self.weight(f, c, j) * x.get(c, src as usize);
                        }
                    }
                }
                y.set(f, t, self.activation.apply(z));
            }
        }
        y
    }

    fn backward(&mut self, grad_y: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let (x, y) = take_cache(&mut self.cache, "conv1d")?;
        if grad_y.rows() != self.filters || grad_y.cols() != x.cols() {
            return Err(Error::invalid_argument(format!(
                "conv1d backward expects gradient of shape {}x{}, got {}x{}",
                self.filters,
                x.cols(),
                grad_y.rows(),
                grad_y.cols()
            )));
        }
        let t_len = x.cols();
        let pad = (self.kernel - 1) / 2;

        let mut grad_z = Matrix::zeros(self.filters, t_len);
        for f in 0..self.filters {
            for t in 0..t_len {
                let d = self.activation.derivative_from_output(y.get(f, t));
                grad_z.set(f, t, grad_y.get(f, t) * d);
            }
        }

        let mut grad_w = vec![0.0; self.weights.len()];
        let mut grad_b = vec![0.0; self.filters];
        let mut grad_x = Matrix::zeros(self.in_channels, t_len);
        for f in 0..self.filters {
            for t in 0..t_len {
                let gz = grad_z.get(f, t);
                grad_b[f] += gz;
                for c in 0..self.in_channels {
                    for j in 0..self.kernel {
                        let src = t as isize + j as isize - pad as isize;
                        if src >= 0 && (src as usize) < t_len {
                            let src = src as usize;
                            grad_w[(f * self.in_channels + c) * self.kernel + j] +=
                                gz * x.get(c, src);
                            grad_x.set(
                                c,
                                src,
                                grad_x.get(c, src) + gz * self.weight(f, c, j),
                            );
                        }
                    }
                }
            }
        }
        grad_w.extend_from_slice(&grad_b);
        Ok((grad_x, grad_w))
    }
}

/// Fully connected layer over `[samples x features]` input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    in_features: usize,
    units: usize,
    activation: Activation,
    /// `[in_features x units]`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    #[serde(skip)]
    cache: Cache,
}

impl Dense {
    pub fn new(
        in_features: usize,
        units: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if in_features == 0 || units == 0 {
            return Err(Error::invalid_argument(
                "dense needs at least one input feature and one unit",
            ));
        }
        let bound = init_bound(in_features, units);
        Ok(Self {
            in_features,
            units,
            activation,
            weights: init_weights(rng, in_features * units, bound),
            bias: vec![0.0; units],
            cache: Cache::default(),
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_features {
            return Err(Error::invalid_argument(format!(
                "dense expects {} input features, got {}",
                self.in_features,
                x.cols()
            )));
        }
        Ok(())
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let batch = x.rows();
        let mut y = Matrix::zeros(batch, self.units);
        for b in 0..batch {
            for o in 0..self.units {
                let mut z = self.bias[o];
                for i in 0..self.in_features {
                    z += x.get(b, i) * self.weights[i * self.units + o];
                }
                y.set(b, o, self.activation.apply(z));
            }
        }
        y
    }

    fn backward(&mut self, grad_y: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let (x, y) = take_cache(&mut self.cache, "dense")?;
        if grad_y.rows() != x.rows() || grad_y.cols() != self.units {
            return Err(Error::invalid_argument(format!(
                "dense backward expects gradient of shape {}x{}, got {}x{}",
                x.rows(),
                self.units,
                grad_y.rows(),
                grad_y.cols()
            )));
        }
        let batch = x.rows();

        let mut grad_z = Matrix::zeros(batch, self.units);
        for b in 0..batch {
            for o in 0..self.units {
                let d = self.activation.derivative_from_output(y.get(b, o));
                grad_z.set(b, o, grad_y.get(b, o) * d);
            }
        }

        let mut grad_w = vec![0.0; self.weights.len()];
        let mut grad_b = vec![0.0; self.units];
        let mut grad_x = Matrix::zeros(batch, self.in_features);
        for b in 0..batch {
            for o in 0..self.units {
                let gz = grad_z.get(b, o);
                grad_b[o] += gz;
                for i in 0..self.in_features {
                    grad_w[i * self.units + o] += gz * x.get(b, i);
                    grad_x.set(b, i, grad_x.get(b, i) + gz * self.weights[i * self.units + o]);
                }
            }
        }
        grad_w.extend_from_slice(&grad_b);
        Ok((grad_x, grad_w))
    }
}

fn take_cache(cache: &mut Cache, kind: &str) -> Result<(Matrix, Matrix)> {
    match (cache.input.take(), cache.output.take()) {
        (Some(x), Some(y)) => Ok((x, y)),
        _ => Err(Error::InvalidState(format!(
            "{kind} backward called without a preceding forward"
        ))),
    }
}

/// A single layer of either kind, dispatched statically by the stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv1d(Conv1d),
    Dense(Dense),
}

impl Layer {
    pub fn conv1d(
        in_channels: usize,
        filters: usize,
        kernel: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Layer::Conv1d(Conv1d::new(
            in_channels,
            filters,
            kernel,
            activation,
            rng,
        )?))
    }

    pub fn dense(
        in_features: usize,
        units: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Layer::Dense(Dense::new(in_features, units, activation, rng)?))
    }

    pub fn describe(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::Dense(_) => "dense",
        }
    }

    /// Channel/feature width the layer expects on input.
    pub fn input_width(&self) -> usize {
        match self {
            Layer::Conv1d(l) => l.in_channels,
            Layer::Dense(l) => l.in_features,
        }
    }

    /// Channel/feature width the layer produces.
    pub fn output_width(&self) -> usize {
        match self {
            Layer::Conv1d(l) => l.filters,
            Layer::Dense(l) => l.units,
        }
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = self.predict(x)?;
        let cache = match self {
            Layer::Conv1d(l) => &mut l.cache,
            Layer::Dense(l) => &mut l.cache,
        };
        cache.input = Some(x.clone());
        cache.output = Some(y.clone());
        Ok(y)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Layer::Conv1d(l) => {
                l.check_input(x)?;
                Ok(l.apply(x))
            }
            Layer::Dense(l) => {
                l.check_input(x)?;
                Ok(l.apply(x))
            }
        }
    }

    pub fn backward(&mut self, grad_y: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        match self {
            Layer::Conv1d(l) => l.backward(grad_y),
            Layer::Dense(l) => l.backward(grad_y),
        }
    }

    pub fn weight_count(&self) -> usize {
        match self {
            Layer::Conv1d(l) => l.weights.len(),
            Layer::Dense(l) => l.weights.len(),
        }
    }

    pub fn bias_count(&self) -> usize {
        match self {
            Layer::Conv1d(l) => l.bias.len(),
            Layer::Dense(l) => l.bias.len(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    pub fn append_params(&self, out: &mut Vec<f64>) {
        match self {
            Layer::Conv1d(l) => {
                out.extend_from_slice(&l.weights);
                out.extend_from_slice(&l.bias);
            }
            Layer::Dense(l) => {
                out.extend_from_slice(&l.weights);
                out.extend_from_slice(&l.bias);
            }
        }
    }

    pub fn load_params(&mut self, params: &[f64]) {
        let (weights, bias) = match self {
            Layer::Conv1d(l) => (&mut l.weights, &mut l.bias),
            Layer::Dense(l) => (&mut l.weights, &mut l.bias),
        };
        let nw = weights.len();
        weights.copy_from_slice(&params[..nw]);
        bias.copy_from_slice(&params[nw..]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn conv_with(weights: Vec<f64>, bias: Vec<f64>, c_in: usize, c_f: usize, k: usize) -> Layer {
        let mut layer = Layer::conv1d(c_in, c_f, k, Activation::None, &mut rng(0)).unwrap();
        let mut params = weights;
        params.extend_from_slice(&bias);
        layer.load_params(&params);
        layer
    }

    #[test]
    fn conv_rejects_even_kernel() {
        assert!(Layer::conv1d(1, 1, 2, Activation::None, &mut rng(0)).is_err());
        assert!(Layer::conv1d(1, 1, 4, Activation::None, &mut rng(0)).is_err());
    }

    #[test]
    fn conv_kernel_one_unit_weight_is_identity() {
        let layer = conv_with(vec![1.0], vec![0.0], 1, 1, 1);
        let x = Matrix::from_row(vec![0.3, -1.2, 4.5, 0.0, 7.25]);
        let y = layer.predict(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_center_tap_is_identity() {
        let layer = conv_with(vec![0.0, 1.0, 0.0], vec![0.0], 1, 1, 3);
        let x = Matrix::from_row(vec![0.5, 2.0, -3.5, 1.0]);
        let y = layer.predict(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_box_kernel_with_zero_padding() {
        let layer = conv_with(vec![1.0, 1.0, 1.0], vec![0.0], 1, 1, 3);
        let x = Matrix::from_row(vec![1.0, 1.0, 1.0]);
        let y = layer.predict(&x).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 2.0]);
    }

    #[test]
    fn conv_multi_channel_hand_case() {
        // two input channels, one filter, kernel 1: y[t] = 2*a[t] - b[t] + 0.5
        let layer = conv_with(vec![2.0, -1.0], vec![0.5], 2, 1, 1);
        let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        let y = layer.predict(&x).unwrap();
        assert_eq!(y.data(), &[-7.5, -15.5, -23.5]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let layer = conv_with(vec![1.0], vec![0.0], 1, 1, 1);
        let x = Matrix::zeros(2, 4);
        assert!(layer.predict(&x).is_err());
    }

    #[test]
    fn dense_hand_case() {
        let mut layer = Layer::dense(2, 2, Activation::None, &mut rng(0)).unwrap();
        // W = [[1, 2], [3, 4]], b = [0.5, -0.5]
        layer.load_params(&[1.0, 2.0, 3.0, 4.0, 0.5, -0.5]);
        let x = Matrix::from_vec(2, 2, vec![1.0, 1.0, 2.0, 0.0]).unwrap();
        let y = layer.predict(&x).unwrap();
        assert_eq!(y.row(0), &[4.5, 5.5]);
        assert_eq!(y.row(1), &[2.5, 3.5]);
    }

    #[test]
    fn relu_clamps_and_sigmoid_stays_open_interval() {
        let mut relu = Layer::dense(1, 1, Activation::Relu, &mut rng(0)).unwrap();
        relu.load_params(&[1.0, 0.0]);
        let y = relu.predict(&Matrix::from_row(vec![-5.0])).unwrap();
        assert_eq!(y.get(0, 0), 0.0);

        // strict (0,1) holds until the exponential saturates past |z| ~ 36;
        // downstream losses clamp against that regime separately
        let mut sig = Layer::dense(1, 1, Activation::Sigmoid, &mut rng(0)).unwrap();
        sig.load_params(&[1.0, 0.0]);
        for v in [-30.0, -1.0, 0.0, 1.0, 30.0] {
            let y = sig.predict(&Matrix::from_row(vec![v])).unwrap().get(0, 0);
            assert!(y > 0.0 && y < 1.0, "sigmoid({v}) = {y}");
        }
    }

    #[test]
    fn sigmoid_matches_reference_values() {
        let mut sig = Layer::dense(1, 1, Activation::Sigmoid, &mut rng(0)).unwrap();
        sig.load_params(&[1.0, 0.0]);
        let y = sig.predict(&Matrix::from_row(vec![0.0])).unwrap().get(0, 0);
        assert!((y - 0.5).abs() < 1e-15);
        let y = sig.predict(&Matrix::from_row(vec![2.0])).unwrap().get(0, 0);
        assert!((y - 0.880797077977882).abs() < 1e-12);
    }

    #[test]
    fn xavier_init_respects_bound_and_seed() {
        let a = Layer::dense(30, 20, Activation::Relu, &mut rng(42)).unwrap();
        let b = Layer::dense(30, 20, Activation::Relu, &mut rng(42)).unwrap();
        let mut pa = Vec::new();
        let mut pb = Vec::new();
        a.append_params(&mut pa);
        b.append_params(&mut pb);
        assert_eq!(pa, pb);
        let bound = (6.0 / 50.0f64).sqrt();
        for w in &pa[..600] {
            assert!(w.abs() <= bound);
        }
        for bval in &pa[600..] {
            assert_eq!(*bval, 0.0);
        }
    }

    proptest! {
        #[test]
        fn conv_preserves_length_for_odd_kernels(
            kernel_idx in 0usize..4, len in 1usize..50, c_in in 1usize..4, c_f in 1usize..4,
        ) {
            let kernel = [1usize, 3, 5, 7][kernel_idx];
            let layer = Layer::conv1d(c_in, c_f, kernel, Activation::Relu, &mut rng(9)).unwrap();
            let x = Matrix::zeros(c_in, len);
            let y = layer.predict(&x).unwrap();
            prop_assert_eq!(y.rows(), c_f);
            prop_assert_eq!(y.cols(), len);
        }

        #[test]
        fn relu_outputs_nonnegative(vals in proptest::collection::vec(-10.0..10.0f64, 1..30)) {
            let layer = Layer::conv1d(1, 2, 3, Activation::Relu, &mut rng(10)).unwrap();
            let x = Matrix::from_row(vals);
            let y = layer.predict(&x).unwrap();
            for v in y.data() {
                prop_assert!(*v >= 0.0);
            }
        }
    }
}
