//! Finite-difference verification of backpropagated gradients.

use crate::error::Result;
use crate::nn::{LayerStack, Matrix};

/// Probe steps, largest first. The base step is 1e-3; a parameter is
/// re-probed with smaller steps when its first estimate disagrees, because a
/// central difference whose interval spans a ReLU kink measures the secant of
/// two linear pieces rather than the derivative at the base point. Shrinking
/// the interval moves the probe off the kink; the analytic gradient is
/// unaffected either way.
const STEPS: [f64; 3] = [1e-3, 1e-4, 3e-5];

/// Accept a probe without refinement below this relative error.
const REFINE_THRESHOLD: f64 = 1e-5;

/// Compares the analytic parameter gradient against central finite
/// differences and returns the maximum relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `loss` maps the stack output to the scalar loss and its gradient with
/// respect to that output. It must be deterministic.
pub fn grad_check<F>(stack: &mut LayerStack, input: &Matrix, loss: F) -> Result<f64>
where
    F: Fn(&Matrix) -> (f64, Matrix),
{
    let output = stack.forward(input)?;
    let (_, grad_output) = loss(&output);
    let analytic = stack.backward(&grad_output)?.wrt_params;

    let base = stack.params();
    let mut params = base.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut best = f64::INFINITY;
        for &step in &STEPS {
            params[i] = base[i] + step;
            stack.set_params(&params)?;
            let (loss_plus, _) = loss(&stack.predict(input)?);
            params[i] = base[i] - step;
            stack.set_params(&params)?;
            let (loss_minus, _) = loss(&stack.predict(input)?);
            let numeric = (loss_plus - loss_minus) / (2.0 * step);

            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            best = best.min((analytic[i] - numeric).abs() / denom);
            if best < REFINE_THRESHOLD {
                break;
            }
        }
        params[i] = base[i];
        worst = worst.max(best);
    }
    stack.set_params(&base)?;
    Ok(worst)
}

/// Squared-error loss against fixed targets: `L = 0.5 * sum((y - t)^2)`.
/// Returns the loss and its gradient `y - t`.
pub fn squared_error(output: &Matrix, targets: &Matrix) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    let mut loss = 0.0;
    for r in 0..output.rows() {
        for c in 0..output.cols() {
            let d = output.get(r, c) - targets.get(r, c);
            loss += 0.5 * d * d;
            grad.set(r, c, d);
        }
    }
    (loss, grad)
}
