//! Central finite-difference gradient checks in double precision.

use rand::seq::index::sample;
use rand::Rng;

use super::tensor::Tensor;
use super::AutogradError;

/// Step refinements tried for an entry whose estimate depends on the step.
pub const MAX_REFINEMENTS: usize = 4;

/// Outcome of checking one differentiable expression.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    /// Largest `|analytic − numeric|` divided by the largest gradient magnitude
    /// seen over all checked entries.
    ///
    /// A per-tensor denominator would turn rounding noise on tensors whose true
    /// gradient is zero (biases ahead of instance norm) into an error of 1.
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tolerance
    }
}

/// Compares reverse-mode gradients of `loss` with respect to `inputs` against
/// central differences with step `h`.
///
/// A step that straddles a relu or abs kink gives a difference quotient that
/// changes with the step size. Each entry is therefore also estimated at
/// `h / 8`; while the two estimates disagree the step keeps shrinking, up to
/// [`MAX_REFINEMENTS`] times, and the finest estimate is used.
///
/// `loss` must read the current values of `inputs` each time it is called.
/// When `max_entries` is set, only that many randomly chosen entries per input
/// are perturbed.
pub fn check_gradients(
    name: &str,
    inputs: &[Tensor<f64>],
    loss: impl Fn() -> Result<Tensor<f64>, AutogradError>,
    h: f64,
    max_entries: Option<usize>,
    rng: &mut impl Rng,
) -> Result<GradCheckReport, AutogradError> {
    for t in inputs {
        t.zero_grad();
        t.set_requires_grad(true);
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut worst_abs = 0.0f64;
    let mut scale = 0.0f64;
    let mut checked = 0;
    for (t, grad) in inputs.iter().zip(&analytic) {
        let indices: Vec<usize> = match max_entries {
            Some(k) if k < t.numel() => sample(rng, t.numel(), k).into_vec(),
            _ => (0..t.numel()).collect(),
        };
        for &i in &indices {
            let mut step = h;
            let (mut numeric, level) = central(t, i, step, &loss)?;
            for _ in 0..MAX_REFINEMENTS {
                let (finer, _) = central(t, i, step / 8.0, &loss)?;
                // Rounding in the loss alone moves a quotient by about ε·|f|/step.
                let noise = 1e3 * f64::EPSILON * level / (step / 8.0);
                let settled = (finer - numeric).abs() <= 1e-7 * finer.abs().max(numeric.abs()) + noise;
                numeric = finer;
                step /= 8.0;
                if settled {
                    break;
                }
            }
            worst_abs = worst_abs.max((grad[i] - numeric).abs());
            scale = scale.max(numeric.abs()).max(grad[i].abs());
            checked += 1;
        }
    }
    let max_rel = if scale > 1e-12 { worst_abs / scale } else { worst_abs };
    Ok(GradCheckReport {
        name: name.to_owned(),
        max_rel_error: max_rel,
        entries_checked: checked,
    })
}

/// Central difference at step `h`, with the larger `|loss|` of the two evaluations.
fn central(
    t: &Tensor<f64>,
    i: usize,
    h: f64,
    loss: &impl Fn() -> Result<Tensor<f64>, AutogradError>,
) -> Result<(f64, f64), AutogradError> {
    let original = t.data()[i];
    t.data_mut()[i] = original + h;
    let plus = loss()?.item();
    t.data_mut()[i] = original - h;
    let minus = loss()?.item();
    t.data_mut()[i] = original;
    Ok(((plus - minus) / (2.0 * h), plus.abs().max(minus.abs())))
}
