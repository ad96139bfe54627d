//! Finite-difference verification of analytic pullbacks.
//!
//! The primitive is contracted with a seeded random upstream tensor `u`, giving the
//! scalar `L(x) = sum(u * f(x))`. Its analytic gradient is `pullback(u)`, computed in
//! 32-bit; the numeric gradient is the 64-bit central difference
//! `(L(x + eps) - L(x - eps)) / (2 eps)` taken element by element.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GradPair, Tensor, Tensor64};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `|analytic - numeric| / max(1, |analytic|, |numeric|)` at the worst element.
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares the 32-bit pullback of `analytic` against central differences of `forward64`.
///
/// `forward64` must evaluate the same function as `analytic` but in 64-bit precision;
/// both receive the inputs in the same order, and the pullback must return one
/// gradient per input.
pub fn grad_check<F, A>(inputs: &[Tensor], forward64: F, analytic: A, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor64]) -> Result<Tensor64>,
    A: Fn(&[Tensor]) -> Result<GradPair>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let pair = analytic(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upstream = Tensor::<f32>::uniform(pair.value.shape(), -1.0, 1.0, &mut rng);
    let grads = pair.pull(&upstream)?;
    if grads.len() != inputs.len() {
        return Err(Error::invalid(format!(
            "pullback returned {} gradients for {} inputs",
            grads.len(),
            inputs.len()
        )));
    }
    let u64s: Tensor64 = upstream.cast();
    let contract = |xs: &[Tensor64]| -> Result<f64> {
        let y = forward64(xs)?;
        if y.shape() != u64s.shape() {
            return Err(Error::shape("64-bit forward disagrees with 32-bit forward shape"));
        }
        Ok(y.data().iter().zip(u64s.data()).map(|(a, b)| a * b).sum())
    };

    let mut xs: Vec<Tensor64> = inputs.iter().map(|t| t.cast()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != inputs[i].shape() {
            return Err(Error::shape(format!(
                "gradient {i} has shape {:?}, input has {:?}",
                g.shape(),
                inputs[i].shape()
            )));
        }
        for e in 0..xs[i].len() {
            let orig = xs[i].data()[e];
            xs[i].data_mut()[e] = orig + eps;
            let plus = contract(&xs)?;
            xs[i].data_mut()[e] = orig - eps;
            let minus = contract(&xs)?;
            xs[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = g.data()[e] as f64;
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error || report.checked == 1 {
                report = GradCheckReport {
                    max_rel_error: rel,
                    input: i,
                    index: e,
                    analytic: a,
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}
