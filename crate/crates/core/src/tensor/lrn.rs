//! Cross-channel local response normalization:
//! `b_c = a_c / (k + (alpha / n) * sum_{c' in window(c)} a_{c'}^2)^beta`.
//! The window spans `n` channels starting at `c - (n - 1) / 2`, clipped at the channel boundaries.

use serde::{Deserialize, Serialize};

use super::{GradPair, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub size: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            size: 5,
            k: 2.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::invalid("lrn window size must be at least 1"));
        }
        if self.k.is_nan() || self.k <= 0.0 {
            return Err(Error::invalid(format!("lrn offset k must be positive, got {}", self.k)));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::invalid(format!("lrn exponent beta must be positive, got {}", self.beta)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::invalid("lrn alpha must be finite"));
        }
        Ok(())
    }

    fn window(&self, c: usize, channels: usize) -> (usize, usize) {
        let lo = c as isize - ((self.size - 1) / 2) as isize;
        let hi = lo + self.size as isize - 1;
        (lo.max(0) as usize, hi.min(channels as isize - 1) as usize)
    }
}

fn check<T: Real>(x: &Tensor<T>, p: &LrnParams) -> Result<(usize, usize, usize)> {
    p.validate()?;
    if x.rank() != 4 {
        return Err(Error::shape(format!("lrn expects [N,C,H,W], got {:?}", x.shape())));
    }
    let s = x.shape();
    Ok((s[0], s[1], s[2] * s[3]))
}

fn scales<T: Real>(x: &[T], c: usize, hw: usize, p: &LrnParams) -> Vec<T> {
    let (k, coef) = (T::lit(p.k), T::lit(p.alpha / p.size as f64));
    let mut out = vec![T::zero(); c * hw];
    for ci in 0..c {
        let (lo, hi) = p.window(ci, c);
        let dst = &mut out[ci * hw..(ci + 1) * hw];
        for cj in lo..=hi {
            let src = &x[cj * hw..(cj + 1) * hw];
            for (d, &a) in dst.iter_mut().zip(src) {
                *d = *d + a * a;
            }
        }
        dst.iter_mut().for_each(|d| *d = k + coef * *d);
    }
    out
}

pub fn lrn_forward<T: Real>(x: &Tensor<T>, p: &LrnParams) -> Result<Tensor<T>> {
    let (n, c, hw) = check(x, p)?;
    let beta = T::lit(p.beta);
    let mut out = Vec::with_capacity(x.len());
    for ni in 0..n {
        let xs = &x.data()[ni * c * hw..(ni + 1) * c * hw];
        let s = scales(xs, c, hw, p);
        out.extend(xs.iter().zip(&s).map(|(&a, &sv)| a * sv.powf(-beta)));
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// `dx_j = g_j s_j^-beta - (2 alpha beta / n) a_j sum_{c : j in window(c)} g_c a_c s_c^(-beta-1)`
pub fn lrn_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, p: &LrnParams) -> Result<Tensor<T>> {
    let (n, c, hw) = check(x, p)?;
    if dy.shape() != x.shape() {
        return Err(Error::shape(format!(
            "lrn upstream gradient {:?} does not match input {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let beta = T::lit(p.beta);
    let coef = T::lit(2.0 * p.alpha * p.beta / p.size as f64);
    let mut dx = vec![T::zero(); x.len()];
    for ni in 0..n {
        let range = ni * c * hw..(ni + 1) * c * hw;
        let xs = &x.data()[range.clone()];
        let gs = &dy.data()[range.clone()];
        let s = scales(xs, c, hw, p);
        // t_c = g_c a_c s_c^(-beta-1)
        let t: Vec<T> = (0..c * hw)
            .map(|i| gs[i] * xs[i] * s[i].powf(-beta - T::one()))
            .collect();
        let out = &mut dx[range];
        for cj in 0..c {
            for i in 0..hw {
                let idx = cj * hw + i;
                out[idx] = gs[idx] * s[idx].powf(-beta);
            }
            // channels c whose window contains cj
            let pre = (p.size - 1) / 2;
            let lo = (cj + pre).saturating_sub(p.size - 1);
            let hi = (cj + pre).min(c - 1);
            for ci in lo..=hi {
                for i in 0..hw {
                    let idx = cj * hw + i;
                    out[idx] = out[idx] - coef * xs[idx] * t[ci * hw + i];
                }
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), dx))
}

/// Local response normalization; pullback yields `[dx]`.
pub fn lrn<T: Real>(x: &Tensor<T>, p: LrnParams) -> Result<GradPair<T>> {
    let value = lrn_forward(x, &p)?;
    let x = x.clone();
    Ok(GradPair::new(
        value,
        Box::new(move |dy| Ok(vec![lrn_backward(&x, dy, &p)?])),
    ))
}
