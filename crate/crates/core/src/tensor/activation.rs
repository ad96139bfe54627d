use super::{GradPair, Real, Tensor};
use crate::error::{Error, Result};

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the input is strictly positive (subgradient 0 at 0).
pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(Error::shape(format!(
            "relu upstream gradient {:?} does not match input {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> GradPair<T> {
    let value = relu_forward(x);
    let x = x.clone();
    GradPair::new(value, Box::new(move |dy| Ok(vec![relu_backward(&x, dy)?])))
}

/// Row-wise softmax of `[N, C]` logits with max subtraction.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 || logits.shape()[1] < 2 {
        return Err(Error::shape(format!(
            "softmax expects [N, C] with C >= 2, got {:?}",
            logits.shape()
        )));
    }
    let c = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&z| (z - m).exp()));
        let total: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / total);
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}
