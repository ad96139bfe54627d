use super::{softmax, GradPair, Real, Tensor};
use crate::error::{Error, Result};

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
/// Pullback yields `[dlogits] = upstream * (softmax - onehot) / N`.
pub fn cross_entropy_loss<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<GradPair<T>> {
    let probs = softmax(logits)?;
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let mut total = T::zero();
    for (i, &l) in labels.iter().enumerate() {
        // log-sum-exp form keeps the loss finite for saturated rows
        let row = &logits.data()[i * c..(i + 1) * c];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
        total = total + (lse - row[l]);
    }
    let nf = T::lit(n as f64);
    let value = Tensor::scalar(total / nf);
    let labels = labels.to_vec();
    Ok(GradPair::new(
        value,
        Box::new(move |up| {
            let scale = up.data()[0] / nf;
            let mut g = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                let row = &mut g.data_mut()[i * c..(i + 1) * c];
                row[l] = row[l] - T::one();
                row.iter_mut().for_each(|v| *v = *v * scale);
            }
            Ok(vec![g])
        }),
    ))
}

/// `mean(max(0, 1 - y s)) + lambda * weights_norm_sq` for labels in {-1, +1}.
/// Pullback yields `[dscores, dweights_norm_sq]`; the score subgradient is `-y / N`
/// where the margin is violated and 0 elsewhere.
pub fn hinge_loss<T: Real>(scores: &Tensor<T>, labels: &[i8], weights_norm_sq: T, lambda: T) -> Result<GradPair<T>> {
    if scores.rank() != 1 || scores.len() != labels.len() {
        return Err(Error::shape(format!(
            "hinge_loss expects scores [N] with N labels, got {:?} and {}",
            scores.shape(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
        return Err(Error::invalid(format!("hinge label must be -1 or +1, got {bad}")));
    }
    let n = T::lit(labels.len() as f64);
    let mut total = T::zero();
    let mut active = Vec::with_capacity(labels.len());
    for (&s, &y) in scores.data().iter().zip(labels) {
        let margin = T::one() - T::lit(y as f64) * s;
        active.push(margin > T::zero());
        if margin > T::zero() {
            total = total + margin;
        }
    }
    let value = Tensor::scalar(total / n + lambda * weights_norm_sq);
    let labels = labels.to_vec();
    Ok(GradPair::new(
        value,
        Box::new(move |up| {
            let u = up.data()[0];
            let ds = labels
                .iter()
                .zip(&active)
                .map(|(&y, &a)| if a { -T::lit(y as f64) * u / n } else { T::zero() })
                .collect();
            Ok(vec![
                Tensor::from_parts(vec![labels.len()], ds),
                Tensor::scalar(lambda * u),
            ])
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let z = Tensor::<f32>::zeros(&[1, 2]);
        let l = cross_entropy_loss(&z, &[0]).unwrap();
        assert!((l.value.data()[0] - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn loss_decreases_with_margin() {
        let mut prev = f32::INFINITY;
        for m in [0.0f32, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
            let z = Tensor::new(vec![1, 2], vec![m, 0.0]).unwrap();
            let l = cross_entropy_loss(&z, &[0]).unwrap().value.data()[0];
            assert!(l <= prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let z = Tensor::<f32>::zeros(&[1, 2]);
        assert!(cross_entropy_loss(&z, &[2]).is_err());
    }

    #[test]
    fn hinge_cases() {
        let s = Tensor::<f32>::new(vec![1], vec![2.0]).unwrap();
        assert_eq!(hinge_loss(&s, &[1], 0.0, 0.0).unwrap().value.data()[0], 0.0);
        let s = Tensor::<f32>::new(vec![1], vec![0.0]).unwrap();
        assert_eq!(hinge_loss(&s, &[1], 0.0, 0.0).unwrap().value.data()[0], 1.0);
        assert!(hinge_loss(&s, &[0], 0.0, 0.0).is_err());
    }
}
