use super::{GradPair, Real, Tensor};
use crate::error::{Error, Result};

/// `floor((input - size) / stride) + 1`
pub fn pool_output_extent(input: usize, size: usize, stride: usize) -> Result<usize> {
    if size == 0 || stride == 0 {
        return Err(Error::invalid("pool size and stride must be positive"));
    }
    if input < size {
        return Err(Error::shape(format!(
            "pool window {size} larger than input extent {input}"
        )));
    }
    Ok((input - size) / stride + 1)
}

#[derive(Clone, Debug)]
pub struct MaxPoolOutput<T: Real = f32> {
    pub value: Tensor<T>,
    /// Flat input offset of the winning element for every output element.
    pub argmax: Vec<usize>,
}

pub fn maxpool_forward<T: Real>(x: &Tensor<T>, size: usize, stride: usize) -> Result<MaxPoolOutput<T>> {
    if x.rank() != 4 {
        return Err(Error::shape(format!(
            "maxpool expects [N,C,H,W], got {:?}",
            x.shape()
        )));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let oh = pool_output_extent(h, size, stride)?;
    let ow = pool_output_extent(w, size, stride)?;
    let mut value = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                // scan order is row-major within the window; strict `>` keeps the first winner
                for dy in 0..size {
                    let row = base + (oy * stride + dy) * w + ox * stride;
                    for i in row..row + size {
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                value.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPoolOutput {
        value: Tensor::from_parts(vec![n, c, oh, ow], value),
        argmax,
    })
}

/// Routes each upstream gradient to the recorded argmax position.
pub fn maxpool_backward<T: Real>(input_shape: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.len() != argmax.len() {
        return Err(Error::shape(format!(
            "maxpool upstream gradient has {} elements, expected {}",
            dy.len(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let g = dx.data_mut();
    for (&src, &d) in argmax.iter().zip(dy.data()) {
        g[src] = g[src] + d;
    }
    Ok(dx)
}

/// Max pooling over square windows; pullback yields `[dx]`. The argmax map is also returned.
pub fn maxpool<T: Real>(x: &Tensor<T>, size: usize, stride: usize) -> Result<(GradPair<T>, Vec<usize>)> {
    let MaxPoolOutput { value, argmax } = maxpool_forward(x, size, stride)?;
    let shape = x.shape().to_vec();
    let map = argmax.clone();
    Ok((
        GradPair::new(
            value,
            Box::new(move |dy| Ok(vec![maxpool_backward(&shape, &map, dy)?])),
        ),
        argmax,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(out.value.data(), &[4.0]);
        assert_eq!(out.argmax, vec![3]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let x = Tensor::<f32>::full(&[1, 1, 4, 4], 0.5);
        let (pair, argmax) = maxpool(&x, 2, 2).unwrap();
        assert!(pair.value.data().iter().all(|&v| v == 0.5));
        assert_eq!(argmax, vec![0, 2, 8, 10]);
        let g = pair.pull(&Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        let expect: Vec<f32> = (0..16)
            .map(|i| if [0, 2, 8, 10].contains(&i) { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(g[0].data(), &expect[..]);
    }

    #[test]
    fn overlapping_windows_match_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f32>::randn(&[1, 2, 7, 7], 1.0, &mut rng);
        let out = maxpool_forward(&x, 3, 2).unwrap();
        assert_eq!(out.value.shape(), &[1, 2, 3, 3]);
        for c in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            m = m.max(x.at(&[0, c, oy * 2 + dy, ox * 2 + dx]));
                        }
                    }
                    assert_eq!(out.value.at(&[0, c, oy, ox]), m);
                }
            }
        }
    }

    #[test]
    fn zero_size_or_stride_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        assert!(maxpool_forward(&x, 0, 1).is_err());
        assert!(maxpool_forward(&x, 2, 0).is_err());
        assert!(maxpool_forward(&x, 5, 1).is_err());
    }
}
