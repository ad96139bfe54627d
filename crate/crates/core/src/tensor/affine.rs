use super::kernels::{axpy, dot};
use super::{GradPair, Real, Tensor};
use crate::error::{Error, Result};

fn dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.rank() != 2 || w.rank() != 2 {
        return Err(Error::shape(format!(
            "affine expects x [N,D] and w [D,M], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if x.shape()[1] != w.shape()[0] {
        return Err(Error::shape(format!(
            "affine inner dimension mismatch: x has {} columns, w has {} rows",
            x.shape()[1],
            w.shape()[0]
        )));
    }
    Ok((x.shape()[0], x.shape()[1], w.shape()[1]))
}

/// `x · w + b` with the bias broadcast over rows.
pub fn affine_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, m) = dims(x, w)?;
    if b.shape() != [m] {
        return Err(Error::shape(format!("affine bias must be [{m}], got {:?}", b.shape())));
    }
    let mut out = Vec::with_capacity(n * m);
    for ni in 0..n {
        let mut row = b.data().to_vec();
        let xr = &x.data()[ni * d..(ni + 1) * d];
        for (di, &a) in xr.iter().enumerate() {
            if a != T::zero() {
                axpy(a, &w.data()[di * m..(di + 1) * m], &mut row);
            }
        }
        out.extend_from_slice(&row);
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

#[derive(Clone, Debug)]
pub struct AffineGrads<T: Real = f32> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn affine_backward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Result<AffineGrads<T>> {
    let (n, d, m) = dims(x, w)?;
    if dy.shape() != [n, m] {
        return Err(Error::shape(format!(
            "affine upstream gradient {:?} does not match output [{n}, {m}]",
            dy.shape()
        )));
    }
    let mut dw = vec![T::zero(); d * m];
    let mut db = vec![T::zero(); m];
    for ni in 0..n {
        let g = &dy.data()[ni * m..(ni + 1) * m];
        for (acc, &v) in db.iter_mut().zip(g) {
            *acc = *acc + v;
        }
        let xr = &x.data()[ni * d..(ni + 1) * d];
        for (di, &a) in xr.iter().enumerate() {
            if a != T::zero() {
                axpy(a, g, &mut dw[di * m..(di + 1) * m]);
            }
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = Vec::with_capacity(n * d);
        for ni in 0..n {
            let g = &dy.data()[ni * m..(ni + 1) * m];
            dx.extend((0..d).map(|di| dot(g, &w.data()[di * m..(di + 1) * m])));
        }
        Tensor::from_parts(vec![n, d], dx)
    });
    Ok(AffineGrads {
        dx,
        dw: Tensor::from_parts(vec![d, m], dw),
        db: Tensor::from_parts(vec![m], db),
    })
}

/// Fully connected map; pullback yields `[dx, dw, db]`.
pub fn affine<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<GradPair<T>> {
    let value = affine_forward(x, w, b)?;
    let (x, w) = (x.clone(), w.clone());
    Ok(GradPair::new(
        value,
        Box::new(move |dy| {
            let g = affine_backward(&x, &w, dy, true)?;
            Ok(vec![g.dx.expect("dx requested"), g.dw, g.db])
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_arithmetic() {
        let x = Tensor::<f32>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::<f32>::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f32>::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(affine_forward(&x, &w, &b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn identity_weights_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f32>::randn(&[3, 4], 1.0, &mut rng);
        let mut w = Tensor::<f32>::zeros(&[4, 4]);
        for i in 0..4 {
            w.data_mut()[i * 4 + i] = 1.0;
        }
        assert_eq!(affine_forward(&x, &w, &Tensor::zeros(&[4])).unwrap(), x);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f32>::randn(&[5, 9], 1.0, &mut rng);
        let w = Tensor::<f32>::randn(&[9, 4], 1.0, &mut rng);
        let b = Tensor::<f32>::randn(&[4], 1.0, &mut rng);
        let y = affine_forward(&x, &w, &b).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let mut acc = b.data()[j] as f64;
                for k in 0..9 {
                    acc += x.at(&[i, k]) as f64 * w.at(&[k, j]) as f64;
                }
                assert!((y.at(&[i, j]) as f64 - acc).abs() <= 1e-6 * acc.abs().max(1.0));
            }
        }
    }

    #[test]
    fn inner_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::<f32>::zeros(&[4, 2]);
        assert!(affine_forward(&x, &w, &Tensor::zeros(&[2])).is_err());
    }
}
