use super::kernels::{axpy, col2im, dot, im2col, ConvDims};
use super::{GradPair, Real, Tensor};
use crate::error::{Error, Result};

/// Output extent of a strided, zero-padded window along one axis:
/// `floor((input + 2 pad - kernel) / stride) + 1`. Trailing rows that do not fill a
/// whole stride are dropped.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("convolution stride must be positive"));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<(usize, usize, ConvDims)> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(Error::shape(format!(
            "conv2d expects x [N,C,H,W] and w [K,C,R,S], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (k, wc, r, s) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if c != wc {
        return Err(Error::shape(format!(
            "conv2d channel mismatch: input has {c} channels, weights expect {wc}"
        )));
    }
    let oh = conv_output_extent(h, r, stride, pad)?;
    let ow = conv_output_extent(wd, s, stride, pad)?;
    Ok((
        n,
        k,
        ConvDims {
            c,
            h,
            w: wd,
            r,
            s,
            stride,
            pad,
            oh,
            ow,
        },
    ))
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, k, d) = dims(x, w, stride, pad)?;
    if b.shape() != [k] {
        return Err(Error::shape(format!(
            "conv2d bias must be [{k}], got {:?}",
            b.shape()
        )));
    }
    let (patch, p) = (d.patch(), d.positions());
    let in_len = d.c * d.h * d.w;
    let mut out = vec![T::zero(); n * k * p];
    let mut cols = vec![T::zero(); patch * p];
    for ni in 0..n {
        im2col(&x.data()[ni * in_len..(ni + 1) * in_len], &d, &mut cols);
        let out_n = &mut out[ni * k * p..(ni + 1) * k * p];
        for ki in 0..k {
            let row = &mut out_n[ki * p..(ki + 1) * p];
            row.iter_mut().for_each(|v| *v = b.data()[ki]);
            let wk = &w.data()[ki * patch..(ki + 1) * patch];
            for (j, &a) in wk.iter().enumerate() {
                axpy(a, &cols[j * p..(j + 1) * p], row);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, k, d.oh, d.ow], out))
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T: Real = f32> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

/// Gradients of a convolution given the upstream gradient `dy`.
/// The input gradient is skipped when `need_dx` is false.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> Result<ConvGrads<T>> {
    let (n, k, d) = dims(x, w, stride, pad)?;
    if dy.shape() != [n, k, d.oh, d.ow] {
        return Err(Error::shape(format!(
            "conv2d upstream gradient {:?} does not match output [{n}, {k}, {}, {}]",
            dy.shape(),
            d.oh,
            d.ow
        )));
    }
    let (patch, p) = (d.patch(), d.positions());
    let in_len = d.c * d.h * d.w;
    let mut dw = vec![T::zero(); k * patch];
    let mut db = vec![T::zero(); k];
    let mut dx = if need_dx {
        Some(vec![T::zero(); x.len()])
    } else {
        None
    };
    let mut cols = vec![T::zero(); patch * p];
    let mut dcols = vec![T::zero(); patch * p];
    for ni in 0..n {
        im2col(&x.data()[ni * in_len..(ni + 1) * in_len], &d, &mut cols);
        let dy_n = &dy.data()[ni * k * p..(ni + 1) * k * p];
        for ki in 0..k {
            let g = &dy_n[ki * p..(ki + 1) * p];
            db[ki] = db[ki] + g.iter().copied().sum::<T>();
            let dwk = &mut dw[ki * patch..(ki + 1) * patch];
            for (j, slot) in dwk.iter_mut().enumerate() {
                *slot = *slot + dot(g, &cols[j * p..(j + 1) * p]);
            }
        }
        if let Some(dx) = dx.as_mut() {
            dcols.iter_mut().for_each(|v| *v = T::zero());
            for ki in 0..k {
                let g = &dy_n[ki * p..(ki + 1) * p];
                let wk = &w.data()[ki * patch..(ki + 1) * patch];
                for (j, &a) in wk.iter().enumerate() {
                    axpy(a, g, &mut dcols[j * p..(j + 1) * p]);
                }
            }
            col2im(&dcols, &d, &mut dx[ni * in_len..(ni + 1) * in_len]);
        }
    }
    Ok(ConvGrads {
        dx: dx.map(|v| Tensor::from_parts(x.shape().to_vec(), v)),
        dw: Tensor::from_parts(w.shape().to_vec(), dw),
        db: Tensor::from_parts(vec![k], db),
    })
}

/// Convolution of `x [N,C,H,W]` with `w [K,C,R,S]` plus bias; pullback yields `[dx, dw, db]`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<GradPair<T>> {
    let value = conv2d_forward(x, w, b, stride, pad)?;
    let (x, w) = (x.clone(), w.clone());
    Ok(GradPair::new(
        value,
        Box::new(move |dy| {
            let g = conv2d_backward(&x, &w, dy, stride, pad, true)?;
            Ok(vec![g.dx.expect("dx requested"), g.dw, g.db])
        }),
    ))
}
