// Inner loops shared by the convolution and affine primitives.

use super::Real;

/// `y += a * x`
#[inline]
pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The reduction order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::zero(); 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] = acc[l] + a[l] * b[l];
        }
    }
    let mut tail = T::zero();
    for (a, b) in xr.iter().zip(yr) {
        tail = tail + *a * *b;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub r: usize,
    pub s: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn patch(&self) -> usize {
        self.c * self.r * self.s
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one `[C, H, W]` image into a `[C*R*S, OH*OW]` column matrix (zero padding).
pub(crate) fn im2col<T: Real>(img: &[T], d: &ConvDims, cols: &mut [T]) {
    let p = d.positions();
    debug_assert_eq!(cols.len(), d.patch() * p);
    for c in 0..d.c {
        let plane = &img[c * d.h * d.w..(c + 1) * d.h * d.w];
        for r in 0..d.r {
            for s in 0..d.s {
                let row = ((c * d.r + r) * d.s + s) * p;
                let out = &mut cols[row..row + p];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + r) as isize - d.pad as isize;
                    let dst = &mut out[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * d.stride + s) as isize - d.pad as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back into an image gradient.
pub(crate) fn col2im<T: Real>(cols: &[T], d: &ConvDims, img: &mut [T]) {
    let p = d.positions();
    for c in 0..d.c {
        let plane = &mut img[c * d.h * d.w..(c + 1) * d.h * d.w];
        for r in 0..d.r {
            for s in 0..d.s {
                let row = ((c * d.r + r) * d.s + s) * p;
                let src = &cols[row..row + p];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + r) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + s) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let x: Vec<f64> = (0..29).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = (0..29).map(|i| 1.0 - i as f64 * 0.25).collect();
        let naive: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((dot(&x, &y) - naive).abs() < 1e-9);
    }
}
