//! Index kernels behind convolution, pooling, permutation and expansion.

use super::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Some(ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds `(C, H, W)` into `(C·kh·kw, Ho·Wo)`.
pub(crate) fn im2col<F: Float>(x: &[F], g: &ConvGeom) -> Vec<F> {
    let mut out = vec![F::zero(); g.rows() * g.cols()];
    let p = g.pad as isize;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut out[row * g.cols()..(row + 1) * g.cols()];
                for oy in 0..g.ho {
                    let y = (oy * g.stride + ki) as isize - p;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let src = &x[(c * g.h + y as usize) * g.w..];
                    for ox in 0..g.wo {
                        let xx = (ox * g.stride + kj) as isize - p;
                        if xx >= 0 && xx < g.w as isize {
                            dst[oy * g.wo + ox] = src[xx as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: folds columns back, summing overlaps.
pub(crate) fn col2im_add<F: Float>(cols: &[F], g: &ConvGeom, dx: &mut [F]) {
    let p = g.pad as isize;
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * g.cols()..(row + 1) * g.cols()];
                for oy in 0..g.ho {
                    let y = (oy * g.stride + ki) as isize - p;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + y as usize) * g.w;
                    for ox in 0..g.wo {
                        let xx = (ox * g.stride + kj) as isize - p;
                        if xx >= 0 && xx < g.w as isize {
                            dx[base + xx as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output extent of a ceil-mode pooling window sweep.
pub(crate) fn pool_extent(n: usize, k: usize, s: usize) -> usize {
    if n <= k {
        1
    } else {
        (n - k).div_ceil(s) + 1
    }
}

/// Calls `f(out_index, in_index)` for every output element of a strided
/// gather, where `in_strides` may contain zeros (broadcast axes).
pub(crate) fn for_each_strided(out_shape: &[usize], in_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = out_shape.len();
    let total: usize = out_shape.iter().product();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for out in 0..total {
        f(out, src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += in_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= in_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_walk_transposes() {
        // 2x3 -> 3x2 transpose via in-strides of the source
        let src = [0.0f64, 1.0, 2.0, 3.0, 4.0, 5.0];
        let mut out = [0.0; 6];
        for_each_strided(&[3, 2], &[1, 3], |o, i| out[o] = src[i]);
        assert_eq!(out, [0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn pool_extent_is_ceil() {
        assert_eq!(pool_extent(8, 2, 2), 4);
        assert_eq!(pool_extent(7, 2, 2), 4);
        assert_eq!(pool_extent(1, 2, 2), 1);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        let g = ConvGeom::new(2, 4, 5, 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let cols = im2col(&x, &g);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 40];
        col2im_add(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
