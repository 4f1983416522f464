//! 2-D convolution and its adjoint via im2col / col2im.
//!
//! Weight layout follows the usual convention: `(out, in, kh, kw)` for
//! [`Tensor::conv2d`] and `(in, out, kh, kw)` for
//! [`Tensor::conv_transpose2d`]. With that convention the transposed
//! convolution of `y` by `w` is exactly the input-gradient of `conv2d(·, w)`
//! applied to `y`.

use rayon::prelude::*;

use super::gemm::{gemm, Op};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Weight-gradient partial sums are formed over fixed groups of samples and
/// then added in group order, so the result is independent of thread count.
const WGRAD_GROUP: usize = 4;

/// Output size of a convolution along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

/// Output size of a transposed convolution along one axis.
pub fn conv_transpose_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    let full = (input - 1) * stride + kernel + output_padding;
    full.checked_sub(2 * padding).filter(|&v| v > 0)
}

/// Geometry of a (forward) convolution over one sample.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn image_len(&self) -> usize {
        self.channels * self.h * self.w
    }
    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }
    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one `(C, H, W)` image into `(C·kh·kw, Ho·Wo)` patches.
    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let ncol = self.col_cols();
        for c in 0..self.channels {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
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

    /// Adjoint of [`Self::im2col`]: scatters patches back, accumulating.
    fn col2im<T: Element>(&self, cols: &[T], x: &mut [T]) {
        let ncol = self.col_cols();
        for c in 0..self.channels {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] = dst[ix as usize] + src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Sums per-group partial weight gradients in a fixed order.
fn grouped_weight_grad<T: Element>(
    n: usize,
    len: usize,
    partial: impl Fn(usize, &mut [T]) + Sync,
) -> Vec<T> {
    let groups: Vec<Vec<T>> = (0..n.div_ceil(WGRAD_GROUP))
        .into_par_iter()
        .map(|gi| {
            let mut acc = vec![T::zero(); len];
            for s in gi * WGRAD_GROUP..((gi + 1) * WGRAD_GROUP).min(n) {
                partial(s, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![T::zero(); len];
    for g in &groups {
        super::add_assign(&mut total, g);
    }
    total
}

impl<T: Element> Tensor<T> {
    /// Cross-correlation of an `(N, C, H, W)` input with `(O, C, kh, kw)`
    /// filters.
    pub fn conv2d(&self, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let (xs, ws) = (self.shape().to_vec(), weight.shape().to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::dim("conv2d", &xs, &ws));
        }
        if stride == 0 {
            return Err(Error::param("conv2d: stride must be at least 1"));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        let (Some(ho), Some(wo)) = (
            conv_output_size(h, kh, stride, padding),
            conv_output_size(w, kw, stride, padding),
        ) else {
            return Err(Error::dim("conv2d: kernel larger than padded input", &xs, &ws));
        };
        let g = Geometry {
            channels: c,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            ho,
            wo,
        };
        let x = self.to_vec();
        let wt = weight.to_vec();
        let (krows, ncol) = (g.col_rows(), g.col_cols());

        let mut out = vec![T::zero(); n * o * ncol];
        out.par_chunks_mut(o * ncol)
            .zip(x.par_chunks(g.image_len()))
            .for_each_init(
                || vec![T::zero(); krows * ncol],
                |cols, (out_n, x_n)| {
                    g.im2col(x_n, cols);
                    gemm(o, krows, ncol, &wt, Op::N, cols, Op::N, T::zero(), out_n);
                },
            );

        let need = [self.requires_grad(), weight.requires_grad()];
        Tensor::from_op(
            out,
            &[n, o, ho, wo],
            "conv2d",
            vec![self.clone(), weight.clone()],
            Box::new(move |grad| {
                let gx = need[0].then(|| {
                    let mut gx = vec![T::zero(); x.len()];
                    gx.par_chunks_mut(g.image_len())
                        .zip(grad.par_chunks(o * ncol))
                        .for_each_init(
                            || vec![T::zero(); krows * ncol],
                            |dcols, (gx_n, g_n)| {
                                gemm(krows, o, ncol, &wt, Op::T, g_n, Op::N, T::zero(), dcols);
                                g.col2im(dcols, gx_n);
                            },
                        );
                    gx
                });
                let gw = need[1].then(|| {
                    grouped_weight_grad(n, o * krows, |s, acc| {
                        let mut cols = vec![T::zero(); krows * ncol];
                        g.im2col(&x[s * g.image_len()..(s + 1) * g.image_len()], &mut cols);
                        let g_n = &grad[s * o * ncol..(s + 1) * o * ncol];
                        gemm(o, ncol, krows, g_n, Op::N, &cols, Op::T, T::one(), acc);
                    })
                });
                vec![gx, gw]
            }),
        )
    }

    /// Transposed convolution of an `(N, Cin, H, W)` input with
    /// `(Cin, Cout, kh, kw)` filters.
    ///
    /// Output size per axis is `(H − 1)·stride − 2·padding + k + output_padding`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<T>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Tensor<T>> {
        let (ys, ws) = (self.shape().to_vec(), weight.shape().to_vec());
        if ys.len() != 4 || ws.len() != 4 || ys[1] != ws[0] {
            return Err(Error::dim("conv_transpose2d", &ys, &ws));
        }
        if stride == 0 {
            return Err(Error::param("conv_transpose2d: stride must be at least 1"));
        }
        if output_padding >= stride {
            return Err(Error::param(format!(
                "conv_transpose2d: output_padding {output_padding} must be smaller than stride {stride}"
            )));
        }
        let (n, cin, h, w) = (ys[0], ys[1], ys[2], ys[3]);
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        let (Some(ho), Some(wo)) = (
            conv_transpose_output_size(h, kh, stride, padding, output_padding),
            conv_transpose_output_size(w, kw, stride, padding, output_padding),
        ) else {
            return Err(Error::dim("conv_transpose2d: empty output", &ys, &ws));
        };
        // The forward convolution whose input-gradient this op is.
        let g = Geometry {
            channels: cout,
            h: ho,
            w: wo,
            kh,
            kw,
            stride,
            pad: padding,
            ho: h,
            wo: w,
        };
        debug_assert_eq!(conv_output_size(ho, kh, stride, padding), Some(h));
        let y = self.to_vec();
        let wt = weight.to_vec();
        let (krows, ncol) = (g.col_rows(), g.col_cols());

        let mut out = vec![T::zero(); n * g.image_len()];
        out.par_chunks_mut(g.image_len())
            .zip(y.par_chunks(cin * ncol))
            .for_each_init(
                || vec![T::zero(); krows * ncol],
                |cols, (out_n, y_n)| {
                    gemm(krows, cin, ncol, &wt, Op::T, y_n, Op::N, T::zero(), cols);
                    g.col2im(cols, out_n);
                },
            );

        let need = [self.requires_grad(), weight.requires_grad()];
        Tensor::from_op(
            out,
            &[n, cout, ho, wo],
            "conv_transpose2d",
            vec![self.clone(), weight.clone()],
            Box::new(move |grad| {
                let gy = need[0].then(|| {
                    let mut gy = vec![T::zero(); y.len()];
                    gy.par_chunks_mut(cin * ncol)
                        .zip(grad.par_chunks(g.image_len()))
                        .for_each_init(
                            || vec![T::zero(); krows * ncol],
                            |dcols, (gy_n, g_n)| {
                                g.im2col(g_n, dcols);
                                gemm(cin, krows, ncol, &wt, Op::N, dcols, Op::N, T::zero(), gy_n);
                            },
                        );
                    gy
                });
                let gw = need[1].then(|| {
                    grouped_weight_grad(n, cin * krows, |s, acc| {
                        let mut dcols = vec![T::zero(); krows * ncol];
                        g.im2col(&grad[s * g.image_len()..(s + 1) * g.image_len()], &mut dcols);
                        let y_n = &y[s * cin * ncol..(s + 1) * cin * ncol];
                        gemm(cin, ncol, krows, y_n, Op::N, &dcols, Op::T, T::one(), acc);
                    })
                });
                vec![gy, gw]
            }),
        )
    }
}
