//! 2-D cross-correlation as im2col + GEMM.

use super::graph::{shape_err, Backward, BackwardCtx, Contributions, Graph, NnError, Var};
use super::tensor::{matmul, Scalar, Tensor, Trans};

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Output columns `lo..hi` whose input column `ox + kj - padding` is
    /// inside the image, for stride 1.
    fn valid_span(&self, kj: usize) -> (usize, usize) {
        let lo = self.padding.saturating_sub(kj).min(self.out_w);
        let hi = (self.width + self.padding).saturating_sub(kj).min(self.out_w).max(lo);
        (lo, hi)
    }
}

/// Unfolds one `C x H x W` image into a `(C*kh*kw) x (out_h*out_w)` matrix.
fn im2col<T: Scalar>(image: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let n_cols = g.col_cols();
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if g.stride == 1 {
                        let (lo, hi) = g.valid_span(kj);
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if lo < hi {
                            line[lo..hi].copy_from_slice(&src[lo + kj - g.padding..hi + kj - g.padding]);
                        }
                        continue;
                    }
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *slot = if ix < 0 || ix >= g.width as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, image: &mut [T]) {
    let n_cols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if g.stride == 1 {
                        let (lo, hi) = g.valid_span(kj);
                        if lo == hi {
                            continue;
                        }
                        let line = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                        for (d, &v) in dst[lo + kj - g.padding..hi + kj - g.padding].iter_mut().zip(line) {
                            *d = *d + v;
                        }
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    input: Var,
    weight: Var,
    bias: Var,
    geom: ConvGeometry,
    filters: usize,
    batch: usize,
}

impl<T: Scalar> Backward<T> for Conv2dOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let g = &self.geom;
        let x = ctx.value(self.input).data();
        let w = ctx.value(self.weight).data();
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let out_len = self.filters * ncols;
        let need_x = ctx.needs(self.input);
        let need_w = ctx.needs(self.weight);

        let mut dw = vec![T::zero(); self.filters * rows];
        let mut dx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
        let mut cols = vec![T::zero(); rows * ncols];
        let mut dcols = if need_x { vec![T::zero(); rows * ncols] } else { Vec::new() };
        for n in 0..self.batch {
            let gout = &grad_out.data()[n * out_len..(n + 1) * out_len];
            if need_w {
                im2col(&x[n * g.image_len()..(n + 1) * g.image_len()], g, &mut cols);
                matmul(self.filters, ncols, rows, gout, Trans::No, &cols, Trans::Yes, &mut dw, true);
            }
            if need_x {
                matmul(rows, self.filters, ncols, w, Trans::Yes, gout, Trans::No, &mut dcols, false);
                col2im(&dcols, g, &mut dx[n * g.image_len()..(n + 1) * g.image_len()]);
            }
        }

        let mut out = Vec::new();
        if need_x {
            out.push((self.input, Tensor::new(ctx.value(self.input).shape(), dx)));
        }
        if need_w {
            out.push((self.weight, Tensor::new(ctx.value(self.weight).shape(), dw)));
        }
        if ctx.needs(self.bias) {
            let mut db = vec![0.0f64; self.filters];
            for n in 0..self.batch {
                for (f, acc) in db.iter_mut().enumerate() {
                    let start = n * out_len + f * ncols;
                    *acc += grad_out.data()[start..start + ncols].iter().map(|v| v.f64()).sum::<f64>();
                }
            }
            out.push((self.bias, Tensor::from_f64(&[self.filters], &db)));
        }
        out
    }
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation of `x [N,C,H,W]` with `weight [F,C,kh,kw]` plus
    /// `bias [F]`, zero padding on all sides.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var, NnError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || stride == 0 {
            return Err(shape_err("conv2d", format!("input {xs:?}, weight {ws:?}, stride {stride}")));
        }
        if ws[1] != xs[1] || bs != [ws[0]] {
            return Err(shape_err("conv2d", format!("input {xs:?}, weight {ws:?}, bias {bs:?}")));
        }
        let (kh, kw) = (ws[2], ws[3]);
        if xs[2] + 2 * padding < kh || xs[3] + 2 * padding < kw {
            return Err(shape_err("conv2d", format!("kernel {kh}x{kw} larger than padded input {xs:?}")));
        }
        let geom = ConvGeometry {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (xs[2] + 2 * padding - kh) / stride + 1,
            out_w: (xs[3] + 2 * padding - kw) / stride + 1,
        };
        let (batch, filters) = (xs[0], ws[0]);
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());

        let mut out = vec![T::zero(); batch * filters * ncols];
        let mut cols = vec![T::zero(); rows * ncols];
        {
            let xv = self.value(x).data();
            let wv = self.value(weight).data();
            let bv = self.value(bias).data();
            for n in 0..batch {
                im2col(&xv[n * geom.image_len()..(n + 1) * geom.image_len()], &geom, &mut cols);
                let dst = &mut out[n * filters * ncols..(n + 1) * filters * ncols];
                for (f, chunk) in dst.chunks_mut(ncols).enumerate() {
                    chunk.fill(bv[f]);
                }
                matmul(filters, rows, ncols, wv, Trans::No, &cols, Trans::No, dst, true);
            }
        }
        let value = Tensor::new(&[batch, filters, geom.out_h, geom.out_w], out);
        let op = Conv2dOp {
            input: x,
            weight,
            bias,
            geom,
            filters,
            batch,
        };
        self.push_op("conv2d", value, &[x, weight, bias], op)
    }
}
