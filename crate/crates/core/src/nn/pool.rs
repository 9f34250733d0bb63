use super::graph::{shape_err, Backward, BackwardCtx, Contributions, Graph, NnError, Var};
use super::tensor::{Scalar, Tensor};

struct MaxPoolOp {
    input: Var,
    /// Flat input index of the winner for every output element.
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for MaxPoolOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let shape = ctx.value(self.input).shape();
        let mut dx = vec![T::zero(); shape.iter().product()];
        for (&src, &g) in self.argmax.iter().zip(grad_out.data()) {
            dx[src] = dx[src] + g;
        }
        vec![(self.input, Tensor::new(shape, dx))]
    }
}

/// Region `[floor(i*len/out), floor((i+1)*len/out))` of adaptive pooling.
fn adaptive_bounds(i: usize, len: usize, out: usize) -> (usize, usize) {
    (i * len / out, (i + 1) * len / out)
}

struct AvgPoolOp {
    input: Var,
    out_h: usize,
    out_w: usize,
}

impl<T: Scalar> Backward<T> for AvgPoolOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let shape = ctx.value(self.input).shape();
        let (h, w) = (shape[2], shape[3]);
        let planes = shape[0] * shape[1];
        let mut dx = vec![T::zero(); shape.iter().product()];
        let gy = grad_out.data();
        for p in 0..planes {
            for oy in 0..self.out_h {
                let (y0, y1) = adaptive_bounds(oy, h, self.out_h);
                for ox in 0..self.out_w {
                    let (x0, x1) = adaptive_bounds(ox, w, self.out_w);
                    let share = gy[(p * self.out_h + oy) * self.out_w + ox] / T::from_usize(((y1 - y0) * (x1 - x0)).max(1)).unwrap();
                    for y in y0..y1 {
                        for x in x0..x1 {
                            dx[p * h * w + y * w + x] = share;
                        }
                    }
                }
            }
        }
        vec![(self.input, Tensor::new(shape, dx))]
    }
}

impl<T: Scalar> Graph<T> {
    /// 2x2 max pooling with stride 2. Odd trailing rows/columns form
    /// partial windows (as if padded with -inf). Ties go to the first
    /// element in row-major order.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var, NnError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(shape_err("max_pool2", format!("expected NCHW input, got {xs:?}")));
        }
        let (h, w) = (xs[2], xs[3]);
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let planes = xs[0] * xs[1];
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for xx in 2 * ox..(2 * ox + 2).min(w) {
                            let i = base + y * w + xx;
                            if xv[i] > xv[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[xs[0], xs[1], oh, ow], out);
        self.push_op("max_pool2", value, &[x], MaxPoolOp { input: x, argmax })
    }

    /// Averages `x [N,C,H,W]` over an `out_h x out_w` grid of regions.
    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var, NnError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || xs[2] < out_h || xs[3] < out_w || out_h == 0 || out_w == 0 {
            return Err(shape_err("adaptive_avg_pool", format!("input {xs:?} to grid {out_h}x{out_w}")));
        }
        let (h, w) = (xs[2], xs[3]);
        let planes = xs[0] * xs[1];
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        for p in 0..planes {
            for oy in 0..out_h {
                let (y0, y1) = adaptive_bounds(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = adaptive_bounds(ox, w, out_w);
                    let mut sum = 0.0f64;
                    for y in y0..y1 {
                        sum += xv[p * h * w + y * w + x0..p * h * w + y * w + x1].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    out.push(T::from_f64_lossy(sum / ((y1 - y0) * (x1 - x0)) as f64));
                }
            }
        }
        let value = Tensor::new(&[xs[0], xs[1], out_h, out_w], out);
        self.push_op("adaptive_avg_pool", value, &[x], AvgPoolOp { input: x, out_h, out_w })
    }
}
