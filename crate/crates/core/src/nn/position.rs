//! Ops over the spatial positions of a feature map, used by attention.

use super::graph::{shape_err, Backward, BackwardCtx, Contributions, Graph, NnError, Var};
use super::tensor::{Scalar, Tensor};

struct ToPositionsOp {
    input: Var,
    channels: usize,
    positions: usize,
}

impl<T: Scalar> Backward<T> for ToPositionsOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let (c, t) = (self.channels, self.positions);
        let gy = grad_out.data();
        let mut dx = vec![T::zero(); gy.len()];
        for (n, block) in dx.chunks_mut(c * t).enumerate() {
            for ch in 0..c {
                for p in 0..t {
                    block[ch * t + p] = gy[n * c * t + p * c + ch];
                }
            }
        }
        vec![(self.input, Tensor::new(ctx.value(self.input).shape(), dx))]
    }
}

struct PositionWeightOp {
    features: Var,
    weights: Var,
    dim: usize,
    /// Weighted sum over positions instead of per-position scaling.
    pooled: bool,
}

impl<T: Scalar> Backward<T> for PositionWeightOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let h = ctx.value(self.features);
        let alpha = ctx.value(self.weights).data();
        let gy = grad_out.data();
        let d = self.dim;
        let positions = alpha.len() / h.shape()[0].max(1);
        let mut dh = vec![T::zero(); h.numel()];
        let mut dalpha = vec![0.0f64; alpha.len()];
        for (i, &a) in alpha.iter().enumerate() {
            let g = if self.pooled {
                let n = i / positions;
                &gy[n * d..(n + 1) * d]
            } else {
                &gy[i * d..(i + 1) * d]
            };
            let row = &h.data()[i * d..(i + 1) * d];
            for k in 0..d {
                dh[i * d + k] = g[k] * a;
                dalpha[i] += g[k].f64() * row[k].f64();
            }
        }
        let mut out = Vec::new();
        if ctx.needs(self.features) {
            out.push((self.features, Tensor::new(h.shape(), dh)));
        }
        if ctx.needs(self.weights) {
            out.push((self.weights, Tensor::from_f64(ctx.value(self.weights).shape(), &dalpha)));
        }
        out
    }
}

impl<T: Scalar> Graph<T> {
    /// `[N,C,H,W]` to `[N,H*W,C]`; position index runs row-major over the grid.
    pub fn to_positions(&mut self, x: Var) -> Result<Var, NnError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(shape_err("to_positions", format!("expected NCHW input, got {xs:?}")));
        }
        let (c, t) = (xs[1], xs[2] * xs[3]);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for (n, block) in out.chunks_mut(c * t).enumerate() {
            for ch in 0..c {
                for p in 0..t {
                    block[p * c + ch] = xv[n * c * t + ch * t + p];
                }
            }
        }
        let op = ToPositionsOp {
            input: x,
            channels: c,
            positions: t,
        };
        self.push_op("to_positions", Tensor::new(&[xs[0], t, c], out), &[x], op)
    }

    fn position_weight(&mut self, name: &'static str, h: Var, alpha: Var, pooled: bool) -> Result<Var, NnError> {
        let hs = self.value(h).shape().to_vec();
        let as_ = self.value(alpha).shape().to_vec();
        if hs.len() != 3 || as_ != hs[..2] {
            return Err(shape_err(name, format!("features {hs:?}, weights {as_:?}")));
        }
        let (n, t, d) = (hs[0], hs[1], hs[2]);
        let hv = self.value(h).data();
        let av = self.value(alpha).data();
        let value = if pooled {
            let mut out = vec![0.0f64; n * d];
            for (i, &a) in av.iter().enumerate() {
                let dst = &mut out[(i / t) * d..(i / t + 1) * d];
                for (o, v) in dst.iter_mut().zip(&hv[i * d..(i + 1) * d]) {
                    *o += a.f64() * v.f64();
                }
            }
            Tensor::from_f64(&[n, d], &out)
        } else {
            let out = hv.chunks(d.max(1)).zip(av).flat_map(|(row, &a)| row.iter().map(move |&v| v * a)).collect();
            Tensor::new(&hs, out)
        };
        let op = PositionWeightOp {
            features: h,
            weights: alpha,
            dim: d,
            pooled,
        };
        self.push_op(name, value, &[h, alpha], op)
    }

    /// Scales every position `h[n,t,:]` by `alpha[n,t]`.
    pub fn scale_positions(&mut self, h: Var, alpha: Var) -> Result<Var, NnError> {
        self.position_weight("scale_positions", h, alpha, false)
    }

    /// `sum_t alpha[n,t] * h[n,t,:]`, giving `[N,d]`.
    pub fn pool_positions(&mut self, h: Var, alpha: Var) -> Result<Var, NnError> {
        self.position_weight("pool_positions", h, alpha, true)
    }
}
