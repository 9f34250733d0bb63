use super::graph::{shape_err, Backward, BackwardCtx, Contributions, Graph, NnError, Var};
use super::tensor::{Scalar, Tensor};

/// Statistics source for [`Graph::batch_norm`].
#[derive(Debug, Clone)]
pub enum BnMode<'a> {
    /// Normalize with the batch's own per-channel statistics.
    Train,
    /// Normalize with fixed (running) statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel batch statistics; `var` is the biased estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Values per channel (N * H * W).
    pub count: usize,
}

struct BatchNormOp<T> {
    input: Var,
    gamma: Var,
    beta: Var,
    /// Normalized input.
    x_hat: Vec<T>,
    inv_std: Vec<f64>,
    batch_stats: bool,
    batch: usize,
    channels: usize,
    plane: usize,
}

impl<T: Scalar> Backward<T> for BatchNormOp<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let gamma = ctx.value(self.gamma).data();
        let gy = grad_out.data();
        let count = (self.batch * self.plane) as f64;
        let idx = |n: usize, c: usize| (n * self.channels + c) * self.plane;

        let mut dgamma = vec![0.0f64; self.channels];
        let mut dbeta = vec![0.0f64; self.channels];
        for n in 0..self.batch {
            for c in 0..self.channels {
                let start = idx(n, c);
                for i in start..start + self.plane {
                    let g = gy[i].f64();
                    dbeta[c] += g;
                    dgamma[c] += g * self.x_hat[i].f64();
                }
            }
        }

        let mut out = Vec::new();
        if ctx.needs(self.input) {
            let mut dx = vec![T::zero(); gy.len()];
            for c in 0..self.channels {
                let scale = gamma[c].f64() * self.inv_std[c];
                for n in 0..self.batch {
                    let start = idx(n, c);
                    for i in start..start + self.plane {
                        let g = gy[i].f64();
                        let v = if self.batch_stats {
                            scale * (g - dbeta[c] / count - self.x_hat[i].f64() * dgamma[c] / count)
                        } else {
                            scale * g
                        };
                        dx[i] = T::from_f64_lossy(v);
                    }
                }
            }
            out.push((self.input, Tensor::new(ctx.value(self.input).shape(), dx)));
        }
        if ctx.needs(self.gamma) {
            out.push((self.gamma, Tensor::from_f64(&[self.channels], &dgamma)));
        }
        if ctx.needs(self.beta) {
            out.push((self.beta, Tensor::from_f64(&[self.channels], &dbeta)));
        }
        out
    }
}

impl<T: Scalar> Graph<T> {
    /// Per-channel normalization of `x [N,C,H,W]` followed by the affine
    /// map `gamma * x_hat + beta`. In training mode also returns the batch
    /// statistics so the caller can update running estimates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_>, eps: f64) -> Result<(Var, Option<BatchStats>), NnError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 {
            return Err(shape_err("batch_norm", format!("expected NCHW input, got {xs:?}")));
        }
        let (batch, channels, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.value(gamma).shape() != [channels] || self.value(beta).shape() != [channels] {
            return Err(shape_err("batch_norm", format!("affine parameters must have shape [{channels}]")));
        }
        let count = batch * plane;
        let xv = self.value(x).data();
        let idx = |n: usize, c: usize| (n * channels + c) * plane;

        let (mean, var, stats) = match mode {
            BnMode::Train => {
                if batch < 2 {
                    return Err(NnError::BatchTooSmall(batch));
                }
                let mut mean = vec![0.0f64; channels];
                let mut var = vec![0.0f64; channels];
                for c in 0..channels {
                    let mut sum = 0.0;
                    for n in 0..batch {
                        sum += xv[idx(n, c)..idx(n, c) + plane].iter().map(|v| v.f64()).sum::<f64>();
                    }
                    mean[c] = sum / count as f64;
                    let mut sq = 0.0;
                    for n in 0..batch {
                        sq += xv[idx(n, c)..idx(n, c) + plane]
                            .iter()
                            .map(|v| (v.f64() - mean[c]).powi(2))
                            .sum::<f64>();
                    }
                    var[c] = sq / count as f64;
                }
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(stats))
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != channels || var.len() != channels {
                    return Err(shape_err("batch_norm", "running statistics length differs from channel count"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut x_hat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for n in 0..batch {
            for c in 0..channels {
                let (g, b) = (gv[c].f64(), bv[c].f64());
                for i in idx(n, c)..idx(n, c) + plane {
                    let h = (xv[i].f64() - mean[c]) * inv_std[c];
                    x_hat[i] = T::from_f64_lossy(h);
                    out[i] = T::from_f64_lossy(g * h + b);
                }
            }
        }
        let op = BatchNormOp {
            input: x,
            gamma,
            beta,
            x_hat,
            inv_std,
            batch_stats: stats.is_some(),
            batch,
            channels,
            plane,
        };
        let y = self.push_op("batch_norm", Tensor::new(&xs, out), &[x, gamma, beta], op)?;
        Ok((y, stats))
    }
}
