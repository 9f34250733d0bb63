//! Contextual attention over the positions of a feature map.
//!
//! For positions `h_t` of dimension `d`:
//! `u_t = tanh(W h_t + b)`, `alpha = softmax_t(u_t . u_c)` and
//! `h~_t = alpha_t h_t`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{kaiming_uniform, Graph, NnError, Scalar, Tensor, Var};

/// How the attention weights are applied to the positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Every position scaled by its weight; shape `[N,T,d]` is kept.
    #[default]
    Scale,
    /// Weighted sum over positions, giving `[N,d]`.
    WeightedSum,
}

/// `W [d,d]` (applied as `W h`), `b [d]` and context vector `u_c [d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub u_c: Tensor<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        Self {
            w: kaiming_uniform(&[d, d], d, rng),
            b: Tensor::zeros(&[d]),
            u_c: Tensor::uniform(&[d], 1.0 / (d as f64).sqrt(), rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.numel()
    }

    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> AttentionVars {
        AttentionVars {
            w: g.leaf(self.w.clone(), requires_grad),
            b: g.leaf(self.b.clone(), requires_grad),
            u_c: g.leaf(self.u_c.clone(), requires_grad),
        }
    }
}

/// Attention parameters placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w: Var,
    pub b: Var,
    pub u_c: Var,
}

/// Applies attention to `h [N,T,d]`. Returns the weighted features and the
/// weights `alpha [N,T]`.
pub fn contextual_attention<T: Scalar>(g: &mut Graph<T>, h: Var, p: AttentionVars, mode: AttentionMode) -> Result<(Var, Var), NnError> {
    let hs = g.value(h).shape().to_vec();
    let d = g.value(p.b).numel();
    if hs.len() != 3 || hs[1] == 0 || hs[2] != d || g.value(p.w).shape() != [d, d] || g.value(p.u_c).shape() != [d] {
        return Err(NnError::Shape {
            op: "contextual_attention",
            detail: format!("features {hs:?} with attention dimension {d}"),
        });
    }
    let (n, t) = (hs[0], hs[1]);
    let rows = g.reshape(h, &[n * t, d])?;
    let wt = g.transpose(p.w)?;
    let pre = g.linear(rows, wt, Some(p.b))?;
    let u = g.tanh(pre)?;
    let context = g.reshape(p.u_c, &[d, 1])?;
    let scores = g.linear(u, context, None)?;
    let scores = g.reshape(scores, &[n, t])?;
    let alpha = g.softmax(scores)?;
    let out = match mode {
        AttentionMode::Scale => g.scale_positions(h, alpha)?,
        AttentionMode::WeightedSum => g.pool_positions(h, alpha)?,
    };
    Ok((out, alpha))
}
