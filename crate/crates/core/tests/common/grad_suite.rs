//! Finite-difference checks for every differentiable op, shared by the
//! gradient tests and the acceptance run.

use coughscreen::attention::{contextual_attention, AttentionMode, AttentionVars};
use coughscreen::nn::{BnMode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grad_check;

pub const TOL: f64 = 1e-4;
pub const BN_TOL: f64 = 1e-3;

/// One checked case: op family, seed, worst relative error, tolerance.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub op: &'static str,
    pub seed: u64,
    pub err: f64,
    pub tol: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.err < self.tol
    }
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

pub fn conv2d(cases: u64, out: &mut Vec<GradCase>) {
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, c, f) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(3..7), rng.gen_range(3..7));
        let (stride, padding) = (rng.gen_range(1..3), rng.gen_range(0..2));
        let inputs = [rand_t(&mut rng, &[n, c, h, w]), rand_t(&mut rng, &[f, c, 3, 3]), rand_t(&mut rng, &[f])];
        let err = grad_check(&inputs, &mut rng, |g, v| g.conv2d(v[0], v[1], v[2], stride, padding));
        out.push(GradCase { op: "conv2d", seed, err, tol: TOL });
    }
}

pub fn batch_norm_training_and_eval(cases: u64, out: &mut Vec<GradCase>) {
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (n, c) = (rng.gen_range(2..4), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let inputs = [rand_t(&mut rng, &[n, c, h, w]), rand_t(&mut rng, &[c]), rand_t(&mut rng, &[c])];
        let err = grad_check(&inputs, &mut rng, |g, v| Ok(g.batch_norm(v[0], v[1], v[2], BnMode::Train, 1e-5)?.0));
        out.push(GradCase { op: "batch_norm_train", seed, err, tol: BN_TOL });

        let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        let err = grad_check(&inputs, &mut rng, |g, v| {
            Ok(g.batch_norm(v[0], v[1], v[2], BnMode::Eval { mean: &mean, var: &var }, 1e-5)?.0)
        });
        out.push(GradCase { op: "batch_norm_eval", seed, err, tol: BN_TOL });
    }
}

pub fn pooling(cases: u64, out: &mut Vec<GradCase>) {
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (n, c) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let (h, w) = (rng.gen_range(2..8), rng.gen_range(2..8));
        let inputs = [rand_t(&mut rng, &[n, c, h, w])];
        let err = grad_check(&inputs, &mut rng, |g, v| g.max_pool2(v[0]));
        out.push(GradCase { op: "max_pool2", seed, err, tol: TOL });
        let err = grad_check(&inputs, &mut rng, |g, v| g.adaptive_avg_pool(v[0], 2, 2));
        out.push(GradCase { op: "adaptive_avg_pool", seed, err, tol: TOL });
    }
}

pub fn dense_chain_with_cross_entropy(cases: u64, out: &mut Vec<GradCase>) {
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (n, d, hdim, k) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(2..4));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let inputs = [
            rand_t(&mut rng, &[n, d]),
            rand_t(&mut rng, &[d, hdim]),
            rand_t(&mut rng, &[hdim]),
            rand_t(&mut rng, &[hdim, k]),
            rand_t(&mut rng, &[k]),
        ];
        let err = grad_check(&inputs, &mut rng, |g, v| {
            let h = g.linear(v[0], v[1], Some(v[2]))?;
            let h = g.relu(h)?;
            let z = g.linear(h, v[3], Some(v[4]))?;
            g.softmax_cross_entropy(z, &labels)
        });
        out.push(GradCase { op: "linear_relu_cross_entropy", seed, err, tol: TOL });
    }
}

pub fn elementwise_and_reshaping(cases: u64, out: &mut Vec<GradCase>) {
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let (n, a, b) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5));
        let inputs = [rand_t(&mut rng, &[n, a]), rand_t(&mut rng, &[n, b])];
        let err = grad_check(&inputs, &mut rng, |g, v| {
            let t = g.tanh(v[0])?;
            let s = g.softmax(v[1])?;
            let c = g.concat_cols(t, s)?;
            let c = g.transpose(c)?;
            g.reshape(c, &[n * (a + b)])
        });
        out.push(GradCase { op: "tanh_softmax_concat_reshape", seed, err, tol: TOL });
    }
}

pub fn position_ops(cases: u64, out: &mut Vec<GradCase>) {
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (n, c, h, w) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..3), rng.gen_range(1..3));
        let inputs = [rand_t(&mut rng, &[n, c, h, w]), rand_t(&mut rng, &[n, h * w])];
        let err = grad_check(&inputs, &mut rng, |g, v| {
            let p = g.to_positions(v[0])?;
            g.scale_positions(p, v[1])
        });
        out.push(GradCase { op: "scale_positions", seed, err, tol: TOL });
        let err = grad_check(&inputs, &mut rng, |g, v| {
            let p = g.to_positions(v[0])?;
            g.pool_positions(p, v[1])
        });
        out.push(GradCase { op: "pool_positions", seed, err, tol: TOL });
    }
}

pub fn attention_block(cases: u64, out: &mut Vec<GradCase>) {
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let (n, t, d) = (rng.gen_range(1..3), rng.gen_range(1..6), rng.gen_range(1..5));
        let inputs = [rand_t(&mut rng, &[n, t, d]), rand_t(&mut rng, &[d, d]), rand_t(&mut rng, &[d]), rand_t(&mut rng, &[d])];
        for mode in [AttentionMode::Scale, AttentionMode::WeightedSum] {
            let err = grad_check(&inputs, &mut rng, |g, v| {
                let att = AttentionVars { w: v[1], b: v[2], u_c: v[3] };
                Ok(contextual_attention(g, v[0], att, mode)?.0)
            });
            out.push(GradCase { op: if mode == AttentionMode::Scale { "attention_scale" } else { "attention_weighted_sum" }, seed, err, tol: TOL });
        }
    }
}

pub fn miniature_network_end_to_end(cases: u64, out: &mut Vec<GradCase>) {
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let inputs = [
            rand_t(&mut rng, &[2, 2, 6, 6]),
            rand_t(&mut rng, &[3, 2, 3, 3]),
            rand_t(&mut rng, &[3]),
            Tensor::full(&[3], 1.0),
            Tensor::zeros(&[3]),
            rand_t(&mut rng, &[3, 3]),
            rand_t(&mut rng, &[3]),
            rand_t(&mut rng, &[3]),
            rand_t(&mut rng, &[12, 2]),
        ];
        let err = grad_check(&inputs, &mut rng, |g, v| {
            let x = g.conv2d(v[0], v[1], v[2], 1, 1)?;
            let (x, _) = g.batch_norm(x, v[3], v[4], BnMode::Train, 1e-5)?;
            let x = g.relu(x)?;
            let x = g.max_pool2(x)?;
            let x = g.adaptive_avg_pool(x, 2, 2)?;
            let p = g.to_positions(x)?;
            let (p, _) = contextual_attention(g, p, AttentionVars { w: v[5], b: v[6], u_c: v[7] }, AttentionMode::Scale)?;
            let flat = g.reshape(p, &[2, 12])?;
            let z = g.linear(flat, v[8], None)?;
            g.softmax_cross_entropy(z, &[0, 1])
        });
        out.push(GradCase { op: "miniature_network", seed, err, tol: BN_TOL });
    }
}

/// Every family with `cases` random shapes each.
pub fn all(cases: u64) -> Vec<GradCase> {
    let mut out = Vec::new();
    conv2d(cases, &mut out);
    batch_norm_training_and_eval(cases, &mut out);
    pooling(cases, &mut out);
    dense_chain_with_cross_entropy(cases, &mut out);
    elementwise_and_reshaping(cases, &mut out);
    position_ops(cases, &mut out);
    attention_block(cases, &mut out);
    miniature_network_end_to_end(cases.min(5), &mut out);
    out
}
