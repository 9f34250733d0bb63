//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod grad_suite;

use coughscreen::nn::{Graph, NnError, Tensor, Var};
use rand::Rng;

/// Central finite differences against the tape. `build` maps the input
/// variables to an output; the output is contracted with fixed random
/// coefficients to obtain a scalar. Returns the worst relative error
/// `|a - n| / max(|a| + |n|, floor)` over all inputs, measured per tensor
/// as a norm ratio.
pub fn grad_check<R: Rng>(
    inputs: &[Tensor<f64>],
    rng: &mut R,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NnError>,
) -> f64 {
    let eps = 1e-5;
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = build(&mut g, &vars).expect("forward");
        g.value(y).shape().to_vec()
    };
    let coeffs = Tensor::uniform(&out_shape, 1.0, rng);
    let loss_of = |values: &[Tensor<f64>], with_grad: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), with_grad)).collect();
        let y = build(&mut g, &vars).expect("forward");
        let c = g.constant(coeffs.clone());
        let loss = g.weighted_sum_all(y, c).expect("contraction");
        let value = g.value(loss).data()[0];
        if !with_grad {
            return (value, Vec::new());
        }
        g.backward(loss).expect("backward");
        let grads = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (value, grads)
    };
    let (_, analytic) = loss_of(inputs, true);
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            let numeric = (loss_of(&plus, false).0 - loss_of(&minus, false).0) / (2.0 * eps);
            let a = analytic[i].data()[j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let rel = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

/// Contextual attention written as plain loops over positions and features.
/// `h` is `[T][d]`, `w` is `[d][d]` applied as `w * h_t`.
pub fn attention_oracle(h: &[Vec<f64>], w: &[Vec<f64>], b: &[f64], u_c: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = b.len();
    let mut scores = Vec::new();
    for h_t in h {
        let mut score = 0.0;
        for i in 0..d {
            let mut acc = b[i];
            for j in 0..d {
                acc += w[i][j] * h_t[j];
            }
            score += acc.tanh() * u_c[i];
        }
        scores.push(score);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let alpha: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let out = h.iter().zip(&alpha).map(|(h_t, a)| h_t.iter().map(|v| v * a).collect()).collect();
    (out, alpha)
}

/// P(s+ > s-) + 0.5 P(s+ = s-) by enumerating every pair.
pub fn mann_whitney(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Tries every distinct score as a threshold (predict positive when
/// `score >= t`) and returns the largest one reaching the target
/// sensitivity, with its sensitivity and specificity.
pub fn threshold_sweep(scores: &[f64], labels: &[bool], target: f64) -> (f64, f64, Option<f64>) {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    let eval = |t: f64| {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| l && s >= t).count();
        let tn = scores.iter().zip(labels).filter(|(&s, &l)| !l && s < t).count();
        (tp as f64 / pos as f64, (neg > 0).then(|| tn as f64 / neg as f64))
    };
    for &t in &candidates {
        let (sens, spec) = eval(t);
        if sens >= target {
            return (t, sens, spec);
        }
    }
    let t = *candidates.last().unwrap();
    let (sens, spec) = eval(t);
    (t, sens, spec)
}

/// Random scores on a coarse grid so ties are common, with both classes present.
pub fn random_scored_set<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<bool>) {
    let n = rng.gen_range(2..60);
    let levels = rng.gen_range(2..12);
    let rate = rng.gen_range(0.2..0.8);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(rate)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
    (scores, labels)
}
