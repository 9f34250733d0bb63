//! Matrix, elementwise, reshaping and loss ops.

use super::graph::{shape_err, Backward, BackwardCtx, Contributions, Graph, NnError, Var};
use super::tensor::{matmul, Scalar, Tensor, Trans};

struct LinearOp {
    input: Var,
    weight: Var,
    bias: Option<Var>,
    rows: usize,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Scalar> Backward<T> for LinearOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let (n, d, k) = (self.rows, self.in_dim, self.out_dim);
        let gy = grad_out.data();
        let mut out = Vec::new();
        if ctx.needs(self.input) {
            let mut dx = vec![T::zero(); n * d];
            matmul(n, k, d, gy, Trans::No, ctx.value(self.weight).data(), Trans::Yes, &mut dx, false);
            out.push((self.input, Tensor::new(ctx.value(self.input).shape(), dx)));
        }
        if ctx.needs(self.weight) {
            let mut dw = vec![T::zero(); d * k];
            matmul(d, n, k, ctx.value(self.input).data(), Trans::Yes, gy, Trans::No, &mut dw, false);
            out.push((self.weight, Tensor::new(&[d, k], dw)));
        }
        if let Some(b) = self.bias.filter(|&b| ctx.needs(b)) {
            let mut db = vec![0.0f64; k];
            for row in gy.chunks(k) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v.f64();
                }
            }
            out.push((b, Tensor::from_f64(&[k], &db)));
        }
        out
    }
}

struct UnaryOp<T, F> {
    input: Var,
    /// Derivative expressed through the forward output.
    derivative: F,
    output: Vec<T>,
}

impl<T: Scalar, F: Fn(f64) -> f64> Backward<T> for UnaryOp<T, F> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let dx: Vec<T> = grad_out
            .data()
            .iter()
            .zip(&self.output)
            .map(|(&g, &y)| T::from_f64_lossy(g.f64() * (self.derivative)(y.f64())))
            .collect();
        vec![(self.input, Tensor::new(ctx.value(self.input).shape(), dx))]
    }
}

struct ReshapeOp {
    input: Var,
}

impl<T: Scalar> Backward<T> for ReshapeOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        vec![(self.input, grad_out.clone().reshaped(ctx.value(self.input).shape()))]
    }
}

struct TransposeOp {
    input: Var,
}

fn transpose_data<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

impl<T: Scalar> Backward<T> for TransposeOp {
    fn backward(&self, _ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let s = grad_out.shape();
        vec![(self.input, Tensor::new(&[s[1], s[0]], transpose_data(grad_out.data(), s[0], s[1])))]
    }
}

struct ConcatOp {
    left: Var,
    right: Var,
    rows: usize,
    left_cols: usize,
    right_cols: usize,
}

impl<T: Scalar> Backward<T> for ConcatOp {
    fn backward(&self, _ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let width = self.left_cols + self.right_cols;
        let mut dl = Vec::with_capacity(self.rows * self.left_cols);
        let mut dr = Vec::with_capacity(self.rows * self.right_cols);
        for row in grad_out.data().chunks(width) {
            dl.extend_from_slice(&row[..self.left_cols]);
            dr.extend_from_slice(&row[self.left_cols..]);
        }
        vec![
            (self.left, Tensor::new(&[self.rows, self.left_cols], dl)),
            (self.right, Tensor::new(&[self.rows, self.right_cols], dr)),
        ]
    }
}

struct SoftmaxOp {
    input: Var,
    probs: Vec<f64>,
    cols: usize,
}

impl<T: Scalar> Backward<T> for SoftmaxOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let mut dx = Vec::with_capacity(self.probs.len());
        for (p, g) in self.probs.chunks(self.cols).zip(grad_out.data().chunks(self.cols)) {
            let dot: f64 = p.iter().zip(g).map(|(&p, &g)| p * g.f64()).sum();
            dx.extend(p.iter().zip(g).map(|(&p, &g)| T::from_f64_lossy(p * (g.f64() - dot))));
        }
        vec![(self.input, Tensor::new(ctx.value(self.input).shape(), dx))]
    }
}

struct SoftmaxCrossEntropyOp {
    logits: Var,
    probs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Scalar> Backward<T> for SoftmaxCrossEntropyOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let scale = grad_out.data()[0].f64() / self.labels.len() as f64;
        let mut dx = Vec::with_capacity(self.probs.len());
        for (row, &label) in self.probs.chunks(self.classes).zip(&self.labels) {
            dx.extend(row.iter().enumerate().map(|(c, &p)| {
                let target = if c == label { 1.0 } else { 0.0 };
                T::from_f64_lossy(scale * (p - target))
            }));
        }
        vec![(self.logits, Tensor::new(ctx.value(self.logits).shape(), dx))]
    }
}

struct WeightedSumAllOp {
    input: Var,
    coeffs: Var,
}

impl<T: Scalar> Backward<T> for WeightedSumAllOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T> {
        let g = grad_out.data()[0];
        let mut out = Vec::new();
        if ctx.needs(self.input) {
            out.push((self.input, ctx.value(self.coeffs).map(|c| c * g)));
        }
        if ctx.needs(self.coeffs) {
            out.push((self.coeffs, ctx.value(self.input).map(|x| x * g)));
        }
        out
    }
}

/// Numerically stable row softmax in f64.
pub(crate) fn softmax_rows<T: Scalar>(data: &[T], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(cols) {
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    out
}

impl<T: Scalar> Graph<T> {
    /// `x [N,D] * weight [D,K] (+ bias [K])`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var, NnError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(shape_err("linear", format!("input {xs:?}, weight {ws:?}")));
        }
        let (n, d, k) = (xs[0], xs[1], ws[1]);
        let mut out = vec![T::zero(); n * k];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            if self.value(b).shape() != [k] {
                return Err(shape_err("linear", format!("bias {:?} for {k} outputs", self.value(b).shape())));
            }
            for row in out.chunks_mut(k) {
                row.copy_from_slice(bv);
            }
        }
        matmul(n, d, k, self.value(x).data(), Trans::No, self.value(weight).data(), Trans::No, &mut out, true);
        let op = LinearOp {
            input: x,
            weight,
            bias,
            rows: n,
            in_dim: d,
            out_dim: k,
        };
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push_op("linear", Tensor::new(&[n, k], out), &inputs, op)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, derivative: impl Fn(f64) -> f64 + 'static) -> Result<Var, NnError> {
        let input = self.value(x);
        let output: Vec<T> = input.data().iter().map(|v| T::from_f64_lossy(f(v.f64()))).collect();
        let value = Tensor::new(input.shape(), output.clone());
        self.push_op(name, value, &[x], UnaryOp { input: x, derivative, output })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NnError> {
        self.unary("relu", x, |v| v.max(0.0), |y| if y > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NnError> {
        self.unary("tanh", x, f64::tanh, |y| 1.0 - y * y)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let input = self.value(x);
        if shape.iter().product::<usize>() != input.numel() {
            return Err(shape_err("reshape", format!("{:?} to {shape:?}", input.shape())));
        }
        let value = input.clone().reshaped(shape);
        self.push_op("reshape", value, &[x], ReshapeOp { input: x })
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("expected a matrix, got {s:?}")));
        }
        let value = Tensor::new(&[s[1], s[0]], transpose_data(self.value(x).data(), s[0], s[1]));
        self.push_op("transpose", value, &[x], TransposeOp { input: x })
    }

    /// Joins `[N,A]` and `[N,B]` into `[N,A+B]`.
    pub fn concat_cols(&mut self, left: Var, right: Var) -> Result<Var, NnError> {
        let ls = self.value(left).shape().to_vec();
        let rs = self.value(right).shape().to_vec();
        if ls.len() != 2 || rs.len() != 2 || ls[0] != rs[0] {
            return Err(shape_err("concat_cols", format!("{ls:?} and {rs:?}")));
        }
        let mut data = Vec::with_capacity(ls[0] * (ls[1] + rs[1]));
        for (l, r) in self.value(left).data().chunks(ls[1].max(1)).zip(self.value(right).data().chunks(rs[1].max(1))) {
            data.extend_from_slice(l);
            data.extend_from_slice(r);
        }
        let op = ConcatOp {
            left,
            right,
            rows: ls[0],
            left_cols: ls[1],
            right_cols: rs[1],
        };
        self.push_op("concat_cols", Tensor::new(&[ls[0], ls[1] + rs[1]], data), &[left, right], op)
    }

    /// Softmax over the last axis of a 2-D tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 2 || s[1] == 0 {
            return Err(shape_err("softmax", format!("expected [N,K], got {s:?}")));
        }
        let probs = softmax_rows(self.value(x).data(), s[1]);
        let value = Tensor::from_f64(&s, &probs);
        self.push_op("softmax", value, &[x], SoftmaxOp { input: x, probs, cols: s[1] })
    }

    /// Mean over rows of `-log softmax(logits)[label]`, fused for stability.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NnError> {
        let s = self.value(logits).shape().to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(shape_err("softmax_cross_entropy", format!("logits {s:?} with {} labels", labels.len())));
        }
        let classes = s[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
        let data = self.value(logits).data();
        let mut loss = 0.0f64;
        for (row, &label) in data.chunks(classes).zip(labels) {
            let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
            loss += lse - row[label].f64();
        }
        loss /= labels.len() as f64;
        let op = SoftmaxCrossEntropyOp {
            logits,
            probs: softmax_rows(data, classes),
            labels: labels.to_vec(),
            classes,
        };
        self.push_op("softmax_cross_entropy", Tensor::from_f64(&[1], &[loss]), &[logits], op)
    }

    /// Scalar `sum(x * coeffs)`; turns any tensor into a loss for gradient checks.
    pub fn weighted_sum_all(&mut self, x: Var, coeffs: Var) -> Result<Var, NnError> {
        if self.value(x).shape() != self.value(coeffs).shape() {
            return Err(shape_err("weighted_sum_all", format!("{:?} vs {:?}", self.value(x).shape(), self.value(coeffs).shape())));
        }
        let total: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(self.value(coeffs).data())
            .map(|(a, b)| a.f64() * b.f64())
            .sum();
        self.push_op("weighted_sum_all", Tensor::from_f64(&[1], &[total]), &[x, coeffs], WeightedSumAllOp { input: x, coeffs })
    }
}
