use thiserror::Error;

use super::tensor::{Scalar, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("batch normalization in training mode needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite values produced by {0}")]
    NonFinite(&'static str),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::Shape {
        op,
        detail: detail.into(),
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Read access to forward values during the backward pass.
pub(crate) struct BackwardCtx<'a, T> {
    values: &'a [Tensor<T>],
    requires: &'a [bool],
}

impl<T> BackwardCtx<'_, T> {
    pub(crate) fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.requires[v.0]
    }
}

/// Gradient contributions to the inputs of one node.
pub(crate) type Contributions<T> = Vec<(Var, Tensor<T>)>;

pub(crate) trait Backward<T: Scalar> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &Tensor<T>) -> Contributions<T>;
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// index order is a valid topological order for the backward sweep.
pub struct Graph<T: Scalar> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Tensor<T>>>,
    requires: Vec<bool>,
    ops: Vec<Option<Box<dyn Backward<T>>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires_grad);
        self.ops.push(None);
        Var(self.values.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Gradient of the last `backward` call's loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Records an op output. The backward closure is kept only when some
    /// input requires a gradient.
    pub(crate) fn push_op(&mut self, op_name: &'static str, value: Tensor<T>, inputs: &[Var], op: impl Backward<T> + 'static) -> Result<Var, NnError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(NnError::NonFinite(op_name));
        }
        let requires = inputs.iter().any(|v| self.requires[v.0]);
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(if requires { Some(Box::new(op)) } else { None });
        Ok(Var(self.values.len() - 1))
    }

    /// Accumulates d(loss)/d(node) into every node that requires a gradient.
    /// Interior gradients are released once propagated; leaf gradients stay.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        let shape = self.values[loss.0].shape().to_vec();
        if self.values[loss.0].numel() != 1 {
            return Err(NnError::NotScalar(shape));
        }
        for g in &mut self.grads {
            *g = None;
        }
        if !self.requires[loss.0] {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(&shape, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(op) = &self.ops[i] else { continue };
            let Some(grad_out) = self.grads[i].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                values: &self.values,
                requires: &self.requires,
            };
            for (input, contribution) in op.backward(&ctx, &grad_out) {
                if !self.requires[input.0] {
                    continue;
                }
                match &mut self.grads[input.0] {
                    Some(g) => g.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }
}
