//! Minimal reverse-mode autodiff engine with the layers the classifier needs.

mod adam;
mod checkpoint;
mod conv;
mod dense;
mod graph;
mod norm;
mod params;
mod pool;
mod position;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use graph::{Graph, NnError, Var};
pub use norm::{BatchStats, BnMode};
pub use params::{kaiming_uniform, ParamSet};
pub use tensor::{matmul, Scalar, Tensor, Trans};
