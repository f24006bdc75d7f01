//! Minimal reverse-mode automatic differentiation over dense `f64`
//! matrices, plus the optimizer used to train the planner.

mod adam;
mod checkpoint;
mod gemm;
mod tape;
mod tensor;

pub use adam::{step_decay_lr, AdamState, StepReport};
pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_VERSION};
pub use tape::{Fault, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("expected {expected} values, found {found}")]
    Length { expected: usize, found: usize },
    #[error("only rank 1 and 2 tensors are supported, got rank {0}")]
    Rank(usize),
    #[error("range {start}..{end} out of bounds for length {len}")]
    Range { start: usize, end: usize, len: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
