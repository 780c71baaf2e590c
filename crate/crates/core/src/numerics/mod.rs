//! Differentiable kernel: matrix ops with analytic backward passes, a
//! finite-difference verifier, optimizers and seeded random streams.

mod gradcheck;
mod graph;
pub mod init;
mod optim;
pub mod rng;

pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, EPS_RANGE, REL_FLOOR};
pub use graph::{logistic, softmax_rows, Graph, Var, BCE_CLAMP};
pub use optim::{Adam, Sgd};
pub use rng::{derive_seed, derived_stream, stream, RngStream, RNG_ALGORITHM};

use thiserror::Error;

/// Default layer-normalization epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("eps must be positive and in range, got {0}")]
    InvalidEps(f64),
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("function value is not finite: {0}")]
    NonFiniteLoss(f64),
    #[error("expected a 1x1 scalar, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
}
