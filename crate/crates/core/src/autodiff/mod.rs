//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Graph`]. [`Graph::grad`] walks the tape
//! backwards; with `create_graph` set, the returned gradients are graph nodes
//! and can be differentiated again, which is what the outer meta-update uses
//! to see through the inner adaptation steps.
//!
//! ```
//! use dcn::autodiff::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.param(Tensor::scalar(2.0));
//! let y = x * x * x;
//! let dy = g.grad(y, &[x], true).unwrap()[0];
//! let d2y = g.grad(dy, &[x], false).unwrap()[0];
//! assert_eq!(dy.item(), 12.0);
//! assert_eq!(d2y.item(), 12.0);
//! ```

mod graph;
mod resample;
mod tensor;

pub use graph::{Graph, Var};
pub use resample::ResamplePlan;
pub use tensor::Tensor;

pub(crate) use graph::{elu as elu_scalar, softshrink as softshrink_scalar};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("gradient objective must have shape [1], got {shape:?}")]
    NonScalarObjective { shape: Vec<usize> },
    #[error("non-finite value encountered in backward pass of `{op}`")]
    NonFinite { op: &'static str },
}

/// Elementwise ELU (α = 1) on a plain tensor.
pub fn elu(x: &Tensor) -> Tensor {
    x.map(elu_scalar)
}

/// Elementwise softshrink on a plain tensor.
pub fn softshrink(x: &Tensor, lambda: f64) -> Result<Tensor, NegativeThreshold> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(NegativeThreshold(lambda));
    }
    Ok(x.map(|v| softshrink_scalar(v, lambda)))
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("softshrink threshold must be non-negative, got {0}")]
pub struct NegativeThreshold(pub f64);

#[cfg(test)]
mod tests;
