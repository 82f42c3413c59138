use serde::{Deserialize, Serialize};

use crate::autodiff::Var;

use super::TaskError;

/// How per-example losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Mean over examples (and output dimensions for squared error).
    #[default]
    Mean,
    Sum,
}

fn check_shapes(pred: &Var<'_>, target: &Var<'_>) -> Result<(), TaskError> {
    let (p, t) = (pred.shape(), target.shape());
    if p != t {
        return Err(TaskError::ShapeMismatch {
            pred: p,
            target: t,
        });
    }
    Ok(())
}

pub fn mse_loss<'g>(pred: Var<'g>, target: Var<'g>) -> Result<Var<'g>, TaskError> {
    squared_error(pred, target, Reduction::Mean)
}

pub fn squared_error<'g>(
    pred: Var<'g>,
    target: Var<'g>,
    reduction: Reduction,
) -> Result<Var<'g>, TaskError> {
    check_shapes(&pred, &target)?;
    let sq = (pred - target).square();
    Ok(match reduction {
        Reduction::Mean => sq.mean(),
        Reduction::Sum => sq.sum(),
    })
}

pub fn cross_entropy_loss<'g>(logits: Var<'g>, one_hot: Var<'g>) -> Result<Var<'g>, TaskError> {
    cross_entropy(logits, one_hot, Reduction::Mean)
}

/// `-Σ_k y_k log softmax(logits)_k` per row, via log-sum-exp.
pub fn cross_entropy<'g>(
    logits: Var<'g>,
    one_hot: Var<'g>,
    reduction: Reduction,
) -> Result<Var<'g>, TaskError> {
    check_shapes(&logits, &one_hot)?;
    if logits.shape().len() != 2 {
        return Err(TaskError::ShapeMismatch {
            pred: logits.shape(),
            target: one_hot.shape(),
        });
    }
    let rows = logits.shape()[0] as f64;
    let total = -(logits.log_softmax(1) * one_hot).sum();
    Ok(match reduction {
        Reduction::Mean => total.scale(1.0 / rows),
        Reduction::Sum => total,
    })
}

/// Fraction of rows whose arg-max prediction matches the one-hot target.
pub fn accuracy(scores: &crate::autodiff::Tensor, one_hot: &crate::autodiff::Tensor) -> f64 {
    let (rows, way) = scores.dims2();
    let argmax = |row: &[f64]| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
            .0
    };
    let hits = scores
        .data()
        .chunks_exact(way)
        .zip(one_hot.data().chunks_exact(way))
        .filter(|(s, y)| argmax(s) == argmax(y))
        .count();
    hits as f64 / rows as f64
}
