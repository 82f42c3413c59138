//! Snapshot ensembles: cyclic learning-rate annealing, greedy selection of
//! saved snapshots and averaged prediction.

mod schedule;
mod select;

pub use schedule::{lr_at, LrSchedule};
pub use select::{cap_candidates, ensemble_predict, greedy_select, rank, Candidate, Selection, TraceEntry};

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::meta::{adapt_and_predict, InnerConfig, MeanCi, MetaError, Model};
use crate::tasks::Episode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("no snapshot candidates to select from")]
    NoCandidates,
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("member outputs have different shapes")]
    ShapeMismatch,
    #[error(transparent)]
    Meta(#[from] MetaError),
}

/// Adapted query outputs of one model on every episode (probabilities for
/// classification).
pub fn member_predictions(model: &Model, episodes: &[Episode], cfg: &InnerConfig) -> Result<Vec<Tensor>, MetaError> {
    episodes.iter().map(|e| adapt_and_predict(model, e, cfg)).collect()
}

/// Per-episode losses (and accuracies) of averaged predictions. Regression
/// uses mean squared error; classification uses the negative log of the
/// averaged probability of the true class.
pub fn score_predictions(
    members: &[&[Tensor]],
    episodes: &[Episode],
    classification: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>), EnsembleError> {
    let mut losses = Vec::with_capacity(episodes.len());
    let mut accs = Vec::with_capacity(episodes.len());
    for (e, episode) in episodes.iter().enumerate() {
        let outs: Vec<&Tensor> = members.iter().map(|m| &m[e]).collect();
        let avg = ensemble_predict(&outs)?;
        let y = &episode.test_y;
        if classification {
            let (rows, way) = avg.dims2();
            let nll = (0..rows)
                .map(|r| {
                    let p: f64 = (0..way).map(|k| avg.at(r, k) * y.at(r, k)).sum();
                    -p.max(1e-300).ln()
                })
                .sum::<f64>()
                / rows as f64;
            losses.push(nll);
            accs.push(crate::tasks::accuracy(&avg, y));
        } else {
            let mse = avg.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / avg.len() as f64;
            losses.push(mse);
        }
    }
    Ok((losses, classification.then_some(accs)))
}

/// Higher-is-better selection score: accuracy for classification, negative
/// mean loss for regression.
pub fn selection_score(losses: &[f64], accs: Option<&[f64]>) -> f64 {
    match accs {
        Some(a) => MeanCi::of(a).mean,
        None => -MeanCi::of(losses).mean,
    }
}
