use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::EnsembleError;

/// A snapshot eligible for the ensemble, with its single-model score
/// (higher is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub iteration: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub id: String,
    pub single_score: f64,
    /// Ensemble score with this candidate tentatively added.
    pub trial_score: f64,
    pub admitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Indices into the candidate list, in admission order.
    pub members: Vec<usize>,
    pub score: f64,
    pub trace: Vec<TraceEntry>,
}

/// Candidate indices ordered by single-model score, best first (stable).
pub fn rank(candidates: &[Candidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].score.total_cmp(&candidates[a].score));
    order
}

/// Keeps the `cap` best candidates by single-model score.
pub fn cap_candidates(mut candidates: Vec<Candidate>, cap: usize) -> Vec<Candidate> {
    let order = rank(&candidates);
    let keep: Vec<usize> = order.into_iter().take(cap).collect();
    let mut idx = 0;
    candidates.retain(|_| {
        let k = keep.contains(&idx);
        idx += 1;
        k
    });
    candidates
}

/// Greedy forward selection: visit candidates best-first, admit the first
/// unconditionally and every later one only if the ensemble score strictly
/// improves. `ensemble_score` scores a set of candidate indices.
pub fn greedy_select(
    candidates: &[Candidate],
    mut ensemble_score: impl FnMut(&[usize]) -> f64,
) -> Result<Selection, EnsembleError> {
    if candidates.is_empty() {
        return Err(EnsembleError::NoCandidates);
    }
    let mut members: Vec<usize> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut trace = Vec::with_capacity(candidates.len());
    for i in rank(candidates) {
        members.push(i);
        let trial = ensemble_score(&members);
        let admitted = members.len() == 1 || trial > best;
        if admitted {
            best = trial;
        } else {
            members.pop();
        }
        trace.push(TraceEntry {
            id: candidates[i].id.clone(),
            single_score: candidates[i].score,
            trial_score: trial,
            admitted,
        });
    }
    Ok(Selection {
        members,
        score: best,
        trace,
    })
}

/// Arithmetic mean of member outputs.
pub fn ensemble_predict(outputs: &[&Tensor]) -> Result<Tensor, EnsembleError> {
    let first = outputs.first().ok_or(EnsembleError::EmptyEnsemble)?;
    let mut sum = (*first).clone();
    for o in &outputs[1..] {
        if o.shape() != first.shape() {
            return Err(EnsembleError::ShapeMismatch);
        }
        sum.data_mut().iter_mut().zip(o.data()).for_each(|(a, b)| *a += b);
    }
    let n = outputs.len() as f64;
    sum.data_mut().iter_mut().for_each(|a| *a /= n);
    Ok(sum)
}
