use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::tasks::{accuracy, Episode};

use super::inner::{inner_loop, InnerConfig};
use super::model::{Model, ParamGroup};
use super::optim::AdamAmsgrad;
use super::MetaError;

/// Outer-loop learning-rate multiplier for the inner-loop rate parameters.
pub const RATE_LR_SCALE: f64 = 0.1;

/// Query-loss gradient of one task with respect to every model parameter.
#[derive(Debug, Clone)]
pub struct TaskGradient {
    pub task_id: u64,
    pub grads: Vec<Tensor>,
    pub test_loss: f64,
    pub train_loss: f64,
    pub accuracy: Option<f64>,
}

pub fn task_gradient(model: &Model, episode: &Episode, cfg: &InnerConfig) -> Result<TaskGradient, MetaError> {
    let g = Graph::new();
    let params = model.bind(&g, true, cfg.learnable_rates);
    let adapted = inner_loop(model, &g, &params, episode, cfg)?;
    let task_id = episode.task_id;
    let grads = g
        .grad_tensors(adapted.test_loss, &params)
        .map_err(|source| MetaError::Gradient { task_id, source })?;
    let accuracy = model
        .is_classification()
        .then(|| accuracy(&adapted.test_output.value(), &episode.test_y));
    Ok(TaskGradient {
        task_id,
        grads,
        test_loss: adapted.test_loss.item(),
        train_loss: adapted.train_loss_after,
        accuracy,
    })
}

/// Per-task gradients, computed on up to `threads` workers and returned in
/// episode order.
pub fn task_gradients(
    model: &Model,
    episodes: &[Episode],
    cfg: &InnerConfig,
    threads: usize,
) -> Result<Vec<TaskGradient>, MetaError> {
    let threads = threads.clamp(1, episodes.len().max(1));
    if threads == 1 {
        return episodes.iter().map(|e| task_gradient(model, e, cfg)).collect();
    }
    let chunk = episodes.len().div_ceil(threads);
    let parts: Vec<Result<Vec<TaskGradient>, MetaError>> = std::thread::scope(|s| {
        let handles: Vec<_> = episodes
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|e| task_gradient(model, e, cfg)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("task worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(episodes.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Sum of per-task gradients, reduced in the given order.
pub fn meta_gradient(tasks: &[TaskGradient]) -> Vec<Tensor> {
    let mut total: Vec<Tensor> = tasks[0].grads.clone();
    for t in &tasks[1..] {
        for (acc, g) in total.iter_mut().zip(&t.grads) {
            acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub train_loss: f64,
    pub test_loss: f64,
    pub accuracy: Option<f64>,
    pub grad_norm: f64,
}

/// One meta-update: adapt to every episode, sum the query-loss gradients
/// and take an optimizer step on all parameters (rates at a reduced rate,
/// and only when they are learnable).
pub fn outer_step(
    model: &mut Model,
    opt: &mut AdamAmsgrad,
    episodes: &[Episode],
    cfg: &InnerConfig,
    lr: f64,
    threads: usize,
) -> Result<StepMetrics, MetaError> {
    if episodes.is_empty() {
        return Err(MetaError::EmptyBatch);
    }
    let tasks = task_gradients(model, episodes, cfg, threads)?;
    let grads = meta_gradient(&tasks);
    if let Some(t) = tasks.iter().find(|t| t.grads.iter().any(|g| !g.is_finite())) {
        return Err(MetaError::NonFinite { task_id: t.task_id });
    }
    let lrs: Vec<Option<f64>> = model
        .params()
        .entries()
        .iter()
        .map(|e| match e.group {
            ParamGroup::Rate if !cfg.learnable_rates => None,
            ParamGroup::Rate => Some(lr * RATE_LR_SCALE),
            _ => Some(lr),
        })
        .collect();
    let grad_norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    opt.update(&mut model.params_mut().values_mut(), &grads, &lrs);
    let n = tasks.len() as f64;
    let accuracy = model
        .is_classification()
        .then(|| tasks.iter().filter_map(|t| t.accuracy).sum::<f64>() / n);
    Ok(StepMetrics {
        train_loss: tasks.iter().map(|t| t.train_loss).sum::<f64>() / n,
        test_loss: tasks.iter().map(|t| t.test_loss).sum::<f64>() / n,
        accuracy,
        grad_norm,
    })
}
