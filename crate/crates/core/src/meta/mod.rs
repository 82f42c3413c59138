//! Meta-learning loops: per-task adaptation in latent space, the summed
//! query-loss meta-update, the MAML reference route and evaluation.

mod eval;
mod inner;
mod model;
mod optim;
mod outer;

pub use eval::{adapt_and_predict, centroid_accuracy, evaluate, evaluate_episode, EvalReport, MeanCi};
pub use inner::{clip_grad_norm, clip_grad_norm_tensors, inner_loop, maml_inner_loop, Adapted, InnerConfig, MamlLayer};
pub use model::{
    dense, Generator, LayerRole, LayerSpec, Model, ModelSpec, Objective, ParamEntry, ParamGroup, ParamStore, RateInit,
};
pub use optim::{AdamAmsgrad, AdamConfig};
pub use outer::{meta_gradient, outer_step, task_gradient, task_gradients, StepMetrics, TaskGradient, RATE_LR_SCALE};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::choice::ChoiceError;
use crate::decoder::DecoderError;
use crate::tasks::TaskError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error("invalid model: {0}")]
    Spec(String),
    #[error("non-finite loss or gradient in task {task_id}")]
    NonFinite { task_id: u64 },
    #[error("gradient failed in task {task_id}: {source}")]
    Gradient { task_id: u64, source: AutodiffError },
    #[error("empty task batch")]
    EmptyBatch,
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
    #[error(transparent)]
    Task(#[from] TaskError),
}
