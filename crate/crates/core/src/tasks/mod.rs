//! Episodic few-shot tasks and their losses.

mod episode;
pub mod glyph;
mod loss;
pub mod sinusoid;

pub use episode::Episode;
pub use glyph::{sample_glyph_episode, GlyphPool, GlyphSpec, Rotation};
pub use loss::{accuracy, cross_entropy, cross_entropy_loss, mse_loss, squared_error, Reduction};
pub use sinusoid::{sample_sinusoid_episode, SinusoidSpec};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("prediction shape {pred:?} does not match target shape {target:?}")]
    ShapeMismatch { pred: Vec<usize>, target: Vec<usize> },
    #[error("classification needs at least two ways, got {0}")]
    InvalidWay(usize),
    #[error("{way}-way episode requested but the class pool holds {available} classes")]
    PoolTooSmall { way: usize, available: usize },
    #[error("malformed episode: {0}")]
    MalformedEpisode(String),
}
