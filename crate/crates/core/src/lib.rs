//! Decoder choice networks for few-shot meta-learning.

pub mod autodiff;
pub mod checkpoint;
pub mod choice;
pub mod config;
pub mod decoder;
pub mod ensemble;
pub mod meta;
pub mod metrics;
pub mod run;
pub mod tasks;
