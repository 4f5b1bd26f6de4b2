//! Experiment pipeline for one-vs-others contrastive pre-training: checkpoints,
//! the three fine-tuning regimes, attribution, sweeps over modality subsets and
//! CSV artifacts.

pub mod attribution;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod emit;
pub mod model;
pub mod sweep;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{CohortSource, LambdaSource, Regime, RunConfig};
pub use data::RunData;
pub use model::Model;
