//! Building blocks for multimodal contrastive learning at desk scale.
//!
//! * [`autodiff`]: a small tape-based reverse-mode engine over dense `f64` tensors.
//! * [`encoders`]: MLP and LSTM modality encoders.
//! * [`losses`]: InfoNCE, One-vs-Others and λ-weighted One-vs-Others objectives.
//! * [`fusion`]: concatenation fusion, the modality-gated LSTM and classification heads.
//! * [`eval`]: AUROC/AUPRC, top-5 alignment accuracy, subgroup breakdowns and
//!   Integrated Gradients attribution.
//! * [`cohort`]: deterministic synthetic multimodal cohorts with planted modality
//!   informativeness.

pub mod autodiff;
pub mod cohort;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod losses;
pub mod stats;

pub use error::{Error, Result};
