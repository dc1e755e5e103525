//! Inter- and intra-modality modeling laboratory.
//!
//! Two-modality supervised learning where the label generates each modality
//! and a selection mechanism couples the modalities with the label. The crate
//! ships an exact sampler and posterior for that generative process, MLP
//! experts combined as a product of experts in log space, evaluation metrics,
//! and a seeded experiment harness.

pub mod cli;
pub mod error;
pub mod genmodel;
pub mod harness;
pub mod metrics;
pub mod nncore;
pub mod predictors;

pub use error::{Error, Result};
