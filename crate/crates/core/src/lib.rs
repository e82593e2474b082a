//! Adaptive-debiased ensemble multi-prompt learning over frozen,
//! precomputed vision-language features.
//!
//! A [`feature_store::FeatureBundle`] holds per-backbone image features,
//! per-prompt text features and the resulting zero-shot logits. A
//! [`networks::Model`] pairs a weight generator (one weight per
//! backbone/prompt slot) with a redundancy net that splits each image
//! feature into a task-relevant and a task-irrelevant half.
//! [`trainer::fit`] optimizes the combined objective and
//! [`evaluator`] scores base-to-novel and transfer settings.

pub mod causal;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod evaluator;
pub mod feature_store;
pub mod io;
pub mod losses;
pub mod networks;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
