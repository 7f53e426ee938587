//! Fairness-aware contrastive training with certainty-alignment regularization.

pub mod alignment;
pub mod cohort;
pub mod error;
pub mod fairness;
pub mod mmd;
pub mod objectives;
pub mod report;
pub mod stats;
pub mod subgroup;
pub mod trainer;

pub use error::{Error, Result};
pub use subgroup::SubgroupKey;
