//! Budgeted broadcast: structural plasticity that holds every unit to a
//! traffic budget `t_i = a_i * k_i` (on-rate times degree) inside a small
//! masked MLP trainer, plus the tasks, metrics, and experiment drivers used
//! to study the rule.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod serde_ext;
pub mod sparsity;
pub mod tasks;

pub use error::{Error, Result};
