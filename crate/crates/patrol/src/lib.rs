//! Informative patrolling over non-convex water maps: a Gaussian
//! information field conditioned on collected samples, a compass-move
//! decision process rewarding information gain, a censored noisy dueling
//! deep Q-learner with prioritized replay, and four classical coverage
//! planners for comparison.

pub mod agent;
pub mod baselines;
pub mod env;
pub mod error;
pub mod ground_truth;
pub mod harness;
pub mod info_field;
pub mod linalg;
pub mod nav_map;
pub mod neural;

pub use error::{Error, Result};
