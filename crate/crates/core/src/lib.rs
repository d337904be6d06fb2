//! Adaptive scan-rate control for atomic force microscopy: plant models,
//! scan-pattern generators, sample topographies, the extremum-seeking
//! rate adapter and the baselines it is compared against.

pub mod baselines;
pub mod error;
pub mod esloop;
pub mod lti;
pub mod metric;
pub mod plant;
pub mod sim;
pub mod topography;
pub mod trajectory;

pub use error::{Error, Result};
