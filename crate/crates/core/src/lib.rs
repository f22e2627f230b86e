//! Concept-disentangled multiple-instance learning for volumetric image
//! quality grading, with a synthetic phantom generator to train and test it.

pub mod bagging;
pub mod concept;
mod error;
pub mod inference;
mod jsonio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synthdata;
pub mod training;

pub use concept::Concept;
pub use error::{Error, Result};
