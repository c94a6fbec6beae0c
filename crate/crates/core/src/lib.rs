//! Dataset handling, features, member models, out-of-fold stacking,
//! evaluation and synthetic corpora for pedestrian crossing prediction.

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod models;
pub mod pipeline;
pub mod synth;

pub use error::{CoreError, Result};
