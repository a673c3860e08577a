//! Protein folding-rate prediction with a compact shallow-tree regressor.

pub mod baseline;
pub mod bonsai;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod feedback;
pub mod pipeline;
pub mod preprocess;

pub use error::{Error, Result};
