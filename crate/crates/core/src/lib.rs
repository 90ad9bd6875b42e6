pub mod error;
pub mod fields;
pub mod geometry;
pub mod hurdle;
pub mod likelihoods;
pub mod model;
pub mod predict;
pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod simulate;
pub mod sparse;

pub use error::{Error, Result};
