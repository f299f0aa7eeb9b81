//! Discrete choice models whose utility is built from numeric attributes,
//! image-derived semantic attributes and a residual embedding term.
//!
//! The crate covers the whole pipeline: ingesting choice data, embeddings and
//! segmentation labels; evaluating and training the model in three sequential
//! phases; generating synthetic data from known coefficients; and scoring
//! street-level images city-wide with zone aggregation and per-attribute
//! deviation decomposition.

pub mod data;
pub mod error;
pub mod json;
pub mod model;
pub mod semantics;
pub mod simulator;
pub mod spatial;
pub mod trainer;

pub use error::{Error, Result};
pub use semantics::{Attribute, SemanticVector};
