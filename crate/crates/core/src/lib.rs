//! Single- and multi-branch multimodal recommenders with the evaluation
//! protocol around them: splits, training, ranking metrics, modality-gap
//! diagnostics and synthetic planted-structure data.

pub mod dataset;
mod error;
pub mod eval;
pub mod gap;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod splits;
pub mod stats;
pub mod synth;
pub mod trainer;
pub mod view;

pub use error::{MmrecError, Result};
