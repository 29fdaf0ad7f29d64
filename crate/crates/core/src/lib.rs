//! Extreme multi-label classification with negative-mining-aware mini-batching.

pub mod ann;
pub mod checkpoint;
pub mod cli;
pub mod clustering;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod infer;
pub mod linalg;
pub mod metrics;
pub mod negmine;
pub mod synth;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
