//! Single-clip motion synthesis: a hierarchical skeleton-aware GAN trained on
//! one motion with mini-batches, annealed loss weights and cross-stage weight
//! transfer, plus evaluation metrics, representation-similarity analysis and
//! single-forward-pass composition tools.

pub mod analysis;
pub mod apps;
pub mod error;
pub mod evaluation;
pub mod motion;
pub mod network;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
