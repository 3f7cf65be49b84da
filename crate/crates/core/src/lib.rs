//! Transformer-based multimodal autoencoder (TMAE) for unsupervised patient
//! representation learning on medical claims, with a synthetic claims
//! generator and a clustering-based evaluation toolkit.

pub mod benchmark;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
