//! Importance-weighted and minimax domain adaptation for unsupervised speech
//! enhancement with a variance-constrained autoencoder.

pub mod audio;
pub mod domain;
pub mod error;
pub mod features;
pub mod metrics;
pub mod tensor;
pub mod vcae;

pub use error::{Error, Result};
