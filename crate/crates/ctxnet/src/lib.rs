//! Context-transformation network for MNIST.
//!
//! An autoencoder compresses digits to 32-value codes, 405 per-context nets
//! re-express each code under a geometric transformation, and a weight-shared
//! classifier head recognizes the digit together with its best-matching
//! context. A conventional CNN baseline is included for comparison.

pub mod autoencoder;
pub mod baseline;
pub mod classifier;
pub mod config;
pub mod context;
pub mod data;
pub mod error;
pub mod layers;
pub mod store;
pub mod tensor;
pub mod warp;

pub use error::{Error, Result};
