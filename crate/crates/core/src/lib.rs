//! Discriminative-embedding autoencoder with regressor feedback for
//! zero-shot and generalized zero-shot classification.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod json;
pub mod losses;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Matrix;
