//! Tensor-ring compression toolkit: the ring format, trainable TR-linear
//! layers, an NSGA-II engine over rank genomes, and the progressive
//! search-space controller built on top of it.

pub mod error;
pub mod evolve;
mod linalg;
pub mod progressive;
pub mod tensor;
pub mod tr_format;
pub mod tr_models;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
pub use tr_format::{RankVector, TensorRingFormat};
