//! Core data types and physics for ICCI experiments: tensors and the ICT
//! file format, deterministic randomness, synthetic scenes, coded-aperture
//! sensing, channel simulation and quality metrics.

pub mod channel;
pub mod dataset;
mod error;
pub mod ict;
pub mod metrics;
pub mod rng;
pub mod scene;
pub mod sensing;
mod tensor;

pub use error::{CoreError, Result};
pub use rng::Rng;
pub use tensor::Tensor;
