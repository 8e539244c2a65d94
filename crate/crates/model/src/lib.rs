//! ICCI encoder/interpreter networks on a small reverse-mode autodiff engine,
//! with end-to-end training through a simulated channel.

pub mod arch;
pub mod array;
pub mod blocks;
mod error;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod optim;
pub mod params;
pub mod tape;
pub mod training;

pub use arch::{compute_arch_for_dcr, ArchConfig, DcrChoice, Variant};
pub use error::{ModelError, Result};
pub use network::{encode, interpret};
pub use params::{NetworkParams, ParamStore};
pub use training::{mse_loss, train_e2e, TrainConfig, TrainHistory, Trainer};
