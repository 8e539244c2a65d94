//! Separate source and channel coding baseline: a transform codec, FEC,
//! digital modulation, pilot-trained equalizers and GAP-TV reconstruction,
//! chained by [`pipeline::sc_pipeline`].

pub mod bitstream;
pub mod codec;
pub mod equalizer;
mod error;
pub mod fec;
pub mod gaptv;
pub mod modulation;
pub mod pipeline;

pub use bitstream::BitStream;
pub use error::{Result, ScError};
