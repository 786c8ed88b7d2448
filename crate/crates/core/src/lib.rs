//! Day/night data, image translators, the six-channel representation, a
//! two-stage car detector and VOC-style evaluation.

pub mod checkpoint;
pub mod dataset;
pub mod detector;
mod error;
pub mod metrics;
pub mod sixchannel;
pub mod translate;

pub use error::{Error, Result};
