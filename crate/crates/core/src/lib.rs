//! Simulator for amplitude-only angle-of-arrival localization of tiny
//! receivers swept by phased-array access points, with the backscatter
//! uplink and energy budget of such a device.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backscatter;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod pipeline;
pub mod power;
pub mod receiver;
pub mod rng;
pub mod scenario;
pub mod transmitter;

pub use error::{Error, Result};
