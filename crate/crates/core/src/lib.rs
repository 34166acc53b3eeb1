//! Privacy accounting and simulation core for differentially private
//! wireless federated learning over an analog (over-the-air) uplink.
//!
//! Everything here is `no_std` with `alloc`: the accountant is a set of
//! pure functions over a recorded alignment-factor sequence, while the
//! simulator executes FedAvg rounds with per-sample clipping, device and
//! mini-batch sampling, block-fading gains and additive channel noise.
//! File formats, experiment sweeps and the command line live in the
//! `dpwfl` companion crate.

#![no_std]
#![warn(missing_docs)]
// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod accountant;
pub mod channel;
pub mod diagnostics;
mod error;
pub mod losses;
pub mod math;
mod params;
pub mod rng;
pub mod simulator;
pub mod verifier;

pub use error::{Error, Result};
pub use params::HyperParams;

/// Index of a client device, `0..n`.
pub type DeviceId = usize;
