//! Numerical core for hybrid soft-SOM / spiking-head classifiers.
//!
//! Everything in this crate is `no_std` + `alloc`: dense row-major matrices,
//! the differentiable soft self-organizing layer, the time-stepped spiking
//! head, the composed model variants, the training objective stack, and the
//! evaluation statistics. File formats, checkpoints, and the training loop
//! live in the `somspike` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backbone;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod linear;
pub mod matrix;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod rng;
pub mod softsom;
pub mod spikehead;

pub use error::{Error, Result};
pub use matrix::{Matrix, Param};

/// Whether a forward pass is part of an optimization step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }
}
