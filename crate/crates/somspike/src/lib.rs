//! File formats, the training loop, and the command-line front end for
//! [`somspike_core`].

pub mod blobs;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod store;
pub mod trainer;

pub use error::{IoError, IoResult};
pub use somspike_core as core;
