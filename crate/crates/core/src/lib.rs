//! Multi-scale convolutional network with attention for sleep-stage
//! classification.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece:
//! a small reverse-mode tensor engine, Butterworth preprocessing, the
//! multi-scale and temporal-context modules, the assembled model with exact
//! parameter and MAC accounting, Adam training, and subject-wise
//! cross-validation with the usual sleep-staging metrics. File formats,
//! ingestion and the command line live in the companion `msacnn` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod error;
pub mod eval;
pub mod math;
pub mod model;
pub mod msm;
pub mod rng;
pub mod sigproc;
pub mod tcm;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
