//! File formats, ingestion, experiment drivers and the command line for
//! `msacnn-core`.
//!
//! * [`store`]: the `EPS1` epoch store.
//! * [`ingest`]: per-subject CSV recordings to an epoch set.
//! * [`checkpoint`]: `MSC1` model checkpoints and their text manifests.
//! * [`runconfig`]: flat `key=value` run configuration.
//! * [`runner`]: cross-validation, ablation and sweep drivers writing run
//!   directories with hashed manifests.
//! * [`cli`]: the `msacnn` binary.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod ingest;
pub mod preprocess;
pub mod report;
pub mod runconfig;
pub mod runner;
pub mod store;

pub use error::{Error, Result};
