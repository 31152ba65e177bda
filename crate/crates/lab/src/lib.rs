//! Experiment harness for `unlearn-core`: configuration, file formats,
//! the multi-seed benchmark runner and the `unlearn` command line.

// Negated float comparisons are used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod pca;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
