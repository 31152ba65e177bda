//! One-shot scrubbing of trained models under a linearized (neural tangent
//! kernel) view of fine-tuning, together with the Gaussian bounds used to
//! audit how much information about a forgotten cohort remains.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! experiment orchestration live in the `unlearn-lab` companion crate.
//!
//! Module map:
//!
//! - [`numerics`]: dense matrices, symmetric factorizations, pseudo-inverse
//!   and seeded Gaussian sampling.
//! - [`model`]: linear and MLP models, Jacobians, anchored SGD, Fisher diagonal.
//! - [`ntk`]: kernel blocks, closed-form linearized solutions and the
//!   scrubbing shift.
//! - [`scrub`]: end-to-end scrubbing procedures and baselines.
//! - [`info`]: Gaussian KL and the white-box / black-box bounds.
//! - [`readout`]: error, relearn-time, membership and activation readouts.
//! - [`data`]: synthetic clustered datasets and forget/retain partitions.

#![no_std]
// Negated float comparisons are used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod info;
pub mod model;
pub mod ntk;
pub mod numerics;
pub mod readout;
pub mod scrub;

pub use error::{Error, Result};
