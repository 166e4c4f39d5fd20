//! Fall prediction toolkit for a standing planar biped.
//!
//! The crate simulates a two-link standing robot under injected force
//! faults, turns episodes into labeled sliding-window datasets, trains a
//! three-stage 1D-CNN pipeline (critical fault classifier, lead-time
//! classifier, lead-time regressor), and evaluates trajectory-level false
//! positive rate, lead time, and response time.
//!
//! All numeric kernels are generic over the scalar type via [`num::Real`];
//! the CLI and file formats use `f64`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod forces;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod num;
pub mod pipeline;
pub mod sim;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use num::Real;

/// Scalar type used by the CLI and all on-disk formats.
pub type DefaultScalar = f64;

/// Convenience aliases at the default scalar type.
pub type Simulator64 = sim::Simulator<DefaultScalar>;
pub type Trajectory64 = sim::Trajectory<DefaultScalar>;
