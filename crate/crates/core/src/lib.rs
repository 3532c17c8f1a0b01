//! Factorization machines with basis-function encoding of numerical fields.
//!
//! Continuous fields are mapped to `[0, 1]` by a monotone transform, encoded
//! as the values of a cubic B-spline basis, and summed into a single
//! embedding slot before the pairwise interactions of an FM, FFM, FwFM or
//! FmFM model. The crate covers schema inference and encoding, training,
//! evaluation, conversion of spline fields back to fine-grained bins, and a
//! synthetic bins-vs-splines experiment.

pub mod bin_export;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fm;
pub mod plot;
pub mod schema;
pub mod spline_basis;
pub mod synthetic;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
