//! Dataset files, end-to-end estimation with confidence intervals,
//! replication experiments and the `d2ope` command line.
//!
//! The algorithms live in [`d2ope_core`]; this crate adds everything that
//! needs `std`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod io;

pub use error::{Error, Result};
