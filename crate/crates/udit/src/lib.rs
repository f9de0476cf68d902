//! Std companion to `udit-core`: dataset files, checkpoints, training runs,
//! evaluation, charts and the `udit` command line.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod extractor;
pub mod report;
pub mod train;

pub use error::{Error, Result};
