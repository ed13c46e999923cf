//! Filesystem side of the MRLMC toolkit: the dataset and checkpoint
//! formats, JSON experiment configs and the subcommands behind the `mrlmc`
//! executable.

pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod io;

pub use error::{CliError, Result};
