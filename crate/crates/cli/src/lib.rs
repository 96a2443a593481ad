//! File formats, configuration and the command implementations behind the
//! `relsr` binary. The numeric work all lives in `relsr-core`; this crate
//! owns everything that touches the filesystem.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod ltsr;
pub mod ppm;

pub use error::{CliError, ExitCode};
