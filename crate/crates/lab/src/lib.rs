//! File formats, experiment runners and the `dleaf` command line on top of
//! `dleaf-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod trace_io;

pub use error::{LabError, LabResult};
