//! File formats, checkpoints, retrieval-index persistence, tables and the
//! command-line driver around `stexp-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod format;
pub mod index_io;
pub mod output;
pub mod tables;

pub use error::{Error, Result};
