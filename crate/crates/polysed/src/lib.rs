//! File formats, on-disk datasets, feature caches, checkpoints and the
//! `polysed` command line, on top of `polysed-core`.

pub mod annotations;
pub mod bank;
pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod wav;

pub use error::{Error, Result};
