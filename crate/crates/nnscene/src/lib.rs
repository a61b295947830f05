//! Std companion to `nnscene-core`: binary file formats, the decode and
//! evaluation pipeline over whole feature sets, the latency benchmark
//! harness, the toy pretraining driver and the `nnscene` command line.

pub mod bench;
pub mod cli;
pub mod config;
mod error;
pub mod format;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};

/// Environment variable holding the worker-thread count for decoding.
pub const THREADS_ENV: &str = "NNSCENE_THREADS";
