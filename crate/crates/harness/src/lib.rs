//! Experiment configuration, scenario drivers and result files for the
//! `landau` command-line tool.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fits;
pub mod initial;
pub mod output;
pub mod pool;
pub mod scenarios;

pub use error::{HarnessError, Result};
