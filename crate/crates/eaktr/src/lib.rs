//! File formats, training driver, sweep harness, plotting and command-line
//! interface on top of `eaktr-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod fsutil;
pub mod gridfile;
pub mod harness;
pub mod metrics;
pub mod plot;
pub mod train;
pub mod trajfile;

pub use error::{Error, Result};
