//! File formats, experiment engine and command-line front end for generative
//! active learning on synthetic worlds.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod fsutil;
pub mod manifest;
pub mod results;
pub mod snapshot;

pub use error::{Error, Result};
