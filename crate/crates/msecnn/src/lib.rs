//! Files, datasets and the command-line pipeline around `msecnn-core`.

pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod driver;
pub mod error;
pub mod fsutil;
pub mod synth;
pub mod wav;

pub use error::{Error, Result};
pub use msecnn_core as core;
