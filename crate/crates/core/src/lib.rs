//! Numeric core for FCN-5 / MsE-CNN music tagging.
//!
//! Everything here is allocation-only (`no_std` + `alloc`): tensor kernels
//! with backward passes, the FFT and log-Mel front end, model assembly,
//! training primitives, ranking metrics and the checkpoint codec. File and
//! process IO live in the `msecnn` crate.
#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod audio;
pub mod checkpoint;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod real;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use error::{Error, FormatError, Result};
pub use real::Real;
pub use tensor::Tensor;
