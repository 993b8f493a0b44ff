//! Recovery of SDE drift and volatility from one discretely observed path
//! by Gaussian-process MAP estimation.

pub mod benchmark;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod hyperlearn;
pub mod kernels;
pub mod numerics;
pub mod points;
pub mod seed;
pub mod simulate;

pub use error::{Error, Result};
pub use points::Points;
