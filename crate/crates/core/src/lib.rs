//! Kernel-weighted conformal intervals for regression.
//!
//! The pipeline has three stages:
//!
//! 1. [`train`] learns a low-rank transform `A` so that the kernel
//!    `K(u, v) = exp(-|A(u - v)|^2)` minimizes the leave-one-out
//!    Nadaraya-Watson error on a training set of embeddings.
//! 2. [`conformal`] collects absolute residuals on a disjoint calibration set.
//! 3. For a test point, the residuals are re-weighted by their kernel
//!    similarity to it, a `+inf` atom carries the test point's own weight, and
//!    the `1 - alpha` weighted quantile becomes the interval half-width.
//!
//! [`eval`] measures validity (marginal, tail and local coverage) and
//! discrimination (width-vs-residual AUROC), and [`synth`] generates the cubic
//! benchmark with a heavy right tail in `x`.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod conformal;
mod error;
pub mod eval;
pub mod kernel;
pub mod linalg;
pub mod stats;
pub mod synth;
pub mod train;

pub use conformal::{CalibrationSet, Interval, PreparedCalibration};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use kernel::{MetricModel, NormalizationStats};
pub use linalg::Matrix;
pub use stats::{ExtendedValue, WeightedEmpirical};
pub use train::{TrainConfig, TrainSummary};
