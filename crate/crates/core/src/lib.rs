//! Hyperspectral pixel classification: PCA reduction, patch extraction, a
//! multiscale 3D-convolution + transformer + gated token-mixing network
//! trained from scratch on a small reverse-mode autodiff engine, and
//! confusion-matrix based evaluation.

pub mod error;
pub mod hsi_io;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
