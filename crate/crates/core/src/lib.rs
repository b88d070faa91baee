//! Speaker-verification score calibration: cosine scoring, adaptive
//! s-norm, affine and condition-aware neural calibration, detection
//! metrics, and synthetic data with known ground truth.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision. File I/O and pipelines work in `f64`.

pub mod data;
pub mod error;
pub mod linear;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod scoring;
pub mod snorm;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type LinearCalibration64 = linear::LinearCalibration<f64>;
pub type LinearCalibration32 = linear::LinearCalibration<f32>;
pub type Network64 = nn::Network<f64>;
pub type Network32 = nn::Network<f32>;
pub type NeuralModel64 = neural::NeuralModel<f64>;
pub type NeuralModel32 = neural::NeuralModel<f32>;
pub type LabeledScores64 = data::LabeledScores<f64>;
pub type LabeledScores32 = data::LabeledScores<f32>;
