//! Pointwise adaptive local polynomial regression with Lepski-type scale
//! selection, critical-value calibration, a simulation lab for finite-sample
//! risk identities, and the information complexity of Karhunen-Loeve
//! truncation for tensor-product random fields.
//!
//! The estimation stack (`linalg`, `design`, `local_model`, `lepski`) is
//! generic over [`Scalar`]; Monte Carlo and complexity code runs in `f64`.

pub mod calibration;
pub mod complexity;
pub mod design;
pub mod error;
pub mod lepski;
pub mod linalg;
pub mod local_model;
pub mod risk_lab;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type DesignGrid = design::DesignGrid<f64>;
pub type LocalizationLadder = design::LocalizationLadder<f64>;
pub type NoiseModel = local_model::NoiseModel<f64>;
pub type ScaleEstimate = local_model::ScaleEstimate<f64>;
pub type LocalModel = local_model::LocalModel<f64>;
pub type AdaptiveResult = lepski::AdaptiveResult<f64>;

pub use design::KernelShape;
pub use local_model::Basis;
