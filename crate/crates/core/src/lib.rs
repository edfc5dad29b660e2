//! Early-warning engine for forced-displacement flows.
//!
//! The library turns a balanced country-month panel of displacement flows and
//! covariates into calibrated three-class monthly risk indices (sudden
//! increase above an operational threshold, sustained high flow, below
//! threshold) at configurable prediction horizons. The stages:
//!
//! 1. [`panel`]: ingest and validate the panel, derive monthly thresholds.
//! 2. [`labeling`]: penalized change-point segmentation of each country's
//!    flow series and the six-scenario mapping to the three classes.
//! 3. [`features`]: horizon-aware lagging, imputation, standardization, and
//!    principal-component reduction of the covariates.
//! 4. [`gbm`]: pairwise gradient-boosted trees with random hyperparameter
//!    search over stratified folds and moving time windows.
//! 5. [`calibration`]: Platt scaling, probit rescaling, and pairwise
//!    coupling into one normalized class distribution per row.
//! 6. [`metrics`]: scoring and calibration diagnostics.
//! 7. [`synth`]: a deterministic scripted panel generator used as ground
//!    truth in tests and demos.
//! 8. [`pipeline`]: end-to-end orchestration plus artifact serialization,
//!    exposed to operators through the `flowrisk` binary.
//!
//! Numeric code is generic over the scalar type via the [`Real`] trait;
//! `f64` aliases for the common types are exported at the crate root.

pub mod calibration;
pub mod config;
pub mod error;
pub mod features;
pub mod gbm;
pub mod labeling;
pub mod matrix;
pub mod metrics;
pub mod num;
pub mod panel;
pub mod pipeline;
pub mod special;
pub mod synth;

pub use error::{Error, ErrorFamily, Result};
pub use num::Real;

/// Balanced country-month panel with `f64` flows and features.
pub type Panel = panel::FlowPanel<f64>;
/// Operational threshold (yearly level plus its monthly equivalent) in `f64`.
pub type Threshold = panel::ThresholdSpec<f64>;
/// Detected change point with `f64` segment statistics.
pub type ChangePoint = labeling::ChangePoint<f64>;
/// Boosted pairwise classifier over `f64` features.
pub type Gbm = gbm::GbmModel<f64>;
/// Coupled three-class probability vector in `f64`.
pub type ClassProbs = calibration::ClassProbs<f64>;
/// Evaluation report over `f64` metrics.
pub type Report = metrics::EvaluationReport<f64>;
