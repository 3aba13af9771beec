//! Evaluation harness for clinical time-series imputation under configurable
//! artificial missingness.
//!
//! The crate covers the full pipeline: dataset I/O and stratified folds,
//! synthetic ICU-like cohorts with clinical missingness mechanisms, the four
//! mask patterns under augmentation/overlay strategies and pre-mask or
//! mini-batch timing, normalization fitted before or after masking,
//! classical imputers, masked-cell metrics, downstream mortality scoring, an
//! external-process plug-in protocol and the experiment grid runner.

pub mod adapter;
pub mod dataset;
pub mod downstream;
pub mod error;
pub mod imputers;
pub mod masking;
pub mod metrics;
pub mod normalization;
pub mod runner;
pub mod seed;
pub mod synth;

pub use dataset::{DatasetManifest, LabelVector, Mask, Scale, Shape, TimeSeriesTensor};
pub use error::{Error, Result};
