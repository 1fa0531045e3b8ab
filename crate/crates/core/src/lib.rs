//! Weighted conformal prediction with multiple covariate-shifted sources.
//!
//! The crate covers single-source weighted conformal prediction, merging of
//! per-source sets (by vote or by merged p-values), pooling of calibration
//! data with mixture likelihood ratios, and the hierarchical pooled variant
//! with estimated mixture weights. The [`harness`] module runs replicated
//! coverage experiments on synthetic data.

// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod domain;
pub mod error;
pub mod harness;
pub mod merge;
pub mod models;
pub mod parallel;
pub mod pool;
pub mod quantile;
pub mod ratio;
pub mod rng;
pub mod wcp;

pub use domain::{DomainDataset, FeatureMap, Label, LabeledSample, SplitRole};
pub use error::{MscpError, Result};
pub use merge::MergeRule;
pub use parallel::Execution;
pub use quantile::WeightedScoreDistribution;
pub use ratio::{LikelihoodRatio, RatioModel};
pub use wcp::{CalibrationScores, Interval, PredictionSet, SetRegion};
