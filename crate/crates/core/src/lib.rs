//! Membership-inference leakage toolkit.
//!
//! Trains small fully-connected classifiers from scratch, scores their
//! predictions with black-box membership attacks, turns the scores into
//! ROC-based leakage metrics, locates the training members that stay exposed
//! after overfitting is controlled, and applies an inference-time
//! logit-reweighting defense.
//!
//! Modules, bottom-up:
//!
//! - [`nn`]: MLP forward/backward, SGD and DP-SGD, training with early
//!   stopping, L2, dropout and label smoothing.
//! - [`data`]: synthetic binary datasets with planted label noise, CSV I/O,
//!   stratified member/non-member splits.
//! - [`attacks`]: loss, confidence, entropy and scaled-logit scores.
//! - [`metrics`]: ROC, AUC, advantage, TPR at fixed FPR, vulnerable members.
//! - [`geometry`]: class centroids, outlier scores, logit reweighting, PCA.
//! - [`harness`]: end-to-end experiments, defense comparisons,
//!   exclude-and-retrain, report export.

pub mod attacks;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
