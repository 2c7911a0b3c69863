//! Sample selection for learning with noisy labels.
//!
//! The core idea: a correctly labeled sample is one whose prediction
//! confidence for the annotated class rises faster than for every other
//! class. We track the per-class confidence gaps of each sample across
//! training epochs and test each gap series for an upward trend with a
//! streaming Mann-Kendall test; a sample is selected when the weakest trend
//! is still significant. The trend criterion combines (by union) with the
//! classical selectors (small-loss GMM, AUM margins, DIST dynamic
//! thresholds, FINE eigen-alignment) to recover correctly labeled
//! hard-to-learn samples those methods reject.
//!
//! The crate also ships everything needed to exercise the pipeline without
//! an external framework: a small feed-forward trainer with explicit
//! backpropagation, label-noise injectors, synthetic dataset generation,
//! binary prediction logs, and selection-quality metrics.

pub mod datasets;
pub mod error;
pub mod evalx;
pub mod gmm;
pub mod mk;
pub mod noise;
pub mod selectors;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
