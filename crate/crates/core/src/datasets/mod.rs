//! Synthetic datasets, CSV I/O, and the binary prediction-log format.

mod csv;
mod predlog;

pub use csv::{load_csv, save_csv};
pub use predlog::{
    read_predlog, write_predlog, EpochRecord, LogKind, PredictionLog, FORMAT_VERSION, LOGIT_MAGIC,
    PROB_MAGIC,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!(
                "unknown split {other:?}, expected train, val or test"
            ))),
        }
    }
}

/// A labeled feature table with per-sample split tags.
///
/// `clean_labels` carries the pre-corruption annotations when known; the
/// clean mask is `noisy == clean` elementwise. `hard` tags the inflated-
/// variance subpopulation of generated blobs (in-memory only, the CSV
/// schema does not persist it).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub n_classes: usize,
    /// Row-major `[sample][feature]`.
    pub features: Vec<f64>,
    pub noisy_labels: Vec<usize>,
    pub clean_labels: Option<Vec<usize>>,
    pub splits: Vec<Split>,
    pub hard: Option<Vec<bool>>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// Gathered copies of the rows and labels of one split.
    pub fn split_view(&self, split: Split) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
        let ids = self.split_indices(split);
        let mut x = Vec::with_capacity(ids.len() * self.n_features);
        let mut y = Vec::with_capacity(ids.len());
        for &i in &ids {
            x.extend_from_slice(self.feature_row(i));
            y.push(self.noisy_labels[i]);
        }
        (x, y, ids)
    }

    /// True where the noisy label matches the clean one.
    pub fn clean_mask(&self) -> Option<Vec<bool>> {
        self.clean_labels.as_ref().map(|clean| {
            clean
                .iter()
                .zip(&self.noisy_labels)
                .map(|(c, n)| c == n)
                .collect()
        })
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_samples();
        if self.features.len() != n * self.n_features {
            return Err(Error::InvalidInput(format!(
                "{} feature cells for {n} samples x {} features",
                self.features.len(),
                self.n_features
            )));
        }
        if self.splits.len() != n {
            return Err(Error::InvalidInput(
                "split tags do not cover all samples".into(),
            ));
        }
        for &l in &self.noisy_labels {
            if l >= self.n_classes {
                return Err(Error::InvalidInput(format!(
                    "label {l} out of range for {} classes",
                    self.n_classes
                )));
            }
        }
        if let Some(clean) = &self.clean_labels {
            if clean.len() != n {
                return Err(Error::InvalidInput(
                    "clean labels do not cover all samples".into(),
                ));
            }
            for &l in clean {
                if l >= self.n_classes {
                    return Err(Error::InvalidInput(format!(
                        "clean label {l} out of range for {} classes",
                        self.n_classes
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gaussian-blob generation with a planted hard-to-learn subpopulation.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobsConfig {
    pub n_classes: usize,
    pub n_features: usize,
    /// Training samples per class.
    pub per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Distance scale of the class centers from the origin.
    pub center_spread: f64,
    /// Within-class standard deviation of the easy subpopulation.
    pub sigma: f64,
    /// Fraction of each class drawn with inflated sigma.
    pub hard_fraction: f64,
    pub hard_sigma_mult: f64,
    pub seed: u64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_features: 8,
            per_class: 500,
            val_per_class: 0,
            test_per_class: 125,
            center_spread: 3.0,
            sigma: 0.5,
            hard_fraction: 0.25,
            hard_sigma_mult: 3.0,
            seed: 17,
        }
    }
}

/// Generate Gaussian blobs, one per class. When `n_classes <= n_features`
/// the centers sit on scaled coordinate axes (exactly separable); otherwise
/// they are random directions of the same length. A `hard_fraction` of each
/// split segment is drawn with `sigma * hard_sigma_mult` and tagged hard.
pub fn gen_blobs(cfg: &BlobsConfig) -> Result<Dataset> {
    if cfg.n_classes < 2 || cfg.n_features < 2 {
        return Err(Error::InvalidInput(format!(
            "need K >= 2 and D >= 2, got K = {}, D = {}",
            cfg.n_classes, cfg.n_features
        )));
    }
    if cfg.per_class == 0 {
        return Err(Error::InvalidInput("per_class must be positive".into()));
    }
    if !(cfg.sigma.is_finite() && cfg.sigma > 0.0)
        || !(cfg.center_spread.is_finite() && cfg.center_spread >= 0.0)
    {
        return Err(Error::InvalidInput(format!(
            "sigma must be positive and spread non-negative (sigma = {}, spread = {})",
            cfg.sigma, cfg.center_spread
        )));
    }
    if !(0.0..=1.0).contains(&cfg.hard_fraction)
        || !(cfg.hard_sigma_mult.is_finite() && cfg.hard_sigma_mult > 0.0)
    {
        return Err(Error::InvalidInput(format!(
            "hard_fraction in [0,1] and positive multiplier required (got {} and {})",
            cfg.hard_fraction, cfg.hard_sigma_mult
        )));
    }

    let (k, d) = (cfg.n_classes, cfg.n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut centers = vec![0.0f64; k * d];
    if k <= d {
        for c in 0..k {
            centers[c * d + c] = cfg.center_spread;
        }
    } else {
        for c in 0..k {
            let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for j in 0..d {
                centers[c * d + j] = cfg.center_spread * dir[j] / norm;
            }
        }
    }

    let total = k * (cfg.per_class + cfg.val_per_class + cfg.test_per_class);
    let mut features = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    let mut hard = Vec::with_capacity(total);

    for c in 0..k {
        for (count, split) in [
            (cfg.per_class, Split::Train),
            (cfg.val_per_class, Split::Val),
            (cfg.test_per_class, Split::Test),
        ] {
            let n_hard = (cfg.hard_fraction * count as f64).round() as usize;
            for i in 0..count {
                let is_hard = i < n_hard;
                let sigma = if is_hard {
                    cfg.sigma * cfg.hard_sigma_mult
                } else {
                    cfg.sigma
                };
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    features.push(centers[c * d + j] + sigma * z);
                }
                labels.push(c);
                splits.push(split);
                hard.push(is_hard);
            }
        }
    }

    let ds = Dataset {
        n_features: d,
        n_classes: k,
        features,
        clean_labels: Some(labels.clone()),
        noisy_labels: labels,
        splits,
        hard: Some(hard),
    };
    ds.validate()?;
    Ok(ds)
}
