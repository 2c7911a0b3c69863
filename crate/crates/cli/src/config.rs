//! Experiment configuration: a TOML file with one section per subsystem.
//! Every value has a default; CLI flags override individual keys.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use conftrack_core::datasets::BlobsConfig;
use conftrack_core::trainer::OptConfig;
use conftrack_core::{Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetConfig,
    pub noise: NoiseConfig,
    pub trainer: TrainerConfig,
    pub selector: SelectorConfig,
    pub output: OutputConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// "blobs" (synthesize) or "csv" (load `path`).
    pub source: String,
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub features: usize,
    pub per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub center_spread: f64,
    pub sigma: f64,
    pub hard_fraction: f64,
    pub hard_sigma_mult: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let b = BlobsConfig::default();
        Self {
            source: "blobs".into(),
            path: None,
            classes: b.n_classes,
            features: b.n_features,
            per_class: b.per_class,
            val_per_class: b.val_per_class,
            test_per_class: b.test_per_class,
            center_spread: b.center_spread,
            sigma: b.sigma,
            hard_fraction: b.hard_fraction,
            hard_sigma_mult: b.hard_sigma_mult,
            seed: b.seed,
        }
    }
}

impl DatasetConfig {
    pub fn blobs(&self) -> BlobsConfig {
        BlobsConfig {
            n_classes: self.classes,
            n_features: self.features,
            per_class: self.per_class,
            val_per_class: self.val_per_class,
            test_per_class: self.test_per_class,
            center_spread: self.center_spread,
            sigma: self.sigma,
            hard_fraction: self.hard_fraction,
            hard_sigma_mult: self.hard_sigma_mult,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// "none", "symmetric", "asymmetric" or "instance".
    pub kind: String,
    pub rate: f64,
    /// Explicit asymmetric pairs, e.g. "0:1,1:0,3:2".
    pub mapping: Option<String>,
    /// Circular-within-groups asymmetric mapping of this group size.
    pub group_size: Option<usize>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: "none".into(),
            rate: 0.0,
            mapping: None,
            group_size: None,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: Vec<(usize, f64)>,
    pub seed: u64,
    pub renormalize_mask: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let o = OptConfig::default();
        Self {
            hidden: vec![128, 128],
            batch_size: o.batch_size,
            epochs: o.epochs,
            warmup_epochs: o.warmup_epochs,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            lr_schedule: o.lr_schedule,
            seed: o.seed,
            renormalize_mask: o.renormalize_mask,
        }
    }
}

impl TrainerConfig {
    pub fn opt(&self) -> OptConfig {
        OptConfig {
            lr_schedule: self.lr_schedule.clone(),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            seed: self.seed,
            renormalize_mask: self.renormalize_mask,
        }
    }

    pub fn layer_sizes(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(classes);
        sizes
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub method: String,
    pub alpha: f64,
    /// Low-mean posterior threshold of the small-loss criterion.
    pub tau: f64,
    /// High-mean posterior threshold of the eigen-alignment criterion.
    pub fine_tau: f64,
    /// Momentum of the dynamic thresholds.
    pub lambda: f64,
    /// Estimated noise rate; required by the margin-ranking criterion.
    pub noise_rate: Option<f64>,
    pub k_slack: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            method: "gmm+ct".into(),
            alpha: 0.01,
            tau: 0.5,
            fine_tau: 0.5,
            lambda: 0.95,
            noise_rate: None,
            k_slack: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    pub dump_z: bool,
    pub per_epoch_csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            dump_z: false,
            per_epoch_csv: true,
        }
    }
}

/// Selection strategy: the trend criterion, one of the four baselines, a
/// baseline combined with the trend criterion by union, or no selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    None,
    Ct,
    Gmm,
    Aum,
    Dist,
    Fine,
    GmmCt,
    AumCt,
    DistCt,
    FineCt,
}

pub const METHOD_NAMES: &[&str] = &[
    "none", "ct", "gmm", "aum", "dist", "fine", "gmm+ct", "aum+ct", "dist+ct", "fine+ct",
];

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            "ct" => Ok(Method::Ct),
            "gmm" => Ok(Method::Gmm),
            "aum" => Ok(Method::Aum),
            "dist" => Ok(Method::Dist),
            "fine" => Ok(Method::Fine),
            "gmm+ct" => Ok(Method::GmmCt),
            "aum+ct" => Ok(Method::AumCt),
            "dist+ct" => Ok(Method::DistCt),
            "fine+ct" => Ok(Method::FineCt),
            other => Err(Error::InvalidInput(format!(
                "unknown method {other:?}; valid methods: {}",
                METHOD_NAMES.join(", ")
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Ct => "ct",
            Method::Gmm => "gmm",
            Method::Aum => "aum",
            Method::Dist => "dist",
            Method::Fine => "fine",
            Method::GmmCt => "gmm+ct",
            Method::AumCt => "aum+ct",
            Method::DistCt => "dist+ct",
            Method::FineCt => "fine+ct",
        }
    }

    pub fn uses_ct(self) -> bool {
        matches!(
            self,
            Method::Ct | Method::GmmCt | Method::AumCt | Method::DistCt | Method::FineCt
        )
    }

    pub fn baseline(self) -> Option<Baseline> {
        match self {
            Method::Gmm | Method::GmmCt => Some(Baseline::Gmm),
            Method::Aum | Method::AumCt => Some(Baseline::Aum),
            Method::Dist | Method::DistCt => Some(Baseline::Dist),
            Method::Fine | Method::FineCt => Some(Baseline::Fine),
            Method::None | Method::Ct => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Gmm,
    Aum,
    Dist,
    Fine,
}
