//! End-to-end experiment orchestration.
//!
//! The training loop interleaves epochs with selection: warm up on all
//! samples, record per-sample statistics on the fly, and from the warm-up
//! boundary on recompute the training mask after every epoch as the union
//! of the configured baseline and the trend criterion.
//!
//! Selection consumes the f32 statistics that go into the prediction logs,
//! so replaying a log offline reproduces the online decisions exactly.

use conftrack_core::datasets::{Dataset, LogKind, PredictionLog, Split};
use conftrack_core::evalx::{self, SelectionReport};
use conftrack_core::gmm::EmConfig;
use conftrack_core::noise::{inject_asymmetric, inject_instance, inject_symmetric, AsymMapping};
use conftrack_core::selectors::{self, AumState, DistState, SelectionMask};
use conftrack_core::trainer::{Model, Sgd};
use conftrack_core::trajectory::GapHistory;
use conftrack_core::{Error, Result};

use crate::config::{Baseline, Config, Method, NoiseConfig, SelectorConfig};

/// Mixture configuration used when splitting eigen-alignment scores.
fn fine_em_config() -> EmConfig {
    EmConfig {
        tol: 1e-3,
        ..EmConfig::default()
    }
}

/// Cross-entropy recomputed from logged 32-bit probabilities. The floor
/// keeps saturated rows finite; both the online and offline paths go
/// through here so their selections agree bitwise.
pub fn selection_losses(probs: &[f32], labels: &[usize], n_classes: usize) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -((probs[i * n_classes + y] as f64).max(1e-12)).ln())
        .collect()
}

/// Resolved selector parameters.
#[derive(Debug, Clone)]
pub struct SelectorParams {
    pub method: Method,
    pub alpha: f64,
    pub tau: f64,
    pub fine_tau: f64,
    pub lambda: f64,
    pub noise_rate: Option<f64>,
    pub k_slack: f64,
}

impl SelectorParams {
    pub fn from_config(cfg: &SelectorConfig) -> Result<Self> {
        let method = Method::parse(&cfg.method)?;
        let params = Self {
            method,
            alpha: cfg.alpha,
            tau: cfg.tau,
            fine_tau: cfg.fine_tau,
            lambda: cfg.lambda,
            noise_rate: cfg.noise_rate,
            k_slack: cfg.k_slack,
        };
        if matches!(params.method.baseline(), Some(Baseline::Aum)) && params.noise_rate.is_none() {
            return Err(Error::InvalidInput(
                "margin ranking needs --noise-rate (it keeps the top 1 - noise_rate - k samples)"
                    .into(),
            ));
        }
        Ok(params)
    }
}

/// Selection state fed one epoch of predictions at a time. The same engine
/// backs the online loop and offline log replay.
pub struct SelectorEngine {
    params: SelectorParams,
    labels: Vec<usize>,
    n_classes: usize,
    store: GapHistory,
    aum: AumState,
    dist: DistState,
    last_dist_mask: Option<SelectionMask>,
    last_losses: Vec<f64>,
    epochs_seen: usize,
    has_logits: bool,
    all_ids: Vec<usize>,
}

impl SelectorEngine {
    pub fn new(
        labels: Vec<usize>,
        n_classes: usize,
        capacity_epochs: usize,
        params: SelectorParams,
    ) -> Result<Self> {
        let n = labels.len();
        Ok(Self {
            store: GapHistory::new(n, n_classes, capacity_epochs, labels.clone())?,
            aum: AumState::new(n, n_classes)?,
            dist: DistState::new(n, n_classes, params.lambda)?,
            last_dist_mask: None,
            last_losses: Vec::new(),
            epochs_seen: 0,
            has_logits: false,
            all_ids: (0..n).collect(),
            params,
            labels,
            n_classes,
        })
    }

    pub fn params(&self) -> &SelectorParams {
        &self.params
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn epochs_seen(&self) -> usize {
        self.epochs_seen
    }

    /// Fold one epoch of predictions (all samples, id order) into every
    /// selector state.
    pub fn observe_epoch(
        &mut self,
        epoch: usize,
        probs: &[f32],
        logits: Option<&[f32]>,
    ) -> Result<()> {
        self.store.record_epoch(epoch, probs, &self.all_ids)?;
        if let Some(logits) = logits {
            self.aum
                .update(epoch, logits, &self.labels, &self.all_ids)?;
            self.has_logits = true;
        }
        self.last_dist_mask = Some(self.dist.step(probs, &self.labels, &self.all_ids)?);
        self.last_losses = selection_losses(probs, &self.labels, self.n_classes);
        self.epochs_seen = epoch + 1;
        Ok(())
    }

    fn baseline_mask(
        &self,
        features: Option<&[f64]>,
        feature_dim: usize,
    ) -> Result<Option<SelectionMask>> {
        let Some(baseline) = self.params.method.baseline() else {
            return Ok(None);
        };
        let mask = match baseline {
            Baseline::Gmm => {
                selectors::gmm_select(&self.last_losses, self.params.tau, &EmConfig::default())?
            }
            Baseline::Aum => {
                if !self.has_logits {
                    return Err(Error::InvalidInput(
                        "margin ranking needs a logits log".into(),
                    ));
                }
                let rate = self.params.noise_rate.ok_or_else(|| {
                    Error::InvalidInput("margin ranking needs a noise-rate estimate".into())
                })?;
                selectors::aum_select(&self.aum, rate, self.params.k_slack)?
            }
            Baseline::Dist => self
                .last_dist_mask
                .clone()
                .ok_or(Error::InsufficientHistory { needed: 1, got: 0 })?,
            Baseline::Fine => {
                let features = features.ok_or_else(|| {
                    Error::InvalidInput("eigen-alignment selection needs a feature matrix".into())
                })?;
                selectors::fine_select(
                    features,
                    feature_dim,
                    &self.labels,
                    self.n_classes,
                    self.params.fine_tau,
                    &fine_em_config(),
                )?
            }
        };
        Ok(Some(mask))
    }

    /// Selection from the current state. `features` backs the
    /// eigen-alignment baseline and is ignored by the others.
    pub fn select(&self, features: Option<&[f64]>, feature_dim: usize) -> Result<SelectionMask> {
        if self.epochs_seen == 0 {
            return Err(Error::InsufficientHistory { needed: 1, got: 0 });
        }
        let baseline = self.baseline_mask(features, feature_dim)?;
        let ct = if self.params.method.uses_ct() {
            Some(selectors::ct_select(&self.store, self.params.alpha)?)
        } else {
            None
        };
        match (baseline, ct) {
            (Some(b), Some(c)) => selectors::union(&[&b, &c]),
            (Some(b), None) => Ok(b),
            (None, Some(c)) => Ok(c),
            (None, None) => Ok(SelectionMask::all_true(self.n_samples())),
        }
    }

    /// Weakest off-label trend statistic per sample, once two epochs exist.
    pub fn z_snapshot(&self) -> Option<Vec<f64>> {
        self.store.snapshot_z().ok()
    }

    pub fn avg_margins(&self) -> Option<Vec<f64>> {
        self.has_logits.then(|| self.aum.avg_margins())
    }

    /// Low-mean posteriors of the latest losses, when the method uses them.
    pub fn gmm_posterior(&self) -> Option<Vec<f64>> {
        if !matches!(self.params.method.baseline(), Some(Baseline::Gmm)) {
            return None;
        }
        selectors::gmm_clean_posterior(&self.last_losses, &EmConfig::default()).ok()
    }
}

/// Corrupt the train and val splits in place per the noise section. The
/// test split keeps its labels. Pre-corruption labels become the clean
/// labels when none are tracked yet.
pub fn apply_noise(ds: &mut Dataset, cfg: &NoiseConfig) -> Result<()> {
    if cfg.kind == "none" {
        return Ok(());
    }
    let ids: Vec<usize> = (0..ds.n_samples())
        .filter(|&i| ds.splits[i] != Split::Test)
        .collect();
    let labels: Vec<usize> = ids.iter().map(|&i| ds.noisy_labels[i]).collect();

    let noisy = match cfg.kind.as_str() {
        "symmetric" => inject_symmetric(&labels, cfg.rate, ds.n_classes, cfg.seed)?.0,
        "asymmetric" => {
            let mapping = match (&cfg.mapping, cfg.group_size) {
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidInput(
                        "give either an explicit mapping or a group size, not both".into(),
                    ))
                }
                (Some(text), None) => parse_mapping(text, ds.n_classes)?,
                (None, Some(g)) => AsymMapping::circular_groups(ds.n_classes, g)?,
                (None, None) => {
                    return Err(Error::InvalidInput(
                        "asymmetric noise needs a mapping or a group size".into(),
                    ))
                }
            };
            inject_asymmetric(&labels, cfg.rate, &mapping, cfg.seed)?.0
        }
        "instance" => {
            let mut features = Vec::with_capacity(ids.len() * ds.n_features);
            for &i in &ids {
                features.extend_from_slice(ds.feature_row(i));
            }
            inject_instance(
                &features,
                ds.n_features,
                &labels,
                cfg.rate,
                ds.n_classes,
                cfg.seed,
            )?
            .0
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown noise kind {other:?}; valid kinds: none, symmetric, asymmetric, instance"
            )))
        }
    };

    if ds.clean_labels.is_none() {
        ds.clean_labels = Some(ds.noisy_labels.clone());
    }
    for (&i, &label) in ids.iter().zip(&noisy) {
        ds.noisy_labels[i] = label;
    }
    Ok(())
}

/// Parse "0:1,1:0,3:2" into a flip table.
pub fn parse_mapping(text: &str, n_classes: usize) -> Result<AsymMapping> {
    let mut pairs = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (from, to) = part.split_once(':').ok_or_else(|| {
            Error::InvalidInput(format!("mapping entry {part:?} is not of the form from:to"))
        })?;
        let from: usize = from.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("bad class {from:?} in mapping entry {part:?}"))
        })?;
        let to: usize = to.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("bad class {to:?} in mapping entry {part:?}"))
        })?;
        pairs.push((from, to));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty mapping".into()));
    }
    AsymMapping::from_pairs(n_classes, &pairs)
}

/// One row of the per-epoch trajectory report.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub selected: usize,
    pub masked_loss: f64,
    pub report: Option<SelectionReport>,
}

/// Everything a training run produces.
pub struct RunOutcome {
    pub n_train: usize,
    pub final_mask: SelectionMask,
    pub per_epoch: Vec<EpochReport>,
    pub prob_log: PredictionLog,
    pub logit_log: PredictionLog,
    pub z_min: Option<Vec<f64>>,
    pub avg_margins: Option<Vec<f64>>,
    pub gmm_posterior: Option<Vec<f64>>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub final_report: Option<SelectionReport>,
    pub model: Model,
}

/// Run the full loop on the train split of `ds`: warm up, record, select,
/// and train on the evolving mask.
///
/// When `flush_dir` is given, a mid-run numeric failure still writes the
/// prediction logs accumulated so far before the error propagates.
pub fn run_training(
    ds: &Dataset,
    cfg: &Config,
    flush_dir: Option<&std::path::Path>,
) -> Result<RunOutcome> {
    let (x, labels, train_ids) = ds.split_view(Split::Train);
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidInput("train split is empty".into()));
    }
    let k = ds.n_classes;
    let params = SelectorParams::from_config(&cfg.selector)?;
    let mut opt = cfg.trainer.opt();
    let epochs = opt.epochs;
    // Selection may be scheduled past the horizon (it then never fires);
    // the trainer config itself keeps warm-up within the epoch count.
    let warmup = opt.warmup_epochs;
    opt.warmup_epochs = opt.warmup_epochs.min(epochs);
    opt.validate()?;

    let mut model = Model::new(&cfg.trainer.layer_sizes(ds.n_features, k), opt.seed)?;
    let mut sgd = Sgd::new(&model, opt)?;
    let mut engine = SelectorEngine::new(labels.clone(), k, epochs.max(1), params)?;

    let labels_u32: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let mut prob_log = PredictionLog::new(LogKind::Probabilities, labels_u32.clone(), k)?;
    let mut logit_log = PredictionLog::new(LogKind::Logits, labels_u32, k)?;

    let clean_mask: Option<Vec<bool>> = ds
        .clean_mask()
        .map(|full| train_ids.iter().map(|&i| full[i]).collect());

    let mut mask = SelectionMask::all_true(n);
    let mut per_epoch = Vec::with_capacity(epochs);
    let mut gmm_posterior = None;

    for epoch in 0..epochs {
        let stats = match sgd.train_epoch(&mut model, &x, &labels, &mask, epoch) {
            Ok(stats) => stats,
            Err(e) => {
                // Keep what was recorded so far inspectable.
                if let Some(dir) = flush_dir {
                    let _ = std::fs::create_dir_all(dir);
                    let _ = conftrack_core::datasets::write_predlog(
                        &dir.join("predictions.ctpl"),
                        &prob_log,
                    );
                    let _ = conftrack_core::datasets::write_predlog(
                        &dir.join("logits.ctlg"),
                        &logit_log,
                    );
                }
                return Err(e);
            }
        };
        let probs32 = stats.probs_f32();
        let logits32 = stats.logits_f32();
        engine.observe_epoch(epoch, &probs32, Some(&logits32))?;
        prob_log.push_epoch(epoch as u32, probs32)?;
        logit_log.push_epoch(epoch as u32, logits32)?;

        if epoch + 1 >= warmup.max(1) {
            mask = engine.select(Some(&stats.features), stats.feature_dim)?;
            gmm_posterior = engine.gmm_posterior();
        }

        let report = clean_mask
            .as_ref()
            .map(|clean| evalx::selection_metrics(&mask, clean))
            .transpose()?;
        per_epoch.push(EpochReport {
            epoch,
            selected: mask.count_selected(),
            masked_loss: stats.masked_mean_loss,
            report,
        });
    }

    let final_report = clean_mask
        .as_ref()
        .map(|clean| evalx::selection_metrics(&mask, clean))
        .transpose()?;
    let train_accuracy = evalx::accuracy(&model, ds, Split::Train).ok();
    let test_accuracy = evalx::accuracy(&model, ds, Split::Test).ok();

    Ok(RunOutcome {
        n_train: n,
        final_mask: mask,
        per_epoch,
        prob_log,
        logit_log,
        z_min: engine.z_snapshot(),
        avg_margins: engine.avg_margins(),
        gmm_posterior,
        train_accuracy,
        test_accuracy,
        final_report,
        model,
    })
}

/// Offline selection state rebuilt from prediction logs.
pub struct ReplayOutcome {
    pub mask: SelectionMask,
    pub z_min: Option<Vec<f64>>,
    pub avg_margins: Option<Vec<f64>>,
    pub gmm_posterior: Option<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Replay a probability log (and optionally a logits log and a feature
/// matrix) through the selector engine and select once at the end,
/// reproducing the mask the online run computed after its last epoch.
pub fn replay_selection(
    prob_log: &PredictionLog,
    logit_log: Option<&PredictionLog>,
    features: Option<(&[f64], usize)>,
    params: SelectorParams,
) -> Result<ReplayOutcome> {
    let (engine, labels) = replay_epochs(prob_log, logit_log, params, None)?;
    let mask = engine.select(features.map(|(f, _)| f), features.map_or(0, |(_, d)| d))?;
    Ok(ReplayOutcome {
        z_min: engine.z_snapshot(),
        avg_margins: engine.avg_margins(),
        gmm_posterior: engine.gmm_posterior(),
        mask,
        labels,
    })
}

/// Callback invoked with the engine state after each replayed epoch.
pub type EpochCallback<'a> = &'a mut dyn FnMut(usize, &SelectorEngine) -> Result<()>;

/// Replay with a per-epoch callback (for trajectory reports). Returns the
/// final engine state.
pub fn replay_epochs(
    prob_log: &PredictionLog,
    logit_log: Option<&PredictionLog>,
    params: SelectorParams,
    mut on_epoch: Option<EpochCallback<'_>>,
) -> Result<(SelectorEngine, Vec<usize>)> {
    if prob_log.kind() != LogKind::Probabilities {
        return Err(Error::InvalidInput(
            "selection replays a probability log (magic CTPL)".into(),
        ));
    }
    if let Some(ll) = logit_log {
        if ll.kind() != LogKind::Logits {
            return Err(Error::InvalidInput(
                "the secondary log must hold logits (magic CTLG)".into(),
            ));
        }
        if ll.n_samples() != prob_log.n_samples()
            || ll.n_classes() != prob_log.n_classes()
            || ll.n_epochs() != prob_log.n_epochs()
            || ll.labels() != prob_log.labels()
        {
            return Err(Error::InvalidInput(
                "probability and logit logs describe different runs".into(),
            ));
        }
    }
    if prob_log.n_epochs() == 0 {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    let labels: Vec<usize> = prob_log.labels().iter().map(|&l| l as usize).collect();
    let mut engine = SelectorEngine::new(
        labels.clone(),
        prob_log.n_classes(),
        prob_log.n_epochs(),
        params,
    )?;
    for (e, record) in prob_log.epochs().iter().enumerate() {
        let logits = logit_log.map(|ll| ll.epochs()[e].values.as_slice());
        engine.observe_epoch(e, &record.values, logits)?;
        if let Some(cb) = on_epoch.as_mut() {
            cb(e, &engine)?;
        }
    }
    Ok((engine, labels))
}
