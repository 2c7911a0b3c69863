//! Sample-selection criteria and their combination.
//!
//! The trend criterion (`ct_select`) accepts a sample when the weakest
//! upward trend across its off-label confidence-gap series is still
//! significant. The four baselines score samples by loss (GMM), logit
//! margin (AUM), dynamic confidence thresholds (DIST), or eigen-alignment
//! of features (FINE). `union` combines any of them: the baselines keep
//! their precision on small-loss samples while the trend test recovers
//! correctly labeled hard-to-learn ones they reject.

use crate::error::{Error, Result};
use crate::gmm::{self, Component, EmConfig};
use crate::mk;
use crate::trajectory::GapHistory;

/// Boolean selection over the dataset (or over a batch, for DIST).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    bits: Vec<bool>,
}

impl SelectionMask {
    pub fn from_vec(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn all_true(n: usize) -> Self {
        Self {
            bits: vec![true; n],
        }
    }

    pub fn all_false(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn count_selected(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    /// True when every selected sample of `self` is also selected in `other`.
    pub fn is_subset_of(&self, other: &SelectionMask) -> bool {
        self.len() == other.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// Element-wise OR of any number of equal-length masks.
pub fn union(masks: &[&SelectionMask]) -> Result<SelectionMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidInput("union of zero masks".into()))?;
    let n = first.len();
    for m in masks {
        if m.len() != n {
            return Err(Error::InvalidInput(format!(
                "mask length {} differs from {}",
                m.len(),
                n
            )));
        }
    }
    let bits = (0..n).map(|i| masks.iter().any(|m| m.bits[i])).collect();
    Ok(SelectionMask { bits })
}

/// Trend criterion: select sample `i` when `z_min(i) > Z_{1-alpha}`.
pub fn ct_select(store: &GapHistory, alpha: f64) -> Result<SelectionMask> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    let threshold = mk::normal_quantile(1.0 - alpha)?;
    let z = store.snapshot_z()?;
    Ok(SelectionMask {
        bits: z.iter().map(|&zi| zi > threshold).collect(),
    })
}

/// Per-sample posterior of the low-mean (small-loss) mixture component,
/// fitted on min-max-normalized losses.
pub fn gmm_clean_posterior(losses: &[f64], cfg: &EmConfig) -> Result<Vec<f64>> {
    if losses.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 losses, got {}",
            losses.len()
        )));
    }
    if let Some(bad) = losses.iter().find(|l| !l.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite loss {bad}")));
    }
    let normalized = gmm::minmax_normalize(losses)?;
    let params = gmm::fit_em(&normalized, cfg)?;
    Ok(normalized
        .iter()
        .map(|&x| gmm::posterior_component(&params, x, Component::LowMean))
        .collect())
}

/// Small-loss criterion: select samples whose low-mean posterior exceeds `tau`.
pub fn gmm_select(losses: &[f64], tau: f64, cfg: &EmConfig) -> Result<SelectionMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!(
            "tau must lie strictly inside (0, 1), got {tau}"
        )));
    }
    let posterior = gmm_clean_posterior(losses, cfg)?;
    Ok(SelectionMask {
        bits: posterior.iter().map(|&p| p > tau).collect(),
    })
}

/// Accumulated logit margins: annotated-class logit minus the largest other.
#[derive(Debug, Clone)]
pub struct AumState {
    n_classes: usize,
    margin_sums: Vec<f64>,
    epoch_counts: Vec<u32>,
}

impl AumState {
    pub fn new(n_samples: usize, n_classes: usize) -> Result<Self> {
        if n_samples == 0 || n_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need samples and >= 2 classes, got N = {n_samples}, K = {n_classes}"
            )));
        }
        Ok(Self {
            n_classes,
            margin_sums: vec![0.0; n_samples],
            epoch_counts: vec![0; n_samples],
        })
    }

    pub fn n_samples(&self) -> usize {
        self.margin_sums.len()
    }

    /// Epochs accumulated so far (maximum over samples).
    pub fn epochs_counted(&self) -> usize {
        self.epoch_counts.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn avg_margin(&self, i: usize) -> f64 {
        if self.epoch_counts[i] == 0 {
            0.0
        } else {
            self.margin_sums[i] / self.epoch_counts[i] as f64
        }
    }

    pub fn avg_margins(&self) -> Vec<f64> {
        (0..self.n_samples()).map(|i| self.avg_margin(i)).collect()
    }

    /// Accumulate one epoch of logits for a batch. `epoch` must equal the
    /// number of epochs already counted for each named sample.
    pub fn update(
        &mut self,
        epoch: usize,
        logits: &[f32],
        labels: &[usize],
        sample_ids: &[usize],
    ) -> Result<()> {
        let k = self.n_classes;
        if logits.len() != sample_ids.len() * k || labels.len() != sample_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} logit cells / {} labels for {} samples x {} classes",
                logits.len(),
                labels.len(),
                sample_ids.len(),
                k
            )));
        }
        for (row, &id) in sample_ids.iter().enumerate() {
            if id >= self.n_samples() {
                return Err(Error::IndexOutOfRange {
                    index: id,
                    len: self.n_samples(),
                });
            }
            if labels[row] >= k {
                return Err(Error::InvalidInput(format!(
                    "label {} out of range for {k} classes",
                    labels[row]
                )));
            }
            if self.epoch_counts[id] as usize != epoch {
                return Err(Error::Ordering(format!(
                    "sample {id} has {} counted epochs, cannot count epoch {epoch}",
                    self.epoch_counts[id]
                )));
            }
            let r = &logits[row * k..(row + 1) * k];
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite logit for sample {id}"
                )));
            }
        }
        for (row, &id) in sample_ids.iter().enumerate() {
            let r = &logits[row * k..(row + 1) * k];
            let own = r[labels[row]] as f64;
            let best_other = r
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != labels[row])
                .map(|(_, &v)| v as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            self.margin_sums[id] += own - best_other;
            self.epoch_counts[id] += 1;
        }
        Ok(())
    }
}

/// Keep the top `1 - noise_rate - k_slack` fraction of samples by average
/// margin, ties broken by ascending sample index.
pub fn aum_select(state: &AumState, noise_rate: f64, k_slack: f64) -> Result<SelectionMask> {
    if !(0.0..1.0).contains(&noise_rate) || !k_slack.is_finite() {
        return Err(Error::InvalidInput(format!(
            "noise_rate must lie in [0, 1) (got {noise_rate}) and k_slack be finite (got {k_slack})"
        )));
    }
    let keep = 1.0 - noise_rate - k_slack;
    if keep <= 0.0 || keep > 1.0 {
        return Err(Error::InvalidInput(format!(
            "keep fraction 1 - noise_rate - k_slack = {keep} must lie in (0, 1]"
        )));
    }
    if let Some(i) = state.epoch_counts.iter().position(|&c| c == 0) {
        return Err(Error::InsufficientHistory {
            needed: 1,
            got: state.epoch_counts[i] as usize,
        });
    }
    let n = state.n_samples();
    let n_keep = ((keep * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        state
            .avg_margin(b)
            .partial_cmp(&state.avg_margin(a))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut bits = vec![false; n];
    for &i in order.iter().take(n_keep) {
        bits[i] = true;
    }
    Ok(SelectionMask { bits })
}

/// Per-sample dynamic confidence thresholds with momentum.
#[derive(Debug, Clone)]
pub struct DistState {
    n_classes: usize,
    thresholds: Vec<f64>,
    momentum: f64,
}

impl DistState {
    /// Thresholds start at `1/K`: a fresh model's confidence hovers there,
    /// so the first epochs select nearly everything.
    pub fn new(n_samples: usize, n_classes: usize, momentum: f64) -> Result<Self> {
        if n_samples == 0 || n_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need samples and >= 2 classes, got N = {n_samples}, K = {n_classes}"
            )));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidInput(format!(
                "momentum must lie in [0, 1], got {momentum}"
            )));
        }
        Ok(Self {
            n_classes,
            thresholds: vec![1.0 / n_classes as f64; n_samples],
            momentum,
        })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Select batch samples whose annotated-class confidence clears the
    /// current threshold, then fold the maximum confidence into it. The
    /// comparison uses the pre-update threshold.
    pub fn step(
        &mut self,
        probs: &[f32],
        labels: &[usize],
        sample_ids: &[usize],
    ) -> Result<SelectionMask> {
        let k = self.n_classes;
        if probs.len() != sample_ids.len() * k || labels.len() != sample_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} probability cells / {} labels for {} samples x {} classes",
                probs.len(),
                labels.len(),
                sample_ids.len(),
                k
            )));
        }
        for (row, &id) in sample_ids.iter().enumerate() {
            if id >= self.thresholds.len() {
                return Err(Error::IndexOutOfRange {
                    index: id,
                    len: self.thresholds.len(),
                });
            }
            if labels[row] >= k {
                return Err(Error::InvalidInput(format!(
                    "label {} out of range for {k} classes",
                    labels[row]
                )));
            }
            let r = &probs[row * k..(row + 1) * k];
            let mut sum = 0.0f64;
            for &p in r {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "probability {p} for sample {id} is outside the simplex"
                    )));
                }
                sum += p as f64;
            }
            if (sum - 1.0).abs() > 1e-4 {
                return Err(Error::InvalidInput(format!(
                    "probability row for sample {id} sums to {sum}, expected 1 within 1e-4"
                )));
            }
        }
        let mut bits = Vec::with_capacity(sample_ids.len());
        for (row, &id) in sample_ids.iter().enumerate() {
            let r = &probs[row * k..(row + 1) * k];
            let own = r[labels[row]] as f64;
            bits.push(own >= self.thresholds[id]);
            let max_conf = r
                .iter()
                .map(|&p| p as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            self.thresholds[id] =
                self.momentum * self.thresholds[id] + (1.0 - self.momentum) * max_conf;
        }
        Ok(SelectionMask { bits })
    }
}

/// Squared cosine similarity of each sample's feature vector with the first
/// principal eigenvector of its class's (uncentered) feature Gram matrix.
pub fn fine_scores(
    features: &[f64],
    n_features: usize,
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<f64>> {
    if n_features == 0 || n_classes < 2 {
        return Err(Error::InvalidInput(format!(
            "need D >= 1 and K >= 2, got D = {n_features}, K = {n_classes}"
        )));
    }
    let n = labels.len();
    if features.len() != n * n_features {
        return Err(Error::InvalidInput(format!(
            "{} feature cells for {n} samples x {n_features} features",
            features.len()
        )));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::InvalidInput(format!(
                "label {l} out of range for {n_classes} classes"
            )));
        }
        counts[l] += 1;
    }
    if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(Error::DegenerateClass { class, count });
    }

    let d = n_features;
    let mut eigenvectors = vec![0.0f64; n_classes * d];
    let mut gram = vec![0.0f64; d * d];
    for class in 0..n_classes {
        gram.iter_mut().for_each(|g| *g = 0.0);
        for (i, &l) in labels.iter().enumerate() {
            if l != class {
                continue;
            }
            let x = &features[i * d..(i + 1) * d];
            for a in 0..d {
                for b in 0..d {
                    gram[a * d + b] += x[a] * x[b];
                }
            }
        }
        let v = principal_eigenvector(&gram, d);
        eigenvectors[class * d..(class + 1) * d].copy_from_slice(&v);
    }

    let mut scores = Vec::with_capacity(n);
    for (i, &l) in labels.iter().enumerate() {
        let x = &features[i * d..(i + 1) * d];
        let u = &eigenvectors[l * d..(l + 1) * d];
        let dot: f64 = x.iter().zip(u).map(|(a, b)| a * b).sum();
        let xx: f64 = x.iter().map(|a| a * a).sum();
        let uu: f64 = u.iter().map(|a| a * a).sum();
        let denom = xx * uu;
        scores.push(if denom > 0.0 {
            (dot * dot) / denom
        } else {
            0.0
        });
    }
    Ok(scores)
}

/// Eigen-alignment criterion: fit a two-component mixture on the scores and
/// keep samples whose high-mean posterior exceeds `tau`.
pub fn fine_select(
    features: &[f64],
    n_features: usize,
    labels: &[usize],
    n_classes: usize,
    tau: f64,
    cfg: &EmConfig,
) -> Result<SelectionMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!(
            "tau must lie strictly inside (0, 1), got {tau}"
        )));
    }
    let scores = fine_scores(features, n_features, labels, n_classes)?;
    let params = gmm::fit_em(&scores, cfg)?;
    Ok(SelectionMask {
        bits: scores
            .iter()
            .map(|&s| gmm::posterior_component(&params, s, Component::HighMean) > tau)
            .collect(),
    })
}

/// Dominant eigenvector of a symmetric positive semidefinite matrix by
/// power iteration: up to 100 iterations, stopping when the relative
/// change drops below 1e-8.
fn principal_eigenvector(matrix: &[f64], d: usize) -> Vec<f64> {
    debug_assert_eq!(matrix.len(), d * d);
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut next = vec![0.0f64; d];
    for _ in 0..100 {
        for a in 0..d {
            next[a] = matrix[a * d..(a + 1) * d]
                .iter()
                .zip(&v)
                .map(|(m, x)| m * x)
                .sum();
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            // Start vector annihilated; restart along the heaviest axis.
            let heaviest = (0..d)
                .max_by(|&a, &b| matrix[a * d + a].partial_cmp(&matrix[b * d + b]).unwrap())
                .unwrap_or(0);
            v.iter_mut().for_each(|x| *x = 0.0);
            v[heaviest] = 1.0;
            continue;
        }
        let mut change = 0.0f64;
        for a in 0..d {
            next[a] /= norm;
            change += (next[a] - v[a]).powi(2);
        }
        std::mem::swap(&mut v, &mut next);
        if change.sqrt() < 1e-8 {
            break;
        }
    }
    v
}
