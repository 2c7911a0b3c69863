//! Per-sample confidence-gap trajectories with streaming trend statistics.
//!
//! Each epoch, every sample contributes the gaps between its annotated-class
//! probability and every class probability. The store keeps the full gap
//! history (new gaps are compared against all previous epochs) and folds the
//! Mann-Kendall `S` statistic per (sample, class) incrementally, so trend
//! queries never rescan the series.
//!
//! Gaps are held as `f32`: prediction logs store 32-bit probabilities, and
//! recording through the same width guarantees a store rebuilt from a log
//! reaches bit-identical statistics.

use crate::datasets::{LogKind, PredictionLog};
use crate::error::{Error, Result};
use crate::mk;

pub struct GapHistory {
    n_samples: usize,
    n_classes: usize,
    capacity_epochs: usize,
    labels: Vec<usize>,
    /// `[sample][epoch][class]`, row-major.
    gaps: Vec<f32>,
    /// `[sample][class]`, row-major.
    s_stats: Vec<i64>,
    /// Epochs recorded so far, per sample.
    recorded: Vec<u32>,
}

impl GapHistory {
    pub fn new(
        n_samples: usize,
        n_classes: usize,
        capacity_epochs: usize,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if n_samples == 0 || n_classes < 2 || capacity_epochs == 0 {
            return Err(Error::InvalidInput(format!(
                "store needs samples, >= 2 classes and nonzero capacity \
                 (got N = {n_samples}, K = {n_classes}, T = {capacity_epochs})"
            )));
        }
        if labels.len() != n_samples {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} samples",
                labels.len(),
                n_samples
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            n_samples,
            n_classes,
            capacity_epochs,
            labels,
            gaps: vec![0.0; n_samples * capacity_epochs * n_classes],
            s_stats: vec![0; n_samples * n_classes],
            recorded: vec![0; n_samples],
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn capacity_epochs(&self) -> usize {
        self.capacity_epochs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Most epochs recorded for any sample.
    pub fn epochs_recorded(&self) -> usize {
        self.recorded.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn epochs_recorded_for(&self, sample: usize) -> usize {
        self.recorded[sample] as usize
    }

    #[inline]
    fn gap_index(&self, sample: usize, epoch: usize, class: usize) -> usize {
        (sample * self.capacity_epochs + epoch) * self.n_classes + class
    }

    pub fn s_stat(&self, sample: usize, class: usize) -> i64 {
        self.s_stats[sample * self.n_classes + class]
    }

    /// The recorded gap series of one (sample, class) pair, oldest first.
    pub fn gap_series(&self, sample: usize, class: usize) -> Vec<f32> {
        let t = self.recorded[sample] as usize;
        (0..t)
            .map(|e| self.gaps[self.gap_index(sample, e, class)])
            .collect()
    }

    /// Record one epoch of probabilities for a batch of samples.
    ///
    /// `probs` is row-major `[batch][class]`; each row must be a probability
    /// vector (entries >= 0, sum within 1e-4 of 1). `epoch` must equal the
    /// number of epochs already recorded for every named sample. The call
    /// validates everything up front and mutates nothing on error.
    pub fn record_epoch(
        &mut self,
        epoch: usize,
        probs: &[f32],
        sample_ids: &[usize],
    ) -> Result<()> {
        let k = self.n_classes;
        if probs.len() != sample_ids.len() * k {
            return Err(Error::InvalidInput(format!(
                "{} probability cells for {} samples x {} classes",
                probs.len(),
                sample_ids.len(),
                k
            )));
        }
        if epoch >= self.capacity_epochs {
            return Err(Error::InvalidInput(format!(
                "epoch {epoch} exceeds the fixed capacity of {} epochs",
                self.capacity_epochs
            )));
        }

        let mut seen = vec![false; self.n_samples];
        for (row, &id) in sample_ids.iter().enumerate() {
            if id >= self.n_samples {
                return Err(Error::IndexOutOfRange {
                    index: id,
                    len: self.n_samples,
                });
            }
            if seen[id] {
                return Err(Error::Ordering(format!(
                    "sample {id} appears twice in one record_epoch call"
                )));
            }
            seen[id] = true;
            let have = self.recorded[id] as usize;
            if have != epoch {
                return Err(Error::Ordering(format!(
                    "sample {id} has {have} recorded epochs, cannot record epoch {epoch}"
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

        for (row, &id) in sample_ids.iter().enumerate() {
            let r = &probs[row * k..(row + 1) * k];
            let p_label = r[self.labels[id]];
            let t = self.recorded[id] as usize;
            for (c, &p_c) in r.iter().enumerate() {
                let gap = p_label - p_c;
                let base = self.gap_index(id, 0, c);
                let stride = k;
                let history = (0..t).map(|e| self.gaps[base + e * stride] as f64);
                self.s_stats[id * k + c] += mk::update_delta(history, gap as f64);
                let slot = self.gap_index(id, t, c);
                self.gaps[slot] = gap;
            }
            self.recorded[id] += 1;
        }
        Ok(())
    }

    /// Minimum standardized trend statistic over all off-label gap series.
    /// The annotated class is excluded: its series is identically zero.
    pub fn z_min(&self, sample: usize) -> Result<f64> {
        if sample >= self.n_samples {
            return Err(Error::IndexOutOfRange {
                index: sample,
                len: self.n_samples,
            });
        }
        let t = self.recorded[sample] as usize;
        if t < 2 {
            return Err(Error::InsufficientHistory { needed: 2, got: t });
        }
        let label = self.labels[sample];
        let mut z_min = f64::INFINITY;
        for c in 0..self.n_classes {
            if c == label {
                continue;
            }
            let state = mk::MkState::from_parts(self.s_stat(sample, c), t)?;
            z_min = z_min.min(mk::z_from_state(&state)?);
        }
        Ok(z_min)
    }

    /// `z_min` for every sample.
    pub fn snapshot_z(&self) -> Result<Vec<f64>> {
        (0..self.n_samples).map(|i| self.z_min(i)).collect()
    }

    /// Rebuild a store by replaying a probability log epoch by epoch.
    /// The result matches the store that recorded those epochs online.
    pub fn from_prediction_log(log: &PredictionLog) -> Result<Self> {
        if log.kind() != LogKind::Probabilities {
            return Err(Error::InvalidInput(
                "gap trajectories need a probability log, not a logit log".into(),
            ));
        }
        let labels: Vec<usize> = log.labels().iter().map(|&l| l as usize).collect();
        let mut store = Self::new(
            log.n_samples(),
            log.n_classes(),
            log.n_epochs().max(1),
            labels,
        )?;
        let ids: Vec<usize> = (0..log.n_samples()).collect();
        for (e, record) in log.epochs().iter().enumerate() {
            store.record_epoch(e, &record.values, &ids)?;
        }
        Ok(store)
    }
}
