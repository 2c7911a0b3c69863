//! Label-noise injectors: symmetric, asymmetric, and instance-dependent.
//!
//! Every injector returns the corrupted labels together with the exact
//! clean mask (`true` where the label survived), and is deterministic
//! under its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Class-to-class flip table for asymmetric noise. Unmapped classes are
/// never corrupted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsymMapping {
    targets: Vec<Option<usize>>,
}

impl AsymMapping {
    /// Explicit pairs `(from, to)`; every target must differ from its source.
    pub fn from_pairs(n_classes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut targets = vec![None; n_classes];
        for &(from, to) in pairs {
            if from >= n_classes || to >= n_classes {
                return Err(Error::InvalidInput(format!(
                    "mapping {from} -> {to} out of range for {n_classes} classes"
                )));
            }
            if from == to {
                return Err(Error::InvalidInput(format!(
                    "mapping {from} -> {to} maps a class to itself"
                )));
            }
            if targets[from].is_some() {
                return Err(Error::InvalidInput(format!(
                    "class {from} mapped more than once"
                )));
            }
            targets[from] = Some(to);
        }
        Ok(Self { targets })
    }

    /// Next-class-within-group, circular: classes are partitioned into
    /// consecutive groups of `group_size` and each maps to its successor
    /// modulo the group.
    pub fn circular_groups(n_classes: usize, group_size: usize) -> Result<Self> {
        if group_size < 2 {
            return Err(Error::InvalidInput(format!(
                "group size must be at least 2, got {group_size}"
            )));
        }
        if !n_classes.is_multiple_of(group_size) {
            return Err(Error::InvalidInput(format!(
                "{n_classes} classes do not divide into groups of {group_size}"
            )));
        }
        let targets = (0..n_classes)
            .map(|c| {
                let start = c / group_size * group_size;
                Some(start + (c - start + 1) % group_size)
            })
            .collect();
        Ok(Self { targets })
    }

    pub fn n_classes(&self) -> usize {
        self.targets.len()
    }

    pub fn target(&self, class: usize) -> Option<usize> {
        self.targets.get(class).copied().flatten()
    }
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    if n_classes < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    Ok(())
}

fn clean_mask(clean: &[usize], noisy: &[usize]) -> Vec<bool> {
    clean.iter().zip(noisy).map(|(c, n)| c == n).collect()
}

/// Flip each label with probability `rate` to a uniformly random different
/// class. `rate` must stay below `(K-1)/K` so correct labels dominate every
/// wrong class.
pub fn inject_symmetric(
    labels: &[usize],
    rate: f64,
    n_classes: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<bool>)> {
    check_labels(labels, n_classes)?;
    let limit = (n_classes as f64 - 1.0) / n_classes as f64;
    if !(0.0..limit).contains(&rate) {
        return Err(Error::InvalidInput(format!(
            "symmetric rate must lie in [0, {limit:.4}), got {rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = labels.to_vec();
    for slot in noisy.iter_mut() {
        if rng.random::<f64>() < rate {
            let mut target = rng.random_range(0..n_classes - 1);
            if target >= *slot {
                target += 1;
            }
            *slot = target;
        }
    }
    let mask = clean_mask(labels, &noisy);
    Ok((noisy, mask))
}

/// Flip each mapped class to its target with probability `rate`.
pub fn inject_asymmetric(
    labels: &[usize],
    rate: f64,
    mapping: &AsymMapping,
    seed: u64,
) -> Result<(Vec<usize>, Vec<bool>)> {
    check_labels(labels, mapping.n_classes())?;
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidInput(format!(
            "asymmetric rate must lie in [0, 1], got {rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = labels.to_vec();
    for slot in noisy.iter_mut() {
        if let Some(target) = mapping.target(*slot) {
            if rng.random::<f64>() < rate {
                *slot = target;
            }
        }
    }
    let mask = clean_mask(labels, &noisy);
    Ok((noisy, mask))
}

/// Feature-dependent noise. A fixed random projection scores every class
/// per sample; the flip probability is proportional to the sample's
/// off-label softmax mass, globally rescaled (by bisection) so the
/// expected flip rate equals `rate`, and the flip target is drawn from the
/// off-label softmax. Identical features therefore get identical flip
/// distributions.
pub fn inject_instance(
    features: &[f64],
    n_features: usize,
    labels: &[usize],
    rate: f64,
    n_classes: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<bool>)> {
    check_labels(labels, n_classes)?;
    if !(0.0..0.5).contains(&rate) {
        return Err(Error::InvalidInput(format!(
            "instance rate must lie in [0, 0.5), got {rate}"
        )));
    }
    let n = labels.len();
    if n_features == 0 || features.len() != n * n_features {
        return Err(Error::InvalidInput(format!(
            "{} feature cells for {n} samples x {n_features} features",
            features.len()
        )));
    }
    if rate == 0.0 || n == 0 {
        return Ok((labels.to_vec(), vec![true; n]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection: Vec<f64> = (0..n_features * n_classes)
        .map(|_| rng.sample(StandardNormal))
        .collect();

    // Per sample: softmax over class scores, and the off-label mass that
    // scales its flip probability.
    let mut softmax = vec![0.0f64; n * n_classes];
    let mut off_mass = vec![0.0f64; n];
    for i in 0..n {
        let x = &features[i * n_features..(i + 1) * n_features];
        let row = &mut softmax[i * n_classes..(i + 1) * n_classes];
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = (0..n_features)
                .map(|j| x[j] * projection[j * n_classes + c])
                .sum();
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for slot in row.iter_mut() {
            *slot = (*slot - max).exp();
            sum += *slot;
        }
        for slot in row.iter_mut() {
            *slot /= sum;
        }
        off_mass[i] = 1.0 - row[labels[i]];
    }

    // Calibrate the global scale so mean(min(1, s * off_mass)) = rate.
    let mean_flip =
        |s: f64| -> f64 { off_mass.iter().map(|&m| (s * m).min(1.0)).sum::<f64>() / n as f64 };
    let mut hi = 1.0f64;
    let mut grow = 0;
    while mean_flip(hi) < rate && grow < 64 {
        hi *= 2.0;
        grow += 1;
    }
    let mut lo = 0.0f64;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_flip(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = 0.5 * (lo + hi);

    let mut noisy = labels.to_vec();
    for i in 0..n {
        let flip_p = (scale * off_mass[i]).min(1.0);
        if rng.random::<f64>() < flip_p {
            // Draw the target from the off-label softmax.
            let row = &softmax[i * n_classes..(i + 1) * n_classes];
            let own = labels[i];
            let mass: f64 = off_mass[i].max(f64::MIN_POSITIVE);
            let mut u = rng.random::<f64>() * mass;
            let mut chosen = usize::MAX;
            for (c, &p) in row.iter().enumerate() {
                if c == own {
                    continue;
                }
                u -= p;
                if u <= 0.0 {
                    chosen = c;
                    break;
                }
            }
            if chosen == usize::MAX {
                // Rounding left a sliver of mass: take the last off-label class.
                chosen = (0..n_classes).rev().find(|&c| c != own).unwrap();
            }
            noisy[i] = chosen;
        }
    }
    let mask = clean_mask(labels, &noisy);
    Ok((noisy, mask))
}
