//! Small feed-forward classifier with explicit backpropagation.
//!
//! Minibatch SGD with momentum and weight decay, a selection-masked
//! cross-entropy loss, per-sample statistics captured on the fly during
//! the training pass, and a gradient-alignment probe for inspecting whose
//! labels the batch gradient is pushing toward.
//!
//! Everything is `f64` and single-threaded: identical seed, config and
//! data reproduce bitwise-identical parameter trajectories.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::selectors::SelectionMask;

/// ReLU hidden layers, softmax output. Weights are row-major
/// `[out][in]` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Batch outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `[batch][class]`
    pub logits: Vec<f64>,
    /// `[batch][class]`, rows sum to 1
    pub probs: Vec<f64>,
    /// `[batch][feature]`, activations entering the output layer
    pub features: Vec<f64>,
}

struct ForwardCache {
    /// Activations per layer boundary: `acts[0]` is the input batch,
    /// `acts[l]` the post-ReLU output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    batch: usize,
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidInput(
            "a model needs at least input and output sizes".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidInput("layer sizes must be positive".into()));
    }
    if sizes[sizes.len() - 1] < 2 {
        return Err(Error::InvalidInput("need at least 2 output classes".into()));
    }
    Ok(())
}

impl Model {
    /// He-style initialization: weights `N(0, 2/fan_in)`, biases zero.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// All-zero parameters (uniform output); mostly useful in tests.
    pub fn zeroed(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let weights = (0..layer_sizes.len() - 1)
            .map(|l| vec![0.0; layer_sizes[l] * layer_sizes[l + 1]])
            .collect();
        let biases = (0..layer_sizes.len() - 1)
            .map(|l| vec![0.0; layer_sizes[l + 1]])
            .collect();
        Ok(Self {
            sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Assemble from explicit parameters.
    pub fn from_parts(
        layer_sizes: &[usize],
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::InvalidInput(format!(
                "expected {layers} weight and bias tensors"
            )));
        }
        for l in 0..layers {
            if weights[l].len() != layer_sizes[l] * layer_sizes[l + 1]
                || biases[l].len() != layer_sizes[l + 1]
            {
                return Err(Error::InvalidInput(format!(
                    "layer {l} parameter shapes do not match sizes {:?}",
                    layer_sizes
                )));
            }
        }
        Ok(Self {
            sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    /// Width of the activations entering the output layer (the input
    /// dimension for a model without hidden layers).
    pub fn feature_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 2]
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flat parameter indexing (weights then biases, per layer, in order).
    fn param_slot(&mut self, index: usize) -> &mut f64 {
        let mut idx = index;
        for l in 0..self.n_layers() {
            if idx < self.weights[l].len() {
                return &mut self.weights[l][idx];
            }
            idx -= self.weights[l].len();
            if idx < self.biases[l].len() {
                return &mut self.biases[l][idx];
            }
            idx -= self.biases[l].len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn get_param(&self, index: usize) -> f64 {
        let mut idx = index;
        for l in 0..self.n_layers() {
            if idx < self.weights[l].len() {
                return self.weights[l][idx];
            }
            idx -= self.weights[l].len();
            if idx < self.biases[l].len() {
                return self.biases[l][idx];
            }
            idx -= self.biases[l].len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *self.param_slot(index) = value;
    }

    fn forward_cache(&self, x: &[f64]) -> Result<ForwardCache> {
        let d = self.input_dim();
        if x.is_empty() || !x.len().is_multiple_of(d) {
            return Err(Error::InvalidInput(format!(
                "{} input cells do not form rows of width {d}",
                x.len()
            )));
        }
        let batch = x.len() / d;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.n_layers());
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &acts[l];
            let mut out = vec![0.0f64; batch * n_out];
            for b in 0..batch {
                let row = &input[b * n_in..(b + 1) * n_in];
                let dst = &mut out[b * n_out..(b + 1) * n_out];
                for (o, slot) in dst.iter_mut().enumerate() {
                    let w = &self.weights[l][o * n_in..(o + 1) * n_in];
                    let mut acc = self.biases[l][o];
                    for (wi, xi) in w.iter().zip(row) {
                        acc += wi * xi;
                    }
                    *slot = acc;
                }
            }
            if l + 1 < self.n_layers() {
                for v in out.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                acts.push(out);
            } else {
                let k = n_out;
                let mut probs = vec![0.0f64; batch * k];
                for b in 0..batch {
                    let logit_row = &out[b * k..(b + 1) * k];
                    let max = logit_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let dst = &mut probs[b * k..(b + 1) * k];
                    let mut sum = 0.0;
                    for (p, &z) in dst.iter_mut().zip(logit_row) {
                        *p = (z - max).exp();
                        sum += *p;
                    }
                    for p in dst.iter_mut() {
                        *p /= sum;
                    }
                }
                return Ok(ForwardCache {
                    acts,
                    logits: out,
                    probs,
                    batch,
                });
            }
        }
        unreachable!("a validated model has at least one layer");
    }

    /// Forward a batch: logits, softmax probabilities, and the penultimate
    /// activations.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass> {
        let cache = self.forward_cache(x)?;
        let features = cache.acts[cache.acts.len() - 1].clone();
        Ok(ForwardPass {
            logits: cache.logits,
            probs: cache.probs,
            features,
        })
    }

    /// Cross-entropy of a single sample.
    pub fn single_loss(&self, x_row: &[f64], label: usize) -> Result<f64> {
        let k = self.output_dim();
        if label >= k {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let cache = self.forward_cache(x_row)?;
        Ok(-cache.probs[label].ln())
    }

    /// Backpropagate `dlogits` (`[batch][class]`) through the cached pass.
    /// Returns weight and bias gradients shaped like the parameters.
    fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let layers = self.n_layers();
        let batch = cache.batch;
        let mut grad_w: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut grad_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();

        let mut dz = dlogits.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &cache.acts[l];
            for b in 0..batch {
                let dz_row = &dz[b * n_out..(b + 1) * n_out];
                let in_row = &input[b * n_in..(b + 1) * n_in];
                for (o, &g) in dz_row.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    grad_b[l][o] += g;
                    let w_row = &mut grad_w[l][o * n_in..(o + 1) * n_in];
                    for (slot, &xi) in w_row.iter_mut().zip(in_row) {
                        *slot += g * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut dz_prev = vec![0.0f64; batch * n_in];
            for b in 0..batch {
                let dz_row = &dz[b * n_out..(b + 1) * n_out];
                let act_row = &input[b * n_in..(b + 1) * n_in];
                let dst = &mut dz_prev[b * n_in..(b + 1) * n_in];
                for (o, &g) in dz_row.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let w_row = &self.weights[l][o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        dst[i] += g * w_row[i];
                    }
                }
                // ReLU: gradient flows only through active units.
                for i in 0..n_in {
                    if act_row[i] <= 0.0 {
                        dst[i] = 0.0;
                    }
                }
            }
            dz = dz_prev;
        }
        (grad_w, grad_b)
    }
}

/// Optimizer and loop configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    /// `(start_epoch, rate)` steps; the first entry must start at epoch 0.
    pub lr_schedule: Vec<(usize, f64)>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Divide the masked batch loss by the selected count instead of the
    /// full batch size.
    pub renormalize_mask: bool,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            lr_schedule: vec![(0, 0.02), (40, 0.002)],
            momentum: 0.9,
            weight_decay: 1e-3,
            batch_size: 64,
            epochs: 50,
            warmup_epochs: 30,
            seed: 1,
            renormalize_mask: false,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_schedule.is_empty() || self.lr_schedule[0].0 != 0 {
            return Err(Error::InvalidInput(
                "learning-rate schedule must start at epoch 0".into(),
            ));
        }
        for window in self.lr_schedule.windows(2) {
            if window[1].0 <= window[0].0 {
                return Err(Error::InvalidInput(
                    "learning-rate schedule epochs must increase".into(),
                ));
            }
        }
        if self
            .lr_schedule
            .iter()
            .any(|&(_, r)| !(r.is_finite() && r > 0.0))
        {
            return Err(Error::InvalidInput(
                "learning rates must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::InvalidInput(format!(
                "warmup ({}) exceeds total epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }

    /// Rate in force at `epoch`.
    pub fn rate_at(&self, epoch: usize) -> f64 {
        let mut rate = self.lr_schedule[0].1;
        for &(start, r) in &self.lr_schedule {
            if start <= epoch {
                rate = r;
            }
        }
        rate
    }
}

/// Per-sample records of one training epoch, gathered on the fly from the
/// training pass itself (before each batch's update).
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub n_classes: usize,
    pub feature_dim: usize,
    /// Unreduced cross-entropy, every sample (masked ones included).
    pub losses: Vec<f64>,
    /// `[sample][class]`
    pub probs: Vec<f64>,
    /// `[sample][class]`
    pub logits: Vec<f64>,
    /// `[sample][feature]`
    pub features: Vec<f64>,
    /// Mean of the masked per-batch losses.
    pub masked_mean_loss: f64,
}

impl EpochStats {
    pub fn probs_f32(&self) -> Vec<f32> {
        self.probs.iter().map(|&p| p as f32).collect()
    }

    pub fn logits_f32(&self) -> Vec<f32> {
        self.logits.iter().map(|&z| z as f32).collect()
    }
}

/// SGD with momentum; owns the velocity buffers across epochs.
#[derive(Debug, Clone)]
pub struct Sgd {
    cfg: OptConfig,
    vel_w: Vec<Vec<f64>>,
    vel_b: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(model: &Model, cfg: OptConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            vel_w: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            vel_b: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            cfg,
        })
    }

    pub fn config(&self) -> &OptConfig {
        &self.cfg
    }

    /// One pass over the data in shuffled minibatches.
    ///
    /// The batch loss is `(1/|b|) * sum over selected samples of their CE`;
    /// masked samples stay in the denominator but contribute nothing to the
    /// numerator or the gradient (`renormalize_mask` switches the
    /// denominator to the selected count). Statistics are recorded for
    /// every sample from its forward pass.
    pub fn train_epoch(
        &mut self,
        model: &mut Model,
        x: &[f64],
        labels: &[usize],
        mask: &SelectionMask,
        epoch: usize,
    ) -> Result<EpochStats> {
        let d = model.input_dim();
        let k = model.output_dim();
        let n = labels.len();
        if x.len() != n * d {
            return Err(Error::InvalidInput(format!(
                "{} feature cells for {n} samples x {d} features",
                x.len()
            )));
        }
        if mask.len() != n {
            return Err(Error::InvalidInput(format!(
                "mask length {} differs from {n} samples",
                mask.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {k} classes"
            )));
        }

        let d_feat = model.feature_dim();
        let mut stats = EpochStats {
            n_classes: k,
            feature_dim: d_feat,
            losses: vec![0.0; n],
            probs: vec![0.0; n * k],
            logits: vec![0.0; n * k],
            features: vec![0.0; n * d_feat],
            masked_mean_loss: 0.0,
        };

        // Per-epoch permutation derived from (seed, epoch).
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg
                .seed
                .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        perm.shuffle(&mut rng);

        let lr = self.cfg.rate_at(epoch);
        let mut batch_x = Vec::with_capacity(self.cfg.batch_size * d);
        let mut n_batches = 0usize;

        for (batch_idx, chunk) in perm.chunks(self.cfg.batch_size).enumerate() {
            batch_x.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&x[i * d..(i + 1) * d]);
            }
            let cache = model.forward_cache(&batch_x)?;
            let b = chunk.len();

            let selected: Vec<bool> = chunk.iter().map(|&i| mask.is_selected(i)).collect();
            let n_selected = selected.iter().filter(|&&s| s).count();
            let denom = if self.cfg.renormalize_mask {
                n_selected.max(1) as f64
            } else {
                b as f64
            };

            let mut batch_loss = 0.0f64;
            let mut dlogits = vec![0.0f64; b * k];
            for (row, &i) in chunk.iter().enumerate() {
                let probs_row = &cache.probs[row * k..(row + 1) * k];
                let loss = -probs_row[labels[i]].ln();
                stats.losses[i] = loss;
                stats.probs[i * k..(i + 1) * k].copy_from_slice(probs_row);
                stats.logits[i * k..(i + 1) * k]
                    .copy_from_slice(&cache.logits[row * k..(row + 1) * k]);
                let feat_row = &cache.acts[cache.acts.len() - 1][row * d_feat..(row + 1) * d_feat];
                stats.features[i * d_feat..(i + 1) * d_feat].copy_from_slice(feat_row);

                if selected[row] {
                    batch_loss += loss;
                    let dst = &mut dlogits[row * k..(row + 1) * k];
                    for (c, slot) in dst.iter_mut().enumerate() {
                        let y = if c == labels[i] { 1.0 } else { 0.0 };
                        *slot = (probs_row[c] - y) / denom;
                    }
                }
            }
            batch_loss /= denom;
            if batch_loss.is_nan() {
                return Err(Error::NumericFailure(format!(
                    "NaN batch loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            stats.masked_mean_loss += batch_loss;
            n_batches += 1;

            let (grad_w, grad_b) = model.backward(&cache, &dlogits);
            for l in 0..model.n_layers() {
                for (j, g) in grad_w[l].iter().enumerate() {
                    let g = g + self.cfg.weight_decay * model.weights[l][j];
                    let v = self.cfg.momentum * self.vel_w[l][j] + g;
                    self.vel_w[l][j] = v;
                    model.weights[l][j] -= lr * v;
                }
                for (j, g) in grad_b[l].iter().enumerate() {
                    let g = g + self.cfg.weight_decay * model.biases[l][j];
                    let v = self.cfg.momentum * self.vel_b[l][j] + g;
                    self.vel_b[l][j] = v;
                    model.biases[l][j] -= lr * v;
                }
            }
        }
        stats.masked_mean_loss /= n_batches.max(1) as f64;
        Ok(stats)
    }
}

/// Alignment between per-class probe gradients and a batch gradient.
///
/// For each class `c`, returns the mean over probe samples of the inner
/// product between the sample's cross-entropy gradient toward class `c`
/// and the (masked, mean-reduced) batch gradient. Positive alignment means
/// the batch step pushes the probe sample's confidence toward `c`.
pub fn grad_alignment_probe(
    model: &Model,
    probe_x: &[f64],
    batch_x: &[f64],
    batch_labels: &[usize],
    batch_mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let d = model.input_dim();
    let k = model.output_dim();
    if probe_x.is_empty() || !probe_x.len().is_multiple_of(d) {
        return Err(Error::InvalidInput(format!(
            "{} probe cells do not form rows of width {d}",
            probe_x.len()
        )));
    }
    if batch_x.len() != batch_labels.len() * d {
        return Err(Error::InvalidInput(format!(
            "{} batch cells for {} labels x {d} features",
            batch_x.len(),
            batch_labels.len()
        )));
    }
    let b = batch_labels.len();
    if let Some(m) = batch_mask {
        if m.len() != b {
            return Err(Error::InvalidInput(format!(
                "batch mask length {} differs from {b}",
                m.len()
            )));
        }
    }

    // Masked mean-CE batch gradient, as taken by a training step
    // (without weight decay: this probes the loss surface itself).
    let cache = model.forward_cache(batch_x)?;
    let mut dlogits = vec![0.0f64; b * k];
    for row in 0..b {
        if batch_mask.is_some_and(|m| !m[row]) {
            continue;
        }
        let probs_row = &cache.probs[row * k..(row + 1) * k];
        let dst = &mut dlogits[row * k..(row + 1) * k];
        for (c, slot) in dst.iter_mut().enumerate() {
            let y = if c == batch_labels[row] { 1.0 } else { 0.0 };
            *slot = (probs_row[c] - y) / b as f64;
        }
    }
    let (batch_gw, batch_gb) = model.backward(&cache, &dlogits);

    let n_probe = probe_x.len() / d;
    let mut alignment = vec![0.0f64; k];
    for j in 0..n_probe {
        let row = &probe_x[j * d..(j + 1) * d];
        let probe_cache = model.forward_cache(row)?;
        for (c, slot) in alignment.iter_mut().enumerate() {
            let mut dl = probe_cache.probs.clone();
            dl[c] -= 1.0;
            let (gw, gb) = model.backward(&probe_cache, &dl);
            let mut dot = 0.0f64;
            for l in 0..gw.len() {
                dot += gw[l]
                    .iter()
                    .zip(&batch_gw[l])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
                dot += gb[l]
                    .iter()
                    .zip(&batch_gb[l])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            *slot += dot;
        }
    }
    for slot in alignment.iter_mut() {
        *slot /= n_probe as f64;
    }
    Ok(alignment)
}

/// Compare the backpropagated gradient of a single-sample loss against
/// central finite differences on a random set of parameters. Returns the
/// largest relative error observed.
pub fn gradient_check(model: &Model, x_row: &[f64], label: usize, seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-4;
    const PROBES: usize = 24;

    let cache = model.forward_cache(x_row)?;
    if cache.batch != 1 {
        return Err(Error::InvalidInput(
            "gradient check takes a single sample".into(),
        ));
    }
    let k = model.output_dim();
    if label >= k {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {k} classes"
        )));
    }
    let mut dlogits = cache.probs.clone();
    dlogits[label] -= 1.0;
    let (gw, gb) = model.backward(&cache, &dlogits);
    let flat_grad: Vec<f64> = gw
        .iter()
        .zip(&gb)
        .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
        .collect();

    let total = model.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..total).collect();
    indices.shuffle(&mut rng);
    indices.truncate(PROBES.min(total));

    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for &idx in &indices {
        let original = probe.get_param(idx);
        probe.set_param(idx, original + STEP);
        let plus = probe.single_loss(x_row, label)?;
        probe.set_param(idx, original - STEP);
        let minus = probe.single_loss(x_row, label)?;
        probe.set_param(idx, original);
        let fd = (plus - minus) / (2.0 * STEP);
        let bp = flat_grad[idx];
        let rel = (fd - bp).abs() / fd.abs().max(bp.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    #[test]
    fn zero_model_outputs_uniform_rows() {
        let model = Model::zeroed(&[3, 4]).unwrap();
        let pass = model.forward(&random_rows(5, 3, 1)).unwrap();
        for &p in &pass.probs {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_weights_put_argmax_on_the_hot_coordinate() {
        let eye = vec![
            1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0,
        ];
        let model = Model::from_parts(&[3, 3], vec![eye], vec![vec![0.0; 3]]).unwrap();
        for hot in 0..3 {
            let mut x = vec![0.0; 3];
            x[hot] = 1.0;
            let pass = model.forward(&x).unwrap();
            assert_eq!(crate::evalx::argmax(&pass.probs), hot);
        }
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let model = Model::new(&[6, 16, 4], 3).unwrap();
        let pass = model.forward(&random_rows(10, 6, 2)).unwrap();
        for row in pass.probs.chunks(4) {
            let sum: f64 = row.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn forward_rejects_bad_widths() {
        let model = Model::new(&[4, 3], 1).unwrap();
        assert!(model.forward(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn backprop_matches_finite_differences_on_random_models() {
        for seed in 0..4u64 {
            let model = Model::new(&[5, 12, 8, 3], seed).unwrap();
            let x = random_rows(1, 5, seed + 100);
            let err = gradient_check(&model, &x, (seed % 3) as usize, seed + 7).unwrap();
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn linear_model_matches_the_closed_form_gradient() {
        // Gradient of softmax-CE for one linear layer: dW = (p - y) x^T,
        // db = p - y.
        let model = Model::new(&[4, 3], 9).unwrap();
        let x = random_rows(1, 4, 42);
        let label = 2usize;
        let cache = model.forward_cache(&x).unwrap();
        let mut dlogits = cache.probs.clone();
        dlogits[label] -= 1.0;
        let (gw, gb) = model.backward(&cache, &dlogits);
        for o in 0..3 {
            let delta = cache.probs[o] - if o == label { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(gb[0][o], delta, epsilon = 1e-12);
            for i in 0..4 {
                assert_abs_diff_eq!(gw[0][o * 4 + i], delta * x[i], epsilon = 1e-12);
            }
        }
        let err = gradient_check(&model, &x, label, 5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn zero_input_leaves_only_bias_gradients() {
        let model = Model::new(&[4, 3], 11).unwrap();
        let x = vec![0.0; 4];
        let cache = model.forward_cache(&x).unwrap();
        let mut dlogits = cache.probs.clone();
        dlogits[0] -= 1.0;
        let (gw, gb) = model.backward(&cache, &dlogits);
        assert!(gw[0].iter().all(|&g| g == 0.0));
        for (o, &grad) in gb[0].iter().enumerate() {
            let delta = cache.probs[o] - if o == 0 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(grad, delta, epsilon = 1e-12);
        }
    }

    fn small_setup(n: usize, seed: u64) -> (Model, Vec<f64>, Vec<usize>) {
        let model = Model::new(&[4, 8, 3], seed).unwrap();
        let x = random_rows(n, 4, seed + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        (model, x, labels)
    }

    #[test]
    fn all_false_mask_reduces_to_decay_and_momentum() {
        let (mut model, x, labels) = small_setup(12, 3);
        let cfg = OptConfig {
            lr_schedule: vec![(0, 0.1)],
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 4,
            epochs: 1,
            warmup_epochs: 0,
            seed: 5,
            renormalize_mask: false,
        };
        let before = model.clone();
        let mut sgd = Sgd::new(&model, cfg).unwrap();
        sgd.train_epoch(&mut model, &x, &labels, &SelectionMask::all_false(12), 0)
            .unwrap();
        // No CE contribution and no decay: bitwise unchanged.
        assert_eq!(model, before);
    }

    #[test]
    fn all_false_mask_with_decay_shrinks_parameters_only() {
        let (mut model, x, labels) = small_setup(12, 4);
        let cfg = OptConfig {
            lr_schedule: vec![(0, 0.1)],
            momentum: 0.0,
            weight_decay: 0.01,
            batch_size: 12,
            epochs: 1,
            warmup_epochs: 0,
            seed: 5,
            renormalize_mask: false,
        };
        let before = model.clone();
        let mut sgd = Sgd::new(&model, cfg).unwrap();
        sgd.train_epoch(&mut model, &x, &labels, &SelectionMask::all_false(12), 0)
            .unwrap();
        for l in 0..2 {
            for (after, orig) in model.weights[l].iter().zip(&before.weights[l]) {
                assert_abs_diff_eq!(*after, orig * (1.0 - 0.1 * 0.01), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_sample_step_decreases_its_loss() {
        let (mut model, x, labels) = small_setup(1, 6);
        let before = model.single_loss(&x, labels[0]).unwrap();
        let cfg = OptConfig {
            lr_schedule: vec![(0, 0.01)],
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 1,
            epochs: 1,
            warmup_epochs: 0,
            seed: 7,
            renormalize_mask: false,
        };
        let mut sgd = Sgd::new(&model, cfg).unwrap();
        sgd.train_epoch(&mut model, &x, &labels, &SelectionMask::all_true(1), 0)
            .unwrap();
        let after = model.single_loss(&x, labels[0]).unwrap();
        assert!(after < before, "loss went {before} -> {after}");
    }

    #[test]
    fn full_batch_step_matches_an_independent_linear_oracle() {
        // Linear model, momentum 0, decay 0, one full batch: the update is
        // theta - lr * mean((p - y) x^T), with p recomputed here from the
        // definitions rather than through the training path.
        let n = 16;
        let mut model = Model::new(&[4, 3], 21).unwrap();
        let x = random_rows(n, 4, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();

        let w0 = model.weights[0].clone();
        let b0 = model.biases[0].clone();
        let mut gw = [0.0f64; 12];
        let mut gb = [0.0f64; 3];
        for i in 0..n {
            let row = &x[i * 4..(i + 1) * 4];
            let mut logits = [0.0f64; 3];
            for o in 0..3 {
                logits[o] = b0[o] + (0..4).map(|j| w0[o * 4 + j] * row[j]).sum::<f64>();
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for o in 0..3 {
                let p = exps[o] / sum;
                let delta = (p - if o == labels[i] { 1.0 } else { 0.0 }) / n as f64;
                gb[o] += delta;
                for j in 0..4 {
                    gw[o * 4 + j] += delta * row[j];
                }
            }
        }

        let lr = 0.05;
        let cfg = OptConfig {
            lr_schedule: vec![(0, lr)],
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: n,
            epochs: 1,
            warmup_epochs: 0,
            seed: 99,
            renormalize_mask: false,
        };
        let mut sgd = Sgd::new(&model, cfg).unwrap();
        sgd.train_epoch(&mut model, &x, &labels, &SelectionMask::all_true(n), 0)
            .unwrap();
        for j in 0..12 {
            assert_abs_diff_eq!(model.weights[0][j], w0[j] - lr * gw[j], epsilon = 1e-9);
        }
        for o in 0..3 {
            assert_abs_diff_eq!(model.biases[0][o], b0[o] - lr * gb[o], epsilon = 1e-9);
        }
    }

    #[test]
    fn masked_batch_equals_subset_scaled_by_selected_fraction() {
        // One batch, momentum and decay off: training with a mask equals
        // training on the kept subset with the rate scaled by kept/|b|.
        let n = 10;
        let (model, x, labels) = small_setup(n, 31);
        let mask_bits: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let kept: Vec<usize> = (0..n).filter(|i| mask_bits[*i]).collect();

        let lr = 0.08;
        let base_cfg = OptConfig {
            lr_schedule: vec![(0, lr)],
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: n,
            epochs: 1,
            warmup_epochs: 0,
            seed: 13,
            renormalize_mask: false,
        };

        let mut masked_model = model.clone();
        let mut sgd = Sgd::new(&masked_model, base_cfg.clone()).unwrap();
        sgd.train_epoch(
            &mut masked_model,
            &x,
            &labels,
            &SelectionMask::from_vec(mask_bits.clone()),
            0,
        )
        .unwrap();

        let mut subset_x = Vec::new();
        let mut subset_labels = Vec::new();
        for &i in &kept {
            subset_x.extend_from_slice(&x[i * 4..(i + 1) * 4]);
            subset_labels.push(labels[i]);
        }
        let scaled_cfg = OptConfig {
            lr_schedule: vec![(0, lr * kept.len() as f64 / n as f64)],
            batch_size: kept.len(),
            ..base_cfg
        };
        let mut subset_model = model.clone();
        let mut sgd = Sgd::new(&subset_model, scaled_cfg).unwrap();
        sgd.train_epoch(
            &mut subset_model,
            &subset_x,
            &subset_labels,
            &SelectionMask::all_true(kept.len()),
            0,
        )
        .unwrap();

        for l in 0..2 {
            for (a, b) in masked_model.weights[l].iter().zip(&subset_model.weights[l]) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
            for (a, b) in masked_model.biases[l].iter().zip(&subset_model.biases[l]) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn renormalized_mask_divides_by_the_selected_count() {
        // With renormalization, a masked batch equals training on the kept
        // subset at the same rate (no |b_selected|/|b| scaling).
        let n = 10;
        let (model, x, labels) = small_setup(n, 35);
        let mask_bits: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let kept: Vec<usize> = (0..n).filter(|i| mask_bits[*i]).collect();

        let cfg = OptConfig {
            lr_schedule: vec![(0, 0.08)],
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: n,
            epochs: 1,
            warmup_epochs: 0,
            seed: 13,
            renormalize_mask: true,
        };
        let mut masked_model = model.clone();
        let mut sgd = Sgd::new(&masked_model, cfg.clone()).unwrap();
        sgd.train_epoch(
            &mut masked_model,
            &x,
            &labels,
            &SelectionMask::from_vec(mask_bits),
            0,
        )
        .unwrap();

        let mut subset_x = Vec::new();
        let mut subset_labels = Vec::new();
        for &i in &kept {
            subset_x.extend_from_slice(&x[i * 4..(i + 1) * 4]);
            subset_labels.push(labels[i]);
        }
        let mut subset_model = model.clone();
        let mut sgd = Sgd::new(
            &subset_model,
            OptConfig {
                batch_size: kept.len(),
                renormalize_mask: false,
                ..cfg
            },
        )
        .unwrap();
        sgd.train_epoch(
            &mut subset_model,
            &subset_x,
            &subset_labels,
            &SelectionMask::all_true(kept.len()),
            0,
        )
        .unwrap();

        for l in 0..2 {
            for (a, b) in masked_model.weights[l].iter().zip(&subset_model.weights[l]) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let run = || {
            let (mut model, x, labels) = small_setup(30, 51);
            let mut sgd = Sgd::new(
                &model,
                OptConfig {
                    lr_schedule: vec![(0, 0.05)],
                    epochs: 3,
                    warmup_epochs: 0,
                    batch_size: 8,
                    ..OptConfig::default()
                },
            )
            .unwrap();
            for e in 0..3 {
                sgd.train_epoch(&mut model, &x, &labels, &SelectionMask::all_true(30), e)
                    .unwrap();
            }
            model
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn epoch_stats_are_consistent_with_their_probabilities() {
        let (mut model, x, labels) = small_setup(25, 61);
        let mut sgd = Sgd::new(
            &model,
            OptConfig {
                lr_schedule: vec![(0, 0.05)],
                epochs: 1,
                warmup_epochs: 0,
                batch_size: 7,
                ..OptConfig::default()
            },
        )
        .unwrap();
        let stats = sgd
            .train_epoch(&mut model, &x, &labels, &SelectionMask::all_true(25), 0)
            .unwrap();
        for (i, &label) in labels.iter().enumerate() {
            let p = stats.probs[i * 3 + label];
            assert_abs_diff_eq!(stats.losses[i], -p.ln(), epsilon = 1e-6);
            let row_sum: f64 = stats.probs[i * 3..(i + 1) * 3].iter().sum();
            assert_abs_diff_eq!(row_sum, 1.0, epsilon = 1e-6);
        }
        assert_eq!(stats.features.len(), 25 * 8);
    }

    #[test]
    fn probe_self_alignment_is_the_squared_gradient_norm() {
        let model = Model::new(&[4, 6, 3], 71).unwrap();
        let x = random_rows(1, 4, 72);
        let target = 1usize;
        let alignment = grad_alignment_probe(&model, &x, &x, &[target], None).unwrap();

        let cache = model.forward_cache(&x).unwrap();
        let mut dlogits = cache.probs.clone();
        dlogits[target] -= 1.0;
        let (gw, gb) = model.backward(&cache, &dlogits);
        let norm_sq: f64 = gw
            .iter()
            .flatten()
            .chain(gb.iter().flatten())
            .map(|g| g * g)
            .sum();
        assert!(norm_sq > 0.0);
        assert_abs_diff_eq!(alignment[target], norm_sq, epsilon = 1e-10);
    }

    #[test]
    fn probe_against_a_zero_batch_gradient_is_exactly_zero() {
        let model = Model::new(&[4, 6, 3], 81).unwrap();
        let probe = random_rows(2, 4, 82);
        let batch = random_rows(5, 4, 83);
        let alignment =
            grad_alignment_probe(&model, &probe, &batch, &[0, 1, 2, 0, 1], Some(&[false; 5]))
                .unwrap();
        assert_eq!(alignment, vec![0.0; 3]);
    }

    #[test]
    fn rate_schedule_steps() {
        let cfg = OptConfig {
            lr_schedule: vec![(0, 0.02), (30, 0.002)],
            ..OptConfig::default()
        };
        assert_eq!(cfg.rate_at(0), 0.02);
        assert_eq!(cfg.rate_at(29), 0.02);
        assert_eq!(cfg.rate_at(30), 0.002);
        assert_eq!(cfg.rate_at(100), 0.002);
    }

    #[test]
    fn config_validation_catches_bad_schedules() {
        let bad = OptConfig {
            lr_schedule: vec![(5, 0.1)],
            ..OptConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptConfig {
            lr_schedule: vec![(0, 0.1), (0, 0.2)],
            ..OptConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptConfig {
            warmup_epochs: 100,
            epochs: 50,
            ..OptConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
