//! Two-component one-dimensional Gaussian mixture fitted by EM.
//!
//! Backs the small-loss and eigen-alignment selectors: both split a scalar
//! score population into a low-mean and a high-mean cluster and read off
//! per-sample posteriors.

use crate::error::{Error, Result};

/// EM stopping and regularization knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Relative change in mean log-likelihood below which EM stops.
    pub tol: f64,
    /// Variance floor applied after every M step.
    pub reg_covar: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 10,
            tol: 1e-2,
            reg_covar: 1e-6,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tol must be a positive real, got {}",
                self.tol
            )));
        }
        if !(self.reg_covar.is_finite() && self.reg_covar > 0.0) {
            return Err(Error::InvalidInput(format!(
                "reg_covar must be a positive real, got {}",
                self.reg_covar
            )));
        }
        Ok(())
    }
}

/// Fitted mixture, components ordered by ascending mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
}

/// Which component a posterior query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    LowMean,
    HighMean,
}

/// Scale data to `[0, 1]` by the observed range.
pub fn minmax_normalize(data: &[f64]) -> Result<Vec<f64>> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in data {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite value {x}")));
        }
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if data.is_empty() || hi <= lo {
        return Err(Error::DegenerateInput(format!(
            "cannot normalize a range of zero width (min = max = {lo})"
        )));
    }
    let span = hi - lo;
    Ok(data.iter().map(|&x| (x - lo) / span).collect())
}

fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    (-(d * d) / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// R-7 linear-interpolation quantile of an ascending-sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean log-likelihood of the data under the mixture.
fn mean_log_likelihood(data: &[f64], p: &GmmParams) -> f64 {
    let mut total = 0.0;
    for &x in data {
        let density = p.weights[0] * normal_pdf(x, p.means[0], p.variances[0])
            + p.weights[1] * normal_pdf(x, p.means[1], p.variances[1]);
        total += density.max(f64::MIN_POSITIVE).ln();
    }
    total / data.len() as f64
}

/// Fit by EM. Initialization is deterministic: means at the 10th and 90th
/// percentiles, equal weights, both variances at the sample variance
/// (floored at `reg_covar`). Equal percentiles (a heavy point mass) fall
/// back to min/max so the components can separate at all. Stops after
/// `max_iter` iterations or when the relative improvement of the mean
/// log-likelihood drops below `tol`.
pub fn fit_em(data: &[f64], cfg: &EmConfig) -> Result<GmmParams> {
    cfg.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 data points, got {n}"
        )));
    }
    if let Some(x) = data.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value {x}")));
    }

    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean_all = data.iter().sum::<f64>() / n as f64;
    let var_all = data.iter().map(|x| (x - mean_all).powi(2)).sum::<f64>() / n as f64;
    let init_var = var_all.max(cfg.reg_covar);

    let mut init_means = [percentile(&sorted, 0.10), percentile(&sorted, 0.90)];
    if init_means[0] == init_means[1] {
        init_means = [sorted[0], sorted[n - 1]];
    }
    let mut params = GmmParams {
        means: init_means,
        variances: [init_var, init_var],
        weights: [0.5, 0.5],
    };

    let mut resp = vec![0.0f64; n]; // responsibility of component 0
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..cfg.max_iter {
        // E step
        for (i, &x) in data.iter().enumerate() {
            let d0 = params.weights[0] * normal_pdf(x, params.means[0], params.variances[0]);
            let d1 = params.weights[1] * normal_pdf(x, params.means[1], params.variances[1]);
            let total = d0 + d1;
            resp[i] = if total > 0.0 && total.is_finite() {
                d0 / total
            } else {
                // Both densities underflowed: assign to the nearer mean.
                match (x - params.means[0])
                    .abs()
                    .partial_cmp(&(x - params.means[1]).abs())
                {
                    Some(std::cmp::Ordering::Less) => 1.0,
                    Some(std::cmp::Ordering::Greater) => 0.0,
                    _ => 0.5,
                }
            };
        }

        // M step
        let sum0: f64 = resp.iter().sum();
        let sum1 = n as f64 - sum0;
        for (k, sum_k) in [(0usize, sum0), (1usize, sum1)] {
            if sum_k <= f64::MIN_POSITIVE {
                // Empty component: keep its parameters, zero its weight.
                params.weights[k] = 0.0;
                params.weights[1 - k] = 1.0;
                continue;
            }
            let r = |i: usize| if k == 0 { resp[i] } else { 1.0 - resp[i] };
            let mean = data.iter().enumerate().map(|(i, &x)| r(i) * x).sum::<f64>() / sum_k;
            let var = data
                .iter()
                .enumerate()
                .map(|(i, &x)| r(i) * (x - mean).powi(2))
                .sum::<f64>()
                / sum_k;
            params.means[k] = mean;
            params.variances[k] = var.max(cfg.reg_covar);
            params.weights[k] = sum_k / n as f64;
        }

        let ll = mean_log_likelihood(data, &params);
        if prev_ll.is_finite() && (ll - prev_ll).abs() / prev_ll.abs().max(1e-12) < cfg.tol {
            break;
        }
        prev_ll = ll;
    }

    if params.means[0] > params.means[1] {
        params.means.swap(0, 1);
        params.variances.swap(0, 1);
        params.weights.swap(0, 1);
    }
    Ok(params)
}

/// Bayes responsibility of the requested component at `x`. The two
/// responsibilities sum to 1 for every `x`.
pub fn posterior_component(params: &GmmParams, x: f64, which: Component) -> f64 {
    let d_low = params.weights[0] * normal_pdf(x, params.means[0], params.variances[0]);
    let d_high = params.weights[1] * normal_pdf(x, params.means[1], params.variances[1]);
    let total = d_low + d_high;
    let low = if total > 0.0 && total.is_finite() {
        d_low / total
    } else {
        match (x - params.means[0])
            .abs()
            .partial_cmp(&(x - params.means[1]).abs())
        {
            Some(std::cmp::Ordering::Less) => 1.0,
            Some(std::cmp::Ordering::Greater) => 0.0,
            _ => 0.5,
        }
    };
    match which {
        Component::LowMean => low,
        Component::HighMean => 1.0 - low,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn two_cluster_draws(seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let low = Normal::new(0.1, 0.05).unwrap();
        let high = Normal::new(0.9, 0.05).unwrap();
        let mut data = Vec::with_capacity(1000);
        let mut is_low = Vec::with_capacity(1000);
        for _ in 0..500 {
            data.push(low.sample(&mut rng));
            is_low.push(true);
        }
        for _ in 0..500 {
            data.push(high.sample(&mut rng));
            is_low.push(false);
        }
        (data, is_low)
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(
            minmax_normalize(&[2.0, 4.0, 6.0]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(
            minmax_normalize(&[0.0, 0.25, 1.0]).unwrap(),
            vec![0.0, 0.25, 1.0]
        );
        assert_eq!(minmax_normalize(&[-1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn minmax_rejects_constant_data() {
        assert!(matches!(
            minmax_normalize(&[3.0, 3.0, 3.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(minmax_normalize(&[]).is_err());
    }

    #[test]
    fn em_recovers_separated_clusters() {
        let (data, _) = two_cluster_draws(7);
        let params = fit_em(&data, &EmConfig::default()).unwrap();
        assert_abs_diff_eq!(params.means[0], 0.1, epsilon = 0.02);
        assert_abs_diff_eq!(params.means[1], 0.9, epsilon = 0.02);
        assert_abs_diff_eq!(params.weights[0], 0.5, epsilon = 0.05);
    }

    #[test]
    fn em_collapses_gracefully_on_point_mass() {
        let data = vec![0.4; 50];
        let cfg = EmConfig::default();
        let params = fit_em(&data, &cfg).unwrap();
        assert_eq!(params.variances[0], cfg.reg_covar);
        assert_eq!(params.variances[1], cfg.reg_covar);
        assert_abs_diff_eq!(params.means[0], params.means[1], epsilon = 1e-12);
    }

    #[test]
    fn em_rejects_tiny_input() {
        assert!(fit_em(&[0.3], &EmConfig::default()).is_err());
        assert!(fit_em(&[], &EmConfig::default()).is_err());
    }

    #[test]
    fn posterior_splits_the_separated_fit() {
        let (data, _) = two_cluster_draws(11);
        let params = fit_em(&data, &EmConfig::default()).unwrap();
        assert!(posterior_component(&params, params.means[0], Component::LowMean) > 0.99);
        assert!(posterior_component(&params, params.means[1], Component::LowMean) < 0.01);
    }

    #[test]
    fn posterior_is_half_at_the_symmetric_midpoint() {
        let params = GmmParams {
            means: [0.2, 0.8],
            variances: [0.01, 0.01],
            weights: [0.5, 0.5],
        };
        assert_abs_diff_eq!(
            posterior_component(&params, 0.5, Component::LowMean),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn responsibilities_sum_to_one() {
        let (data, _) = two_cluster_draws(3);
        let params = fit_em(&data, &EmConfig::default()).unwrap();
        for x in [-5.0, 0.0, 0.1, 0.5, 0.9, 5.0, 100.0] {
            let low = posterior_component(&params, x, Component::LowMean);
            let high = posterior_component(&params, x, Component::HighMean);
            assert_abs_diff_eq!(low + high, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_likelihood_is_non_decreasing_across_iterations() {
        let (data, _) = two_cluster_draws(5);
        let mut prev = f64::NEG_INFINITY;
        for iters in 1..=10 {
            let cfg = EmConfig {
                max_iter: iters,
                tol: 1e-300, // never stop early
                reg_covar: 1e-6,
            };
            let params = fit_em(&data, &cfg).unwrap();
            let ll = mean_log_likelihood(&data, &params);
            assert!(
                ll >= prev - 1e-9,
                "log-likelihood dropped: {prev} -> {ll} at iteration {iters}"
            );
            prev = ll;
        }
    }

    #[test]
    fn components_are_ordered_by_mean() {
        let (mut data, _) = two_cluster_draws(13);
        data.reverse();
        let params = fit_em(&data, &EmConfig::default()).unwrap();
        assert!(params.means[0] <= params.means[1]);
    }

    #[test]
    fn symmetric_data_gives_balanced_weights() {
        let (data, _) = two_cluster_draws(17);
        let params = fit_em(&data, &EmConfig::default()).unwrap();
        assert_abs_diff_eq!(params.weights[0], 0.5, epsilon = 0.05);
        assert_abs_diff_eq!(params.weights[1], 0.5, epsilon = 0.05);
    }
}
