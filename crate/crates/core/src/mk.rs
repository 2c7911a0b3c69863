//! Mann-Kendall trend test, batch and streaming.
//!
//! The statistic `S` counts sign agreements between later and earlier points
//! of a series. Its null variance is `n(n-1)(2n+5)/18` (no tie correction;
//! ties contribute zero to `S` but still count toward `n`), and the
//! standardized statistic `Z` applies a continuity correction of one unit
//! toward zero. `S` is an integer, so a batch pass and a streamed fold over
//! the same series must agree exactly.

use crate::error::{Error, Result};

/// Streaming accumulator: the statistic so far and the series length.
///
/// Values are immutable once produced; updates return a fresh state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MkState {
    s_stat: i64,
    n: usize,
}

impl MkState {
    /// Empty series: no observations, `S = 0`.
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a state from raw parts, rejecting impossible combinations
    /// (`|S|` can never exceed the number of pairs).
    pub fn from_parts(s_stat: i64, n: usize) -> Result<Self> {
        let max_pairs = (n as i64) * (n as i64 - 1) / 2;
        if s_stat.abs() > max_pairs.max(0) {
            return Err(Error::InvalidInput(format!(
                "|S| = {} exceeds the {} pairs of a length-{} series",
                s_stat.abs(),
                max_pairs.max(0),
                n
            )));
        }
        Ok(Self { s_stat, n })
    }

    pub fn s_stat(&self) -> i64 {
        self.s_stat
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Outcome of a test over a full series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MkResult {
    pub s_stat: i64,
    pub variance: f64,
    pub z: f64,
}

/// Null variance of `S` for a length-`n` series, without tie correction.
pub fn variance_of_s(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) * (2.0 * n + 5.0) / 18.0
}

fn standardized(s_stat: i64, n: usize) -> MkResult {
    let variance = variance_of_s(n);
    let z = match s_stat.cmp(&0) {
        std::cmp::Ordering::Greater => (s_stat as f64 - 1.0) / variance.sqrt(),
        std::cmp::Ordering::Equal => 0.0,
        std::cmp::Ordering::Less => (s_stat as f64 + 1.0) / variance.sqrt(),
    };
    MkResult {
        s_stat,
        variance,
        z,
    }
}

/// Test a full series: `S`, its null variance, and the standardized `Z`.
pub fn mk_batch(series: &[f64]) -> Result<MkResult> {
    let n = series.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let mut s = 0i64;
    for j in 1..n {
        for k in 0..j {
            if series[j] > series[k] {
                s += 1;
            } else if series[j] < series[k] {
                s -= 1;
            }
        }
    }
    Ok(standardized(s, n))
}

/// Contribution of one new observation to `S`: the number of earlier points
/// it exceeds minus the number it falls below. Ties (exact float equality)
/// contribute zero.
pub fn update_delta(history: impl IntoIterator<Item = f64>, new_value: f64) -> i64 {
    let mut delta = 0i64;
    for h in history {
        if new_value > h {
            delta += 1;
        } else if new_value < h {
            delta -= 1;
        }
    }
    delta
}

/// Fold one observation into the streaming state. `history` must hold the
/// `state.n()` observations seen so far, in order; the result matches
/// [`mk_batch`] over the extended series exactly.
pub fn mk_update(state: MkState, history: &[f64], new_value: f64) -> MkState {
    assert_eq!(
        history.len(),
        state.n,
        "history length must equal the observation count in the state"
    );
    MkState {
        s_stat: state.s_stat + update_delta(history.iter().copied(), new_value),
        n: state.n + 1,
    }
}

/// Standardized `Z` for an accumulated state.
pub fn z_from_state(state: &MkState) -> Result<f64> {
    if state.n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 observations, got {}",
            state.n
        )));
    }
    Ok(standardized(state.s_stat, state.n).z)
}

/// Inverse standard-normal CDF.
///
/// Rational approximation in the Acklam/Wichura family, evaluated on the
/// lower half and mirrored so that `quantile(p) = -quantile(1-p)` holds to
/// float rounding. Absolute error is below 1e-8 over `[1e-6, 1-1e-6]`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(Error::InvalidInput(format!(
            "probability must lie strictly inside (0, 1), got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        Ok(-lower_half_quantile(1.0 - p))
    } else {
        Ok(lower_half_quantile(p))
    }
}

/// Quantile for `0 < p <= 0.5`.
fn lower_half_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}
