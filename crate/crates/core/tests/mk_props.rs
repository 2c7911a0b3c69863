//! Property tests for the trend-test primitives.

use conftrack_core::mk::{mk_batch, mk_update, normal_quantile, z_from_state, MkState};
use proptest::prelude::*;

/// Series generator that mixes continuous values with frequent exact ties.
fn series_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![
            3 => -1.0f64..1.0,
            1 => (-4i32..4).prop_map(|v| v as f64 / 4.0),
        ],
        2..200,
    )
}

proptest! {
    #[test]
    fn folding_updates_equals_batch(series in series_strategy()) {
        let batch = mk_batch(&series).unwrap();
        let mut state = MkState::new();
        for (i, &v) in series.iter().enumerate() {
            state = mk_update(state, &series[..i], v);
        }
        prop_assert_eq!(state.s_stat(), batch.s_stat);
        prop_assert_eq!(state.n(), series.len());
        let z = z_from_state(&state).unwrap();
        prop_assert!((z - batch.z).abs() <= 1e-12);
    }

    #[test]
    fn reversed_negated_series_flips_the_sign(series in series_strategy()) {
        let forward = mk_batch(&series).unwrap();
        let mirrored: Vec<f64> = series.iter().rev().copied().collect();
        let backward = mk_batch(&mirrored).unwrap();
        prop_assert_eq!(forward.s_stat, -backward.s_stat);
    }

    #[test]
    fn monotone_series_saturate_s(n in 2usize..120, descending in any::<bool>()) {
        let series: Vec<f64> = (0..n)
            .map(|i| if descending { -(i as f64) } else { i as f64 })
            .collect();
        let expected = (n as i64) * (n as i64 - 1) / 2;
        let r = mk_batch(&series).unwrap();
        prop_assert_eq!(r.s_stat, if descending { -expected } else { expected });
    }

    #[test]
    fn quantile_is_antisymmetric(p in 1e-6f64..=0.999_999) {
        let a = normal_quantile(p).unwrap();
        let b = normal_quantile(1.0 - p).unwrap();
        prop_assert!((a + b).abs() <= 1e-9, "q({p}) + q(1-{p}) = {}", a + b);
    }

    #[test]
    fn quantile_is_monotone(p in 1e-6f64..=0.999_998, step in 1e-7f64..1e-3) {
        let hi = (p + step).min(0.999_999);
        let a = normal_quantile(p).unwrap();
        let b = normal_quantile(hi).unwrap();
        prop_assert!(b >= a);
    }
}

#[test]
fn six_epochs_clear_the_one_percent_threshold_and_five_do_not() {
    let threshold = normal_quantile(0.99).unwrap();
    let z_at = |n: usize| {
        let series: Vec<f64> = (0..n).map(|i| i as f64).collect();
        mk_batch(&series).unwrap().z
    };
    assert!(z_at(5) < threshold, "z(5) = {}", z_at(5));
    assert!(z_at(6) > threshold, "z(6) = {}", z_at(6));
    assert!((z_at(6) - 2.630142022557628).abs() < 1e-12);
    assert!((z_at(5) - 2.2045407685048604).abs() < 1e-12);
    // n = 6 is the minimum: everything above keeps passing
    for n in 7..40 {
        assert!(z_at(n) > threshold);
    }
}
