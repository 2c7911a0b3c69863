//! Consistency of the streaming statistics against batch recomputation.

use conftrack_core::mk;
use conftrack_core::trajectory::GapHistory;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_prob_row(rng: &mut ChaCha8Rng, k: usize) -> Vec<f32> {
    let raw: Vec<f32> = (0..k).map(|_| rng.random::<f32>() + 1e-3).collect();
    let sum: f32 = raw.iter().sum();
    raw.iter().map(|v| v / sum).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn streaming_s_equals_batch_recomputation(
        seed in any::<u64>(),
        n in 1usize..6,
        k in 2usize..5,
        epochs in 2usize..12,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut store = GapHistory::new(n, k, epochs, labels).unwrap();
        let ids: Vec<usize> = (0..n).collect();
        for e in 0..epochs {
            let probs: Vec<f32> = (0..n).flat_map(|_| random_prob_row(&mut rng, k)).collect();
            store.record_epoch(e, &probs, &ids).unwrap();
        }
        for i in 0..n {
            for c in 0..k {
                let series: Vec<f64> =
                    store.gap_series(i, c).iter().map(|&g| g as f64).collect();
                let batch = mk::mk_batch(&series).unwrap();
                prop_assert_eq!(store.s_stat(i, c), batch.s_stat);
            }
        }
    }

    #[test]
    fn gaps_stay_in_unit_interval_and_own_gap_is_zero(
        seed in any::<u64>(),
        epochs in 1usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 4;
        let labels = vec![rng.random_range(0..k)];
        let label = labels[0];
        let mut store = GapHistory::new(1, k, epochs, labels).unwrap();
        for e in 0..epochs {
            let probs = random_prob_row(&mut rng, k);
            store.record_epoch(e, &probs, &[0]).unwrap();
        }
        for c in 0..k {
            for &g in &store.gap_series(0, c) {
                prop_assert!((-1.0..=1.0).contains(&g));
            }
        }
        prop_assert!(store.gap_series(0, label).iter().all(|&g| g == 0.0));
        prop_assert_eq!(store.s_stat(0, label), 0);
    }
}

#[test]
fn partial_batches_touch_only_their_rows() {
    let mut store = GapHistory::new(4, 2, 6, vec![0, 0, 1, 1]).unwrap();
    // Samples 0 and 2 advance twice; 1 and 3 never.
    for e in 0..2 {
        store
            .record_epoch(e, &[0.5, 0.5, 0.25, 0.75], &[0, 2])
            .unwrap();
    }
    assert_eq!(store.epochs_recorded_for(0), 2);
    assert_eq!(store.epochs_recorded_for(1), 0);
    assert_eq!(store.epochs_recorded_for(2), 2);
    assert_eq!(store.epochs_recorded_for(3), 0);
    assert_eq!(store.epochs_recorded(), 2);
    assert!(store.z_min(0).is_ok());
    assert!(store.z_min(1).is_err());
}

#[test]
fn replayed_log_reaches_identical_statistics() {
    use conftrack_core::datasets::{LogKind, PredictionLog};

    let n = 5;
    let k = 3;
    let epochs = 7;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut online = GapHistory::new(n, k, epochs, labels.clone()).unwrap();
    let mut log = PredictionLog::new(
        LogKind::Probabilities,
        labels.iter().map(|&l| l as u32).collect(),
        k,
    )
    .unwrap();

    let ids: Vec<usize> = (0..n).collect();
    for e in 0..epochs {
        let probs: Vec<f32> = (0..n).flat_map(|_| random_prob_row(&mut rng, k)).collect();
        online.record_epoch(e, &probs, &ids).unwrap();
        log.push_epoch(e as u32, probs).unwrap();
    }

    let replayed = GapHistory::from_prediction_log(&log).unwrap();
    for i in 0..n {
        for c in 0..k {
            assert_eq!(replayed.s_stat(i, c), online.s_stat(i, c));
            assert_eq!(replayed.gap_series(i, c), online.gap_series(i, c));
        }
        assert_eq!(
            replayed.z_min(i).unwrap().to_bits(),
            online.z_min(i).unwrap().to_bits(),
            "z_min must be bit-identical after replay"
        );
    }
}
