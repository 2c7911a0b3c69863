//! Selection-quality metrics and classifier accuracy.

use crate::datasets::{Dataset, Split};
use crate::error::{Error, Result};
use crate::selectors::SelectionMask;
use crate::trainer::Model;

/// Precision/recall of a selection against the ground-truth clean mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub selected_count: usize,
    pub clean_count: usize,
    /// Nothing was selected; precision defaults to 1.0 in that case.
    pub empty_selection: bool,
}

pub fn selection_metrics(mask: &SelectionMask, clean_mask: &[bool]) -> Result<SelectionReport> {
    if mask.len() != clean_mask.len() {
        return Err(Error::InvalidInput(format!(
            "mask length {} differs from clean mask length {}",
            mask.len(),
            clean_mask.len()
        )));
    }
    let selected_count = mask.count_selected();
    let clean_count = clean_mask.iter().filter(|&&c| c).count();
    let true_positive = mask
        .as_slice()
        .iter()
        .zip(clean_mask)
        .filter(|(s, c)| **s && **c)
        .count();

    let empty_selection = selected_count == 0;
    let precision = if empty_selection {
        1.0
    } else {
        true_positive as f64 / selected_count as f64
    };
    // Vacuous recall when the noise left nothing clean.
    let recall = if clean_count == 0 {
        1.0
    } else {
        true_positive as f64 / clean_count as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(SelectionReport {
        precision,
        recall,
        f1,
        selected_count,
        clean_count,
        empty_selection,
    })
}

/// Index of the largest entry, earliest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of argmax predictions matching the reference labels on a split.
/// Clean labels are used when present, the noisy ones otherwise.
pub fn accuracy(model: &Model, ds: &Dataset, split: Split) -> Result<f64> {
    let ids = ds.split_indices(split);
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!(
            "split {} is empty",
            split.as_str()
        )));
    }
    let reference = ds.clean_labels.as_ref().unwrap_or(&ds.noisy_labels);
    let k = ds.n_classes;
    let mut hits = 0usize;
    for chunk in ids.chunks(512) {
        let mut x = Vec::with_capacity(chunk.len() * ds.n_features);
        for &i in chunk {
            x.extend_from_slice(ds.feature_row(i));
        }
        let pass = model.forward(&x)?;
        for (row, &i) in chunk.iter().enumerate() {
            let probs = &pass.probs[row * k..(row + 1) * k];
            if argmax(probs) == reference[i] {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / ids.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_selection() {
        let clean = vec![true, false, true, true];
        let mask = SelectionMask::from_vec(clean.clone());
        let r = selection_metrics(&mask, &clean).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.clean_count, 3);
    }

    #[test]
    fn select_everything() {
        let clean = vec![true, false, true, false];
        let mask = SelectionMask::all_true(4);
        let r = selection_metrics(&mask, &clean).unwrap();
        assert_abs_diff_eq!(r.precision, 0.5, epsilon = 1e-12);
        assert_eq!(r.recall, 1.0);
    }

    #[test]
    fn half_the_clean_set() {
        let clean = vec![true, true, true, true, false, false];
        let mask = SelectionMask::from_vec(vec![true, true, false, false, false, false]);
        let r = selection_metrics(&mask, &clean).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_abs_diff_eq!(r.recall, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.f1, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn f1_is_symmetric_in_precision_and_recall() {
        // P = 1, R = 0.5: half the clean set, nothing else.
        let clean = vec![true, true, false, false];
        let a = selection_metrics(
            &SelectionMask::from_vec(vec![true, false, false, false]),
            &clean,
        )
        .unwrap();
        // P = 0.5, R = 1: both clean samples plus two junk ones.
        let b = selection_metrics(&SelectionMask::all_true(4), &clean).unwrap();
        assert_abs_diff_eq!(a.precision, b.recall, epsilon = 1e-12);
        assert_abs_diff_eq!(a.recall, b.precision, epsilon = 1e-12);
        assert_abs_diff_eq!(a.f1, b.f1, epsilon = 1e-12);
    }

    #[test]
    fn empty_selection_is_flagged() {
        let clean = vec![true, false];
        let r = selection_metrics(&SelectionMask::all_false(2), &clean).unwrap();
        assert!(r.empty_selection);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let r = selection_metrics(&SelectionMask::all_true(3), &[true, false]);
        assert!(r.is_err());
    }

    #[test]
    fn uniform_model_accuracy_follows_the_tie_break() {
        use crate::datasets::{gen_blobs, BlobsConfig, Split};
        use crate::trainer::Model;
        let ds = gen_blobs(&BlobsConfig {
            per_class: 25,
            test_per_class: 0,
            ..BlobsConfig::default()
        })
        .unwrap();
        // All-zero parameters emit uniform rows, so argmax lands on class 0
        // for every sample and accuracy equals the share of class-0 labels.
        let model = Model::zeroed(&[ds.n_features, ds.n_classes]).unwrap();
        let acc = accuracy(&model, &ds, Split::Train).unwrap();
        assert_abs_diff_eq!(acc, 1.0 / ds.n_classes as f64, epsilon = 1e-12);
    }

    #[test]
    fn accuracy_rejects_empty_splits() {
        use crate::datasets::{gen_blobs, BlobsConfig, Split};
        use crate::trainer::Model;
        let ds = gen_blobs(&BlobsConfig {
            per_class: 10,
            val_per_class: 0,
            test_per_class: 0,
            ..BlobsConfig::default()
        })
        .unwrap();
        let model = Model::zeroed(&[ds.n_features, ds.n_classes]).unwrap();
        assert!(accuracy(&model, &ds, Split::Val).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.3, 0.4, 0.3]), 1);
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
    }
}
