//! The easy blob population must be learnable by the crate's own trainer.

use conftrack_core::datasets::{gen_blobs, BlobsConfig, Split};
use conftrack_core::evalx::accuracy;
use conftrack_core::selectors::SelectionMask;
use conftrack_core::trainer::{Model, OptConfig, Sgd};

#[test]
fn linear_model_separates_easy_blobs() {
    let cfg = BlobsConfig {
        n_classes: 4,
        n_features: 8,
        per_class: 150,
        val_per_class: 0,
        test_per_class: 0,
        center_spread: 3.0,
        sigma: 0.5, // spread / sigma = 6
        hard_fraction: 0.0,
        hard_sigma_mult: 1.0,
        seed: 5,
    };
    let ds = gen_blobs(&cfg).unwrap();
    let (x, y, _) = ds.split_view(Split::Train);

    let mut model = Model::new(&[8, 4], 1).unwrap();
    let opt = OptConfig {
        lr_schedule: vec![(0, 0.1)],
        momentum: 0.9,
        weight_decay: 0.0,
        batch_size: 32,
        epochs: 30,
        warmup_epochs: 0,
        seed: 2,
        renormalize_mask: false,
    };
    let mut sgd = Sgd::new(&model, opt).unwrap();
    let mask = SelectionMask::all_true(y.len());
    for e in 0..30 {
        sgd.train_epoch(&mut model, &x, &y, &mask, e).unwrap();
    }
    let acc = accuracy(&model, &ds, Split::Train).unwrap();
    assert!(acc >= 0.99, "train accuracy {acc} below 0.99");
}
