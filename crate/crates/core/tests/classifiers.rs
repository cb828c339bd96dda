use covifex_core::ensemble::{model_read, model_write};
use covifex_core::eval::{cross_validate, stratified_kfold};
use covifex_core::synthetic::reference_dataset;
use covifex_core::{train, ClassifierKind, EnsembleConfig, FeatureMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn training_accuracy(kind: ClassifierKind, ds: &FeatureMatrix) -> f64 {
    let m = train(kind, ds, &EnsembleConfig::for_kind(kind)).unwrap();
    let pred = m.predict_matrix(ds).unwrap();
    pred.iter().zip(&ds.labels).filter(|(p, y)| p == y).count() as f64 / ds.n as f64
}

#[test]
fn every_kind_separates_the_reference_blobs() {
    let ds = reference_dataset(42);
    let plan = stratified_kfold(&ds.labels, 10, 42).unwrap();
    for kind in ClassifierKind::ALL {
        assert!(training_accuracy(kind, &ds) >= 0.95, "{kind} training accuracy");
        let cfg = EnsembleConfig::for_kind(kind).with_seed(42);
        let s = cross_validate(kind, &ds, &cfg, &plan).unwrap();
        let floor = match kind {
            ClassifierKind::Bagging | ClassifierKind::RandomForest => 0.98,
            _ => 0.95,
        };
        assert!(s.accuracy.mean >= floor, "{kind}: {}", s.accuracy.mean);
        assert_eq!(s.per_fold.len(), 10);
        let accs: Vec<f64> = s.per_fold.iter().map(|f| f.positive.accuracy).collect();
        let mean = accs.iter().sum::<f64>() / 10.0;
        let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 10.0).sqrt();
        assert!((std - s.accuracy.std).abs() <= 1e-12);
    }
}

#[test]
fn leafwise_agrees_with_levelwise() {
    let ds = reference_dataset(42);
    let depth = 4;
    let level_cfg = EnsembleConfig {
        max_depth: Some(depth),
        min_leaf: 1,
        min_child_weight: 1.0,
        ..EnsembleConfig::for_kind(ClassifierKind::GbdtLevelwise)
    };
    let leaf_cfg = EnsembleConfig {
        num_leaves: 1 << depth,
        n_bins: 255,
        ..level_cfg.clone()
    };
    let a = train(ClassifierKind::GbdtLevelwise, &ds, &level_cfg).unwrap();
    let b = train(ClassifierKind::GbdtLeafwise, &ds, &leaf_cfg).unwrap();
    let probe = reference_dataset(7);
    let agree = (0..probe.n)
        .filter(|&i| a.predict_f32(probe.row(i)).unwrap() == b.predict_f32(probe.row(i)).unwrap())
        .count();
    assert!(agree as f64 / probe.n as f64 >= 0.95, "agreement {agree}/{}", probe.n);
}

#[test]
fn strictly_increasing_transform_keeps_training_predictions() {
    let ds = reference_dataset(3);
    let mut warped = ds.clone();
    for v in &mut warped.values {
        *v = (*v as f64 / 4.0).exp() as f32;
    }
    for j in 0..ds.d {
        let distinct = |m: &FeatureMatrix| {
            let mut c: Vec<u32> = (0..m.n).map(|i| m.row(i)[j].to_bits()).collect();
            c.sort_unstable();
            c.dedup();
            c.len()
        };
        assert_eq!(distinct(&ds), distinct(&warped));
    }
    for kind in ClassifierKind::ALL {
        let cfg = EnsembleConfig {
            n_estimators: 20.min(EnsembleConfig::for_kind(kind).n_estimators),
            ..EnsembleConfig::for_kind(kind)
        };
        let a = train(kind, &ds, &cfg).unwrap().predict_matrix(&ds).unwrap();
        let b = train(kind, &warped, &cfg).unwrap().predict_matrix(&warped).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn persisted_models_predict_bit_identically() {
    let ds = reference_dataset(42);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probes: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..ds.d).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    for kind in ClassifierKind::ALL {
        let cfg = EnsembleConfig {
            n_estimators: 25.min(EnsembleConfig::for_kind(kind).n_estimators),
            ..EnsembleConfig::for_kind(kind)
        };
        let m = train(kind, &ds, &cfg).unwrap();
        let bytes = model_write(&m).unwrap();
        let again = model_write(&train(kind, &ds, &cfg).unwrap()).unwrap();
        assert_eq!(bytes, again, "{kind} retrain is not byte-identical");
        let back = model_read(&bytes).unwrap();
        for p in &probes {
            let (x, y) = (m.predict_proba(p).unwrap(), back.predict_proba(p).unwrap());
            assert_eq!(x.map(f64::to_bits), y.map(f64::to_bits), "{kind}");
        }
    }
}

#[test]
fn levelwise_loss_curve_matches_stored_regression() {
    let ds = reference_dataset(42);
    let cfg = EnsembleConfig {
        n_estimators: 50,
        ..EnsembleConfig::for_kind(ClassifierKind::GbdtLevelwise)
    };
    let m = train(ClassifierKind::GbdtLevelwise, &ds, &cfg).unwrap();
    let stored: Vec<f64> =
        serde_json::from_str(include_str!("data/levelwise_loss_curve.json")).unwrap();
    assert_eq!(stored.len(), 51);
    assert_eq!(m.loss_curve.len(), 51);
    for (i, (a, b)) in m.loss_curve.iter().zip(&stored).enumerate() {
        assert!((a - b).abs() <= 1e-9, "round {i}: {a} vs stored {b}");
    }
    assert!((stored[0] - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(stored.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn single_class_training_is_rejected() {
    let mut ds = reference_dataset(1);
    for l in &mut ds.labels {
        *l = covifex_core::Label::Positive;
    }
    for kind in ClassifierKind::ALL {
        let err = train(kind, &ds, &EnsembleConfig::for_kind(kind)).unwrap_err();
        assert!(err.to_string().contains("degenerate labels"), "{kind}: {err}");
    }
}
