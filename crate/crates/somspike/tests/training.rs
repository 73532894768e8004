use somspike::blobs::{gaussian_blobs, toy_train_config, BlobSpec};
use somspike::checkpoint::load_checkpoint;
use somspike::config::TrainConfig;
use somspike::trainer::{ablate, evaluate, train, train_with_validator, write_ablation_csv};
use somspike_core::data::{stratified_split, DatasetManifest, FeatureStore, SplitRatios, Subset, FORMAT_VERSION};
use somspike_core::linear::Linear;
use somspike_core::metrics::accuracy;
use somspike_core::network::{Head, Model, ModelConfig, Variant};

fn blobs() -> FeatureStore {
    gaussian_blobs(BlobSpec::default(), 1).unwrap()
}

fn split(store: &FeatureStore, seed: u64) -> somspike_core::data::SplitAssignment {
    stratified_split(store.labels(), store.num_classes(), SplitRatios::default(), seed).unwrap()
}

#[test]
fn toy_run_learns_and_is_deterministic() {
    let store = blobs();
    let dir = tempfile::tempdir().unwrap();
    let mut config = toy_train_config(0);
    config.checkpoint = Some(dir.path().join("best.ckpt"));
    let report = train(&config, &store, None).unwrap();
    assert!(report.test.accuracy >= 0.95, "{}", report.test.accuracy);
    assert!(report.epochs.len() <= 30);

    let again = train(&config, &store, None).unwrap();
    assert_eq!(serde_json::to_vec(&report).unwrap(), serde_json::to_vec(&again).unwrap());

    let best = report.epochs.iter().map(|e| e.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.best_val_accuracy, best);
    if report.stopped_early {
        assert!(report.epochs.len() <= report.best_epoch + 5);
    }

    // the checkpoint on disk is the best epoch's model
    let (model, meta) = load_checkpoint(config.checkpoint.as_ref().unwrap(), Some(Variant::Full)).unwrap();
    assert_eq!(meta.epoch, report.best_epoch);
    let val = evaluate(&model, &store, &split(&store, 0).indices(Subset::Val)).unwrap();
    assert_eq!(100.0 * val.accuracy, report.best_val_accuracy);
}

#[test]
fn rising_validation_saves_every_epoch() {
    let store = blobs();
    let mut config = toy_train_config(2);
    config.max_epochs = 30;
    let report = train_with_validator(&config, &store, &split(&store, 2), |epoch, _| Ok(10.0 * epoch as f64 / 4.0)).unwrap();
    assert_eq!(report.epochs.len(), 30);
    assert!(report.epochs.iter().all(|e| e.checkpoint_saved && !e.lr_reduced));
    assert!(!report.stopped_early);
    assert_eq!(report.best_epoch, 30);
}

#[test]
fn constant_validation_stops_at_six() {
    let store = blobs();
    let config = toy_train_config(3);
    let report = train_with_validator(&config, &store, &split(&store, 3), |_, _| Ok(50.0)).unwrap();
    assert_eq!(report.epochs.len(), 6);
    assert!(report.stopped_early);
    assert_eq!(report.best_epoch, 1);
    let saved: Vec<bool> = report.epochs.iter().map(|e| e.checkpoint_saved).collect();
    assert_eq!(saved, [true, false, false, false, false, false]);
    let lr: Vec<f64> = report.epochs.iter().map(|e| e.learning_rate).collect();
    let base = config.adam.learning_rate;
    assert_eq!(lr, [base, base, base, base / 2.0, base / 2.0, base / 4.0]);
}

#[test]
fn evaluate_is_pure_and_consistent() {
    let store = blobs();
    let mut config = toy_train_config(4);
    config.max_epochs = 3;
    let s = split(&store, 4);
    let report = train(&config, &store, Some(&s)).unwrap();
    assert_eq!(report.epochs.len(), 3);

    let model = Model::new(config.model, 9).unwrap();
    let snapshot = model.clone();
    let test = s.indices(Subset::Test);
    let eval = evaluate(&model, &store, &test).unwrap();
    assert_eq!(model, snapshot);
    assert!((100.0 * eval.accuracy - accuracy(&eval.confusion).unwrap()).abs() < 1e-12);
    assert!(evaluate(&model, &store, &[]).is_err());
}

fn zero_linear(d: usize, c: usize) -> Model {
    let config = ModelConfig {
        variant: Variant::NoSomLinear,
        input_dim: d,
        num_classes: c,
        ..ModelConfig::default()
    };
    let mut model = Model::new(config, 0).unwrap();
    model.head = Head::Linear {
        layer: Linear::zeros(d, c),
        cache: None,
    };
    model
}

#[test]
fn constant_prediction_and_perfect_fixture() {
    let store = blobs();
    let all: Vec<usize> = (0..store.len()).collect();
    let eval = evaluate(&zero_linear(16, 4), &store, &all).unwrap();
    assert_eq!(eval.accuracy, 0.25);

    let manifest = DatasetManifest {
        class_names: vec!["a".into(), "b".into(), "c".into()],
        class_counts: vec![2, 2, 2],
        n: 6,
        d: 3,
        format_version: FORMAT_VERSION,
    };
    let features: Vec<f32> = (0..6).flat_map(|i| (0..3).map(move |j| if j == i % 3 { 5.0 } else { 0.0 })).collect();
    let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
    let fixture = FeatureStore::new(manifest, features, labels).unwrap();
    let mut model = zero_linear(3, 3);
    if let Head::Linear { layer, .. } = &mut model.head {
        layer.weight.value = somspike_core::Matrix::identity(3);
    }
    assert_eq!(evaluate(&model, &fixture, &(0..6).collect::<Vec<_>>()).unwrap().accuracy, 1.0);
}

#[test]
fn ablation_rows() {
    let store = blobs();
    let config = toy_train_config(0);
    let rows = ablate(&config, &store, None).unwrap();
    assert_eq!(rows.len(), 4);
    let tags: std::collections::BTreeSet<_> = rows.iter().map(|r| r.variant).collect();
    assert_eq!(tags.len(), 4);
    let acc = |v| rows.iter().find(|r| r.variant == v).unwrap().test_accuracy;
    assert!(acc(Variant::Full) >= acc(Variant::NoSomLinear) - 0.02, "{rows:?}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ablation.csv");
    write_ablation_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("variant,test_accuracy"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn config_rejects_bad_values() {
    let store = blobs();
    let mut config = toy_train_config(0);
    config.max_epochs = 0;
    assert!(train(&config, &store, None).is_err());
    let mut config = toy_train_config(0);
    config.model.input_dim = 15;
    assert!(train(&config, &store, None).is_err());
    let err = serde_json::from_str::<TrainConfig>(r#"{"max_epochs": 3, "learning_rate": 0.1}"#);
    assert!(err.is_err());
}
