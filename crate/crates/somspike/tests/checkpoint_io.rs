use somspike::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, CheckpointMeta};
use somspike::IoError;
use somspike_core::gradcheck::toy_model_config;
use somspike_core::network::{Model, ModelConfig, Variant};
use somspike_core::objective::{smoothed_ce, AdamConfig, AdamState};
use somspike_core::{Matrix, Mode};

fn trained(variant: Variant) -> (Model, Matrix) {
    let mut model = Model::new(toy_model_config(variant), 11).unwrap();
    let x = Matrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.4 - 0.8);
    let labels = [0, 1, 2, 0, 1, 2];
    let mut adam = AdamState::new(AdamConfig::default());
    for step in 0..3 {
        model.zero_grad();
        let logits = model.forward(&x, Mode::Train, step).unwrap();
        let (_, delta) = smoothed_ce(&logits, &labels, 0.1).unwrap();
        model.backward(&delta).unwrap();
        adam.step(model.named_params_mut().into_iter().map(|(_, p)| p)).unwrap();
    }
    (model, x)
}

#[test]
fn round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    for variant in Variant::ALL {
        let (model, x) = trained(variant);
        let path = dir.path().join(format!("{variant}.ckpt"));
        save_checkpoint(&model, &CheckpointMeta::new(&model, 3, 87.5), &path).unwrap();
        let (back, meta) = load_checkpoint(&path, Some(variant)).unwrap();
        assert_eq!(meta.epoch, 3);
        assert_eq!(meta.best_val_accuracy, 87.5);
        let before = model.predict(&x).unwrap();
        let after = back.predict(&x).unwrap();
        assert_eq!(before.max_abs_diff(&after), 0.0);
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&before), bits(&after));
        assert_eq!(back.named_buffers(), model.named_buffers());
        assert!(!path.with_extension("ckpt.tmp").exists());
    }
}

#[test]
fn corrupted_magic() {
    let (model, _) = trained(Variant::Full);
    let mut bytes = encode(&model, &CheckpointMeta::new(&model, 1, 50.0));
    bytes[0] = b'X';
    let err = decode(&bytes, None).unwrap_err();
    assert!(err.to_string().contains("version mismatch"), "{err}");
    let mut bytes = encode(&model, &CheckpointMeta::new(&model, 1, 50.0));
    bytes[8] = 9;
    assert!(matches!(decode(&bytes, None).unwrap_err(), IoError::VersionMismatch(_)));
}

#[test]
fn wrong_variant() {
    let (model, _) = trained(Variant::SomLinear);
    let bytes = encode(&model, &CheckpointMeta::new(&model, 1, 50.0));
    let err = decode(&bytes, Some(Variant::Full)).unwrap_err();
    assert!(err.to_string().contains("variant mismatch"), "{err}");
    assert!(decode(&bytes, Some(Variant::SomLinear)).is_ok());
}

#[test]
fn truncated_file() {
    let (model, _) = trained(Variant::Full);
    let bytes = encode(&model, &CheckpointMeta::new(&model, 1, 50.0));
    for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
        let err = decode(&bytes[..cut], None).unwrap_err();
        assert!(
            matches!(err, IoError::Truncated(_) | IoError::VersionMismatch(_)),
            "cut {cut}: {err}"
        );
    }
    assert!(matches!(decode(&bytes[..bytes.len() - 3], None).unwrap_err(), IoError::Truncated(_)));
}

#[test]
fn shape_mismatch() {
    let (model, _) = trained(Variant::Full);
    let mut meta = CheckpointMeta::new(&model, 1, 50.0);
    meta.model = ModelConfig {
        prototypes: 5,
        ..meta.model
    };
    let err = decode(&encode(&model, &meta), None).unwrap_err();
    assert!(matches!(err, IoError::ShapeMismatch { .. }), "{err}");
}
