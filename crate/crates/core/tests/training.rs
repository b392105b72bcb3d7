use irx_core::checkpoint::{self, Header};
use irx_core::geodata::{
    extract_patches, normalize_apply, normalize_fit, stratified_split, synth_scene, PatchSet, SynthConfig,
};
use irx_core::train::{train, train_with, TrainConfig};
use irx_core::zoo::{build_irx1d, Model};
use irx_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Normalised training patches from a seeded synthetic scene.
fn training_set(classes: usize, bands: usize, size: usize, difficulty: f64, patch: usize) -> PatchSet {
    let (cube, gt) = synth_scene(&SynthConfig::new(classes, bands, size, size, 3, difficulty)).unwrap();
    let split = stratified_split(&gt, 0.1, 7).unwrap();
    let train_px = split.train_pixels();
    let cube = normalize_apply(&cube, &normalize_fit(&cube, &train_px).unwrap()).unwrap();
    extract_patches(&cube, &gt, &train_px, patch).unwrap()
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 5,
        ..Default::default()
    }
}

fn accuracy(model: &Model<f32>, data: &PatchSet) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, labels) = data.batch::<f32>(&idx).unwrap();
    let pred = model.predict(&x).unwrap();
    pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

#[test]
fn separable_scene_is_fit_exactly() {
    let data = training_set(4, 8, 40, 0.0, 3);
    let mut model = build_irx1d::<f32>(8, 4, 3, 1).unwrap();
    let history = train(&mut model, &data, &config(20)).unwrap();
    assert_eq!(history.epochs.len(), 20);
    assert_eq!(history.last().unwrap().accuracy, 1.0, "{}", history.to_csv());
    // inference uses the slow-moving running statistics
    assert!(accuracy(&model, &data) > 0.95);
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let data = training_set(3, 4, 20, 1.0, 3);
    let mut model = build_irx1d::<f32>(4, 3, 3, 2).unwrap();
    let before = checkpoint::encode(&model, &Header::default());
    let history = train(&mut model, &data, &config(0)).unwrap();
    assert!(history.epochs.is_empty());
    assert_eq!(checkpoint::encode(&model, &Header::default()), before);
}

#[test]
fn initial_loss_is_near_log_k() {
    for (k, seed) in [(4usize, 0u64), (8, 1), (16, 2)] {
        let mut model = build_irx1d::<f64>(10, k, 3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 64;
        let x = Tensor::new(&[n, 3, 3, 10], (0..n * 90).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let (loss, _) = model.loss_and_grad(&x, &labels).unwrap();
        let ln_k = (k as f64).ln();
        assert!((loss - ln_k).abs() < 0.15 * ln_k, "K={k}: loss {loss} vs ln K {ln_k}");
    }
}

#[test]
fn identical_runs_give_identical_weights() {
    let data = training_set(3, 6, 24, 1.0, 5);
    let run = || {
        let mut model = build_irx1d::<f32>(6, 3, 5, 9).unwrap();
        let history = train(&mut model, &data, &config(3)).unwrap();
        let losses: Vec<f64> = history.epochs.iter().map(|e| e.loss).collect();
        (checkpoint::encode(&model, &Header::default()), losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let mut model = build_irx1d::<f32>(6, 3, 5, 9).unwrap();
    train(&mut model, &data, &TrainConfig { seed: 6, ..config(3) }).unwrap();
    assert_ne!(checkpoint::encode(&model, &Header::default()), a);
}

#[test]
fn loss_stays_finite_for_a_full_run() {
    let data = training_set(3, 4, 20, 1.0, 3);
    let mut model = build_irx1d::<f32>(4, 3, 3, 4).unwrap();
    let mut seen = 0;
    train_with(&mut model, &data, &config(100), |e| {
        assert!(e.loss.is_finite() && e.loss >= 0.0);
        seen += 1;
    })
    .unwrap();
    assert_eq!(seen, 100);
    assert!(model.params().iter().all(|p| p.value.all_finite()));
    assert!(model.params().iter().all(|p| p.accum.data().iter().all(|&a| a >= 0.0)));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let data = training_set(3, 4, 20, 1.0, 3);
    let mut wrong_bands = build_irx1d::<f32>(5, 3, 3, 0).unwrap();
    assert!(matches!(train(&mut wrong_bands, &data, &config(1)), Err(Error::Dimension { .. })));
    let mut wrong_patch = build_irx1d::<f32>(4, 3, 5, 0).unwrap();
    assert!(train(&mut wrong_patch, &data, &config(1)).is_err());
    let mut too_few_classes = build_irx1d::<f32>(4, 2, 3, 0).unwrap();
    assert!(matches!(train(&mut too_few_classes, &data, &config(1)), Err(Error::Index { .. })));
}

#[test]
fn diverging_training_reports_its_location() {
    let mut data = training_set(3, 4, 20, 1.0, 3);
    data.data[0] = f32::INFINITY;
    let mut model = build_irx1d::<f32>(4, 3, 3, 0).unwrap();
    match train(&mut model, &data, &config(2)) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("epoch 1 batch "), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn checkpoints_round_trip_for_the_dataset_shapes() {
    let dir = tempfile::tempdir().unwrap();
    for (bands, classes, total) in [
        (372usize, 13usize, 202_381usize),
        (65, 8, 123_464),
        (6, 7, 108_295),
        (4, 8, 107_848),
    ] {
        let model = build_irx1d::<f32>(bands, classes, 7, 1).unwrap();
        assert_eq!(model.param_count(), total);
        let mut header = Header::default();
        header.set("note", "shape check");
        let path = dir.path().join(format!("m{bands}.irx"));
        checkpoint::save(&model, &header, &path).unwrap();
        let (back, h) = checkpoint::load::<f32>(&path).unwrap();
        assert_eq!(back.param_count(), total);
        assert_eq!(h.get("note"), Some("shape check"));
        assert_eq!(checkpoint::encode(&back, &h), std::fs::read(&path).unwrap());
    }
}

#[test]
fn damaged_checkpoints_are_refused() {
    let model = build_irx1d::<f32>(4, 3, 3, 0).unwrap();
    let bytes = checkpoint::encode(&model, &Header::default());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(checkpoint::decode::<f32>(&bad_magic), Err(Error::BadMagic(_))));
    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    assert!(matches!(checkpoint::decode::<f32>(&bad_version), Err(Error::Version { .. })));
    assert!(matches!(checkpoint::decode::<f32>(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
    // header length sits after magic, version and four u64 fields
    let mut bad_len = bytes.clone();
    bad_len[40..48].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(matches!(checkpoint::decode::<f32>(&bad_len), Err(Error::Truncated(_))));
}
