use irx_core::blocks::{IdentityBlockSpec, InceptionSpec, XceptionBlockSpec};
use irx_core::checkpoint::{self, Header};
use irx_core::eval::{classify_image, classify_pixels, cohen_kappa, confusion, diff_maps, ConfusionMatrix};
use irx_core::geodata::{
    extract_patches, normalize_fit, stratified_split, synth_scene, Interleave, LabelRaster, RasterCube, SynthConfig,
};
use irx_core::hpo::{self, Lattice, SearchSpace, StudyRecord, Trial, TrialStatus};
use irx_core::layers::{Layer, Parameter};
use irx_core::ops::{self, window_geometry, Padding, PoolMode};
use irx_core::train::{adagrad_step, ADAGRAD_EPS};
use irx_core::zoo::{build_cnn2d, build_irx1d, param_formula};
use irx_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_cube(rows: usize, cols: usize, bands: usize, seed: u64) -> RasterCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols * bands).map(|_| rng.random_range(-5.0f32..5.0)).collect();
    RasterCube::new(rows, cols, bands, data, Interleave::Bip).unwrap()
}

fn random_labels(rows: usize, cols: usize, classes: u8, seed: u64) -> LabelRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = (0..rows * cols).map(|_| rng.random_range(0..=classes)).collect();
    LabelRaster::new(rows, cols, labels).unwrap()
}

fn padding() -> impl Strategy<Value = Padding> {
    prop_oneof![Just(Padding::Same), Just(Padding::Valid)]
}

// ---------------------------------------------------------------- operators

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_geometry_closed_form(n in 1usize..40, k in 1usize..8, stride in 1usize..4, pad in padding()) {
        match (pad, window_geometry(n, k, stride, pad)) {
            (Padding::Same, Some((out, lead))) => {
                prop_assert_eq!(out, n.div_ceil(stride));
                let total = ((out - 1) * stride + k).saturating_sub(n);
                prop_assert_eq!(lead, total / 2);
            }
            (Padding::Valid, Some((out, lead))) => {
                prop_assert!(k <= n);
                prop_assert_eq!(lead, 0);
                prop_assert_eq!(out, (n - k) / stride + 1);
            }
            (Padding::Valid, None) => prop_assert!(k > n),
            (Padding::Same, None) => prop_assert!(false, "SAME geometry always exists"),
        }
    }

    #[test]
    fn conv_and_pool_shapes_follow_window_geometry(
        h in 1usize..9, w in 1usize..9, k in 1usize..5, stride in 1usize..3, pad in padding(), seed in any::<u64>(),
    ) {
        let x = random_tensor(&[2, h, w, 3], seed);
        let wt = random_tensor(&[k, k, 3, 4], seed ^ 1);
        let b = random_tensor(&[4], seed ^ 2);
        let conv = ops::conv2d(&x, &wt, &b, stride, pad);
        let pool = ops::pool2d(&x, k, stride, pad, PoolMode::Max);
        match (window_geometry(h, k, stride, pad), window_geometry(w, k, stride, pad)) {
            (Some((oh, _)), Some((ow, _))) => {
                prop_assert_eq!(conv.unwrap().shape().to_vec(), vec![2, oh, ow, 4]);
                prop_assert_eq!(pool.unwrap().0.shape().to_vec(), vec![2, oh, ow, 3]);
            }
            _ => {
                prop_assert!(conv.is_err());
                prop_assert!(pool.is_err());
            }
        }
    }

    #[test]
    fn sequence_ops_keep_length(n in 1usize..4, l in 1usize..20, c in 1usize..6, seed in any::<u64>()) {
        let x = random_tensor(&[n, l, c], seed);
        let w = random_tensor(&[c, 5], seed ^ 1);
        let b = random_tensor(&[5], seed ^ 2);
        prop_assert_eq!(ops::pointwise_conv(&x, &w, &b).unwrap().shape().to_vec(), vec![n, l, 5]);
        let d = random_tensor(&[c], seed ^ 3);
        prop_assert_eq!(ops::depthwise_scale(&x, &d).unwrap().shape().to_vec(), vec![n, l, c]);
        prop_assert_eq!(ops::maxpool_seq(&x, 3).unwrap().0.shape().to_vec(), vec![n, l, c]);
        prop_assert_eq!(ops::global_avg_pool(&x).unwrap().shape().to_vec(), vec![n, c]);
    }

    #[test]
    fn cross_entropy_is_non_negative(n in 1usize..6, k in 2usize..10, seed in any::<u64>()) {
        let logits = random_tensor(&[n, k], seed).map(|v| v * 20.0);
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + seed as usize) % k).collect();
        let (loss, grad) = ops::softmax_xent(&logits, &labels).unwrap();
        prop_assert!(loss >= 0.0);
        for row in grad.data().chunks(k) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        let flat = Tensor::<f64>::full(&[n, k], 0.3);
        let (uniform, _) = ops::softmax_xent(&flat, &labels).unwrap();
        prop_assert!((uniform - (k as f64).ln()).abs() < 1e-12);
    }
}

// ---------------------------------------------------------------- blocks and models

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn blocks_preserve_sequence_length(l in 1usize..12, cin in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inception = InceptionSpec::default();
        let identity = IdentityBlockSpec::default();
        let xception = XceptionBlockSpec::default();
        let mut a = inception.build::<f64, _>("a", cin, &mut rng).unwrap();
        let x = random_tensor(&[2, l, cin], seed);
        let y = a.forward(&x).unwrap();
        prop_assert_eq!(y.shape(), &[2, l, inception.out_channels()]);
        prop_assert_eq!(a.param_count(), inception.param_count(cin));

        let mut b = identity.build::<f64, _>("b", y.channels(), &mut rng).unwrap();
        let y = b.forward(&y).unwrap();
        prop_assert_eq!(y.shape(), &[2, l, identity.out_channels()]);
        prop_assert_eq!(b.param_count(), identity.param_count());

        let mut c = xception.build::<f64, _>("c", y.channels(), &mut rng).unwrap();
        let y = c.forward(&y).unwrap();
        prop_assert_eq!(y.shape(), &[2, l, xception.out_channels()]);
        prop_assert_eq!(c.param_count(), xception.param_count(identity.out_channels()));
    }

    #[test]
    fn irx_parameter_count_matches_formula(c in 1usize..=512, k in 2usize..=32, p in prop::sample::select(vec![1usize, 3, 5, 7, 9])) {
        let m = build_irx1d::<f32>(c, k, p, 0).unwrap();
        prop_assert_eq!(m.param_count(), param_formula(c, k));
        prop_assert_eq!(param_formula(c, k), 106_304 + 256 * c + 65 * k);
    }

    #[test]
    fn band_and_class_slopes_touch_only_their_layers(c in 1usize..300, k in 2usize..30) {
        let sizes = |c, k| -> Vec<(String, usize)> {
            build_irx1d::<f32>(c, k, 1, 0).unwrap().params().iter().map(|p| (p.name.clone(), p.numel())).collect()
        };
        let base = sizes(c, k);
        for (other, prefix, slope) in [(sizes(c + 1, k), "inception", 256usize), (sizes(c, k + 1), "output", 65)] {
            prop_assert_eq!(base.len(), other.len());
            let mut delta = 0;
            for ((n0, s0), (n1, s1)) in base.iter().zip(&other) {
                prop_assert_eq!(n0, n1);
                if s0 != s1 {
                    prop_assert!(n0.starts_with(prefix), "{} changed", n0);
                    delta += s1 - s0;
                }
            }
            prop_assert_eq!(delta, slope);
        }
    }

    #[test]
    fn forward_is_deterministic_and_checkpoints_round_trip(c in 1usize..12, k in 2usize..6, seed in any::<u64>()) {
        let model = build_irx1d::<f64>(c, k, 3, seed).unwrap();
        let x = random_tensor(&[3, 3, 3, c], seed ^ 9);
        let y = model.infer(&x).unwrap();
        prop_assert_eq!(model.infer(&x).unwrap().into_data(), y.data().to_vec());
        let again = build_irx1d::<f64>(c, k, 3, seed).unwrap();
        prop_assert_eq!(again.infer(&x).unwrap().into_data(), y.data().to_vec());
        let (back, _) = checkpoint::decode::<f64>(&checkpoint::encode(&model, &Header::default())).unwrap();
        prop_assert_eq!(back.arch(), model.arch());
        prop_assert_eq!(back.infer(&x).unwrap().into_data(), y.data().to_vec());
    }
}

// ---------------------------------------------------------------- geodata

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_partitions_every_class(
        rows in 1usize..30, cols in 1usize..30, classes in 1u8..8, seed in any::<u64>(),
        fraction in prop::sample::select(vec![0.05, 0.1, 0.15, 0.25, 0.5, 0.75]),
    ) {
        let gt = random_labels(rows, cols, classes, seed);
        prop_assume!(gt.labels.iter().any(|&l| l != 0));
        let split = stratified_split(&gt, fraction, seed).unwrap();
        prop_assert_eq!(&split, &stratified_split(&gt, fraction, seed).unwrap());
        let hist = gt.histogram();
        for cs in &split.classes {
            let n = hist[cs.class as usize];
            prop_assert!(n > 0);
            let want = ((fraction * n as f64).round() as usize).clamp(1, n);
            prop_assert_eq!(cs.train.len(), want);
            prop_assert_eq!(cs.train.len() + cs.test.len(), n);
            let mut all: Vec<usize> = cs.train.iter().chain(&cs.test).copied().collect();
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), n);
            prop_assert!(all.iter().all(|&p| gt.labels[p] == cs.class));
        }
        let present = hist.iter().skip(1).filter(|&&n| n > 0).count();
        prop_assert_eq!(split.classes.len(), present);
    }

    #[test]
    fn interior_patches_equal_direct_indexing(rows in 5usize..14, cols in 5usize..14, bands in 1usize..5, seed in any::<u64>()) {
        let cube = random_cube(rows, cols, bands, seed);
        let gt = LabelRaster::new(rows, cols, vec![1; rows * cols]).unwrap();
        let h = 2;
        let pixels: Vec<usize> = (h..rows - h).flat_map(|r| (h..cols - h).map(move |c| r * cols + c)).collect();
        prop_assume!(!pixels.is_empty());
        let set = extract_patches(&cube, &gt, &pixels, 5).unwrap();
        for (i, &p) in pixels.iter().enumerate() {
            let (r, c) = (p / cols, p % cols);
            let s = set.sample(i);
            for dr in 0..5 {
                for dc in 0..5 {
                    for b in 0..bands {
                        prop_assert_eq!(s[(dr * 5 + dc) * bands + b], cube.get(r + dr - h, c + dc - h, b));
                    }
                }
            }
        }
    }

    #[test]
    fn normalisation_uses_only_listed_pixels(rows in 2usize..10, cols in 2usize..10, seed in any::<u64>()) {
        let cube = random_cube(rows, cols, 3, seed);
        let n = rows * cols;
        let train: Vec<usize> = (0..n).step_by(2).collect();
        let all: Vec<usize> = (0..n).collect();
        let a = normalize_fit(&cube, &train).unwrap();
        let b = normalize_fit(&cube, &all).unwrap();
        prop_assert_ne!(a, b);
        let mut shifted = cube.clone();
        for p in (1..n).step_by(2) {
            for v in &mut shifted.data[p * 3..(p + 1) * 3] {
                *v += 100.0;
            }
        }
        prop_assert_eq!(normalize_fit(&shifted, &train).unwrap(), normalize_fit(&cube, &train).unwrap());
    }
}

// ---------------------------------------------------------------- training

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adagrad_accumulator_never_decreases(grads in prop::collection::vec(-10.0f64..10.0, 1..30)) {
        let mut p = Parameter::new("w", Tensor::<f64>::zeros(&[1]), true);
        let mut prev = 0.0;
        for g in grads {
            p.grad = Tensor::from_f64(&[1], &[g]).unwrap();
            adagrad_step(&mut p, 0.01, ADAGRAD_EPS).unwrap();
            let acc = p.accum.data()[0];
            prop_assert!(acc >= prev);
            prev = acc;
        }
    }

    #[test]
    fn glorot_bounds_hold(c in 1usize..40, k in 2usize..10, seed in any::<u64>()) {
        let m = build_irx1d::<f32>(c, k, 1, seed).unwrap();
        for p in m.params() {
            let shape = p.value.shape();
            if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt() as f32;
                prop_assert!(p.value.data().iter().all(|v| v.abs() <= limit * (1.0 + 1e-6)), "{}", p.name);
            }
        }
    }
}

// ---------------------------------------------------------------- evaluation

fn confusion_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..6).prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0u64..50, k), k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kappa_ignores_class_order(rows in confusion_strategy(), seed in any::<u64>()) {
        let k = rows.len();
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        prop_assume!(cm.total() > 0);
        let mut perm: Vec<usize> = (0..k).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<Vec<u64>> = (0..k).map(|i| (0..k).map(|j| rows[perm[i]][perm[j]]).collect()).collect();
        let a = cohen_kappa(&cm).unwrap();
        let b = cohen_kappa(&ConfusionMatrix::from_rows(&permuted).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a <= 1.0 + 1e-12);
    }

    #[test]
    fn kappa_is_one_exactly_for_diagonal_matrices(rows in confusion_strategy()) {
        let k = rows.len();
        let diag: Vec<Vec<u64>> = (0..k).map(|i| (0..k).map(|j| if i == j { rows[i][i] + 1 } else { 0 }).collect()).collect();
        let occupied = diag.iter().enumerate().filter(|(i, r)| r[*i] > 0).count();
        prop_assume!(occupied > 1);
        prop_assert!((cohen_kappa(&ConfusionMatrix::from_rows(&diag).unwrap()).unwrap() - 1.0).abs() < 1e-12);
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let off_diagonal = (0..k).any(|i| (0..k).any(|j| i != j && rows[i][j] > 0));
        if off_diagonal {
            prop_assert!(cohen_kappa(&cm).unwrap() < 1.0);
        }
    }

    #[test]
    fn confusion_skips_background(
        pairs in prop::collection::vec((0u8..5, 1u8..5), 1..60),
    ) {
        let reference: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let predicted: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let labelled = reference.iter().filter(|&&l| l != 0).count();
        match confusion(&reference, &predicted, 4) {
            Ok(cm) => prop_assert_eq!(cm.total() as usize, labelled),
            Err(_) => prop_assert_eq!(labelled, 0),
        }
    }

    #[test]
    fn map_difference_is_symmetric(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>(), full in any::<bool>()) {
        let a = random_labels(rows, cols, 4, seed);
        let b = random_labels(rows, cols, 4, seed ^ 5);
        let r = random_labels(rows, cols, 2, seed ^ 6);
        for reference in [None, Some(&r)] {
            let ab = diff_maps(&a, &b, reference, full).unwrap();
            let ba = diff_maps(&b, &a, reference, full).unwrap();
            prop_assert_eq!(&ab.mask, &ba.mask);
            prop_assert_eq!(ab.disagreeing, ba.disagreeing);
            prop_assert_eq!(ab.compared, ba.compared);
            prop_assert_eq!(&ab.area_a, &ba.area_b);
        }
        prop_assert_eq!(diff_maps(&a, &a, None, full).unwrap().disagreeing, 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn classification_is_repeatable_and_batch_independent(batch in 1usize..9, seed in any::<u64>()) {
        let (cube, _) = synth_scene(&SynthConfig::new(3, 4, 6, 7, seed, 1.0)).unwrap();
        let model = build_irx1d::<f32>(4, 3, 3, seed).unwrap();
        let a = classify_image(&model, &cube, 3, batch).unwrap();
        prop_assert_eq!(&a, &classify_image(&model, &cube, 3, batch).unwrap());
        prop_assert_eq!(&a, &classify_image(&model, &cube, 3, 1).unwrap());
        let pixels: Vec<usize> = (0..cube.pixels()).rev().collect();
        let listed = classify_pixels(&model, &cube, &pixels, 3, batch).unwrap();
        let expected: Vec<u8> = pixels.iter().map(|&p| a.labels[p]).collect();
        prop_assert_eq!(listed, expected);
    }
}

// ---------------------------------------------------------------- search

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samples_are_in_bounds_and_feasible(seed in any::<u64>(), p in prop::sample::select(vec![3usize, 5, 7, 9])) {
        let space = SearchSpace::standard(10, 4, p);
        let c = hpo::sample(&space, seed);
        prop_assert!(space.contains(&c));
        prop_assert!(space.feasible(&c));
        prop_assert!(space.to_spec(&c).param_count().is_ok());
        prop_assert_eq!(&hpo::sample(&space, seed), &c);
        prop_assert_eq!(&space.parse(&space.render(&c)).unwrap(), &c);
        prop_assert!(space.encode(&c).iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(space.distance(&c, &c), 0);
    }

    #[test]
    fn records_replay_exactly_and_best_is_monotone(
        objectives in prop::collection::vec(prop::option::of(-1.0f64..1.0), 0..25), seed in any::<u64>(),
    ) {
        let space = SearchSpace::standard(10, 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trials: Vec<Trial<_>> = objectives
            .iter()
            .enumerate()
            .map(|(id, &objective)| Trial {
                id,
                config: space.sample(&mut rng),
                objective,
                status: if objective.is_some() { TrialStatus::Complete } else { TrialStatus::Failed },
                seed: rng.random(),
            })
            .collect();
        let record = StudyRecord { seed, trials };
        let back = hpo::parse_record(&space, &hpo::render_record(&space, &record)).unwrap();
        prop_assert_eq!(&back, &record);
        let curve = record.best_so_far();
        for w in curve.windows(2) {
            if let (Some(a), Some(b)) = (w[0], w[1]) {
                prop_assert!(b >= a);
            }
            prop_assert!(!(w[0].is_some() && w[1].is_none()));
        }
        if let Some(best) = record.best() {
            prop_assert_eq!(best.objective, *curve.last().unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sampled_configurations_build(seed in any::<u64>()) {
        let space = SearchSpace::standard(2, 3, 5);
        let c = hpo::sample(&space, seed);
        let spec = space.to_spec(&c);
        let model = build_cnn2d::<f32>(&spec, seed).unwrap();
        prop_assert_eq!(model.param_count(), spec.param_count().unwrap());
    }
}
