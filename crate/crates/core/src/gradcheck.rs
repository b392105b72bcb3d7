//! Central finite differences against the hand-written backward passes,
//! in 64-bit precision.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{ConvBlockSpec, IdentityBlockSpec, InceptionSpec, SeparableBlockSpec, XceptionBlockSpec};
use crate::error::Result;
use crate::layers::*;
use crate::ops::{self, Padding, PoolMode};
use crate::tensor::Tensor;
use crate::zoo::{build_cnn2d, build_irx1d, Cnn2dSpec, ConvStage, Model, Window};

/// Step for single operators and blocks.
pub const H: f64 = 1e-5;
/// Step for whole models. Their hundreds of ReLU units make a 1e-5 step
/// straddle activation kinks often enough to spoil the comparison.
pub const H_MODEL: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Below this gradient norm the error is taken relative to the floor, so a
/// true gradient of zero (a bias feeding batch norm) must come out within
/// 1e-8 absolute, above the rounding noise of a central difference.
pub const SCALE_FLOOR: f64 = 1e-4;
/// Entries probed per tensor; small tensors are probed exhaustively.
pub const PROBES: usize = 24;

/// Relative error of one gradient tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub what: String,
    pub error: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < TOLERANCE
    }
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid shape")
}

fn probes(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= PROBES {
        (0..n).collect()
    } else {
        sample(rng, n, PROBES).into_vec()
    }
}

/// Norm-wise relative error of the probed entries.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    diff / norm(analytic).max(norm(numeric)).max(SCALE_FLOOR)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Input and parameter gradients of `layer` under the loss `sum(r * y)`
/// for a random `r`.
pub fn check_layer(what: &str, layer: &mut dyn Layer<f64>, x: &Tensor<f64>, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    for p in layer.params_mut() {
        p.grad.fill(0.0);
    }
    let y = layer.forward(x)?;
    let r = random(y.shape(), rng);
    let dx = layer.backward(&r)?;
    let mut out = Vec::new();

    let loss = |layer: &mut dyn Layer<f64>, x: &Tensor<f64>| -> Result<f64> { Ok(dot(&layer.forward(x)?, &r)) };

    let idx = probes(x.numel(), rng);
    let mut numeric = Vec::new();
    for &i in &idx {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        numeric.push((loss(layer, &xp)? - loss(layer, &xm)?) / (2.0 * H));
    }
    let analytic: Vec<f64> = idx.iter().map(|&i| dx.data()[i]).collect();
    out.push(Check {
        what: format!("{what}: input"),
        error: rel_err(&analytic, &numeric),
    });

    for pi in 0..layer.params().len() {
        let (trainable, n, name, grad) = {
            let p = &layer.params()[pi];
            (p.trainable, p.numel(), p.name.clone(), p.grad.clone())
        };
        if !trainable {
            continue;
        }
        let idx = probes(n, rng);
        let mut numeric = Vec::new();
        for &i in &idx {
            let orig = layer.params()[pi].value.data()[i];
            layer.params_mut()[pi].value.data_mut()[i] = orig + H;
            let lp = loss(layer, x)?;
            layer.params_mut()[pi].value.data_mut()[i] = orig - H;
            let lm = loss(layer, x)?;
            layer.params_mut()[pi].value.data_mut()[i] = orig;
            numeric.push((lp - lm) / (2.0 * H));
        }
        let analytic: Vec<f64> = idx.iter().map(|&i| grad.data()[i]).collect();
        out.push(Check {
            what: format!("{what}: {name}"),
            error: rel_err(&analytic, &numeric),
        });
    }
    Ok(out)
}

/// Every trainable parameter of a full model under softmax cross-entropy.
pub fn check_model(
    what: &str,
    model: &mut Model<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Check>> {
    model.loss_and_grad(x, labels)?;
    let grads: Vec<(String, bool, Tensor<f64>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.trainable, p.grad.clone()))
        .collect();
    let loss = |m: &mut Model<f64>| -> Result<f64> { Ok(ops::softmax_xent(&m.forward(x)?, labels)?.0) };
    let mut out = Vec::new();
    for (pi, (name, trainable, grad)) in grads.iter().enumerate() {
        if !trainable {
            continue;
        }
        let idx = probes(grad.numel(), rng);
        let mut numeric = Vec::new();
        for &i in &idx {
            let orig = model.params()[pi].value.data()[i];
            model.params_mut()[pi].value.data_mut()[i] = orig + H_MODEL;
            let lp = loss(model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig - H_MODEL;
            let lm = loss(model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig;
            numeric.push((lp - lm) / (2.0 * H_MODEL));
        }
        let analytic: Vec<f64> = idx.iter().map(|&i| grad.data()[i]).collect();
        out.push(Check {
            what: format!("{what}: {name}"),
            error: rel_err(&analytic, &numeric),
        });
    }
    Ok(out)
}

/// Moves every trainable value off its initial point so BN scales and
/// shifts are exercised away from the identity.
pub fn perturb_params(layer: &mut dyn Layer<f64>, rng: &mut ChaCha8Rng) {
    for p in layer.params_mut() {
        if p.trainable {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
}

pub fn operators(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut l = Pointwise::new("pw", 5, 4, &mut rng);
    perturb_params(&mut l, &mut rng);
    out.extend(check_layer("pointwise", &mut l, &random(&[3, 6, 5], &mut rng), &mut rng)?);
    out.extend(check_layer("dense", &mut l, &random(&[4, 5], &mut rng), &mut rng)?);

    let mut l = Depthwise::new("dw", 6, &mut rng);
    out.extend(check_layer("depthwise", &mut l, &random(&[2, 5, 6], &mut rng), &mut rng)?);

    let mut l = BatchNorm::new("bn", 4);
    perturb_params(&mut l, &mut rng);
    out.extend(check_layer("batch norm seq", &mut l, &random(&[3, 5, 4], &mut rng), &mut rng)?);
    out.extend(check_layer("batch norm flat", &mut l, &random(&[6, 4], &mut rng), &mut rng)?);

    out.extend(check_layer("relu", &mut Relu::new(), &random(&[2, 7, 3], &mut rng), &mut rng)?);
    out.extend(check_layer("maxpool seq", &mut MaxPoolSeq::new(3), &random(&[2, 9, 3], &mut rng), &mut rng)?);
    out.extend(check_layer("global avg", &mut GlobalAvgPool::new(), &random(&[3, 9, 4], &mut rng), &mut rng)?);
    out.extend(check_layer("to sequence", &mut Reshape::to_sequence(), &random(&[2, 3, 3, 4], &mut rng), &mut rng)?);
    out.extend(check_layer("flatten", &mut Reshape::flatten(), &random(&[2, 3, 3, 4], &mut rng), &mut rng)?);

    for (k, s, pad) in [(3, 1, Padding::Same), (3, 1, Padding::Valid), (5, 2, Padding::Same), (2, 2, Padding::Valid)] {
        let mut l = Conv2d::new("c", k, 3, 4, s, pad, &mut rng);
        perturb_params(&mut l, &mut rng);
        let x = random(&[2, 7, 7, 3], &mut rng);
        out.extend(check_layer(&format!("conv2d k{k} s{s} {pad:?}"), &mut l, &x, &mut rng)?);
    }
    for mode in [PoolMode::Max, PoolMode::Avg] {
        for (k, s, pad) in [(3, 1, Padding::Same), (3, 1, Padding::Valid), (2, 2, Padding::Same), (3, 2, Padding::Valid)] {
            let mut l = Pool2d::new(k, s, pad, mode);
            let x = random(&[2, 7, 7, 3], &mut rng);
            out.extend(check_layer(&format!("pool2d {mode:?} k{k} s{s} {pad:?}"), &mut l, &x, &mut rng)?);
        }
    }

    let logits = random(&[4, 5], &mut rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
    let (_, d) = ops::softmax_xent(&logits, &labels)?;
    let mut numeric = Vec::new();
    for i in 0..logits.numel() {
        let mut p = logits.clone();
        p.data_mut()[i] += H;
        let mut m = logits.clone();
        m.data_mut()[i] -= H;
        numeric.push((ops::softmax_xent(&p, &labels)?.0 - ops::softmax_xent(&m, &labels)?.0) / (2.0 * H));
    }
    out.push(Check {
        what: "softmax cross-entropy: logits".into(),
        error: rel_err(d.data(), &numeric),
    });
    Ok(out)
}

pub fn combinators(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut seq = Sequential::new()
        .with(Pointwise::new("a", 3, 4, &mut rng))
        .with(Relu::new())
        .with(Pointwise::new("b", 4, 2, &mut rng));
    out.extend(check_layer("sequential", &mut seq, &random(&[2, 5, 3], &mut rng), &mut rng)?);

    let branches = vec![
        Sequential::new().with(Pointwise::new("c1", 3, 2, &mut rng)),
        Sequential::new().with(MaxPoolSeq::new(3)).with(Pointwise::new("c2", 3, 3, &mut rng)),
    ];
    out.extend(check_layer("concat", &mut Concat::new(branches), &random(&[2, 5, 3], &mut rng), &mut rng)?);

    let main = Sequential::new().with(Pointwise::new("m", 3, 3, &mut rng)).with(Relu::new());
    let x = random(&[2, 4, 3], &mut rng);
    out.extend(check_layer("residual identity", &mut Residual::new(main, None), &x, &mut rng)?);
    let main = Sequential::new().with(Pointwise::new("m", 3, 5, &mut rng));
    let short = Sequential::new().with(Pointwise::new("s", 3, 5, &mut rng));
    let x = random(&[2, 4, 3], &mut rng);
    out.extend(check_layer("residual projection", &mut Residual::new(main, Some(short)), &x, &mut rng)?);
    Ok(out)
}

/// The four block kinds at reduced widths.
pub fn blocks(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let x = random(&[2, 9, 4], &mut rng);
    let inception = InceptionSpec {
        f1: 3,
        f2: 2,
        f3: 3,
        f4: 2,
        f5: 2,
        f6: 2,
    };
    let mut b = inception.build::<f64, _>("inc", 4, &mut rng)?;
    perturb_params(&mut b, &mut rng);
    out.extend(check_layer("inception", &mut b, &x, &mut rng)?);

    let mut b = IdentityBlockSpec { filters: (3, 3, 4) }.build::<f64, _>("id", 4, &mut rng)?;
    perturb_params(&mut b, &mut rng);
    out.extend(check_layer("identity block", &mut b, &x, &mut rng)?);

    let mut b = ConvBlockSpec { filters: (3, 2, 5) }.build::<f64, _>("cb", 4, &mut rng)?;
    perturb_params(&mut b, &mut rng);
    out.extend(check_layer("conv block", &mut b, &x, &mut rng)?);

    let xs = XceptionBlockSpec {
        separable: [
            SeparableBlockSpec { filters: 3, batch_norm: true },
            SeparableBlockSpec { filters: 3, batch_norm: true },
            SeparableBlockSpec { filters: 3, batch_norm: false },
        ],
        shortcut: 3,
    };
    let mut b = xs.build::<f64, _>("xc", 4, &mut rng)?;
    perturb_params(&mut b, &mut rng);
    out.extend(check_layer("xception block", &mut b, &x, &mut rng)?);
    Ok(out)
}

/// The full IRX-1D graph at its real widths on a 3x3, 4-band input.
pub fn irx1d(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut model = build_irx1d::<f64>(4, 3, 3, seed)?;
    let x = random(&[4, 3, 3, 4], &mut rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
    check_model("irx1d", &mut model, &x, &labels, &mut rng)
}

pub fn cnn2d(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
    let stage = |filters, kernel, pool_kernel, pool_mode| ConvStage {
        filters,
        kernel,
        conv: Window::SAME,
        pool_kernel,
        pool_mode,
        pool: Window::VALID,
    };
    let spec = Cnn2dSpec {
        bands: 3,
        classes: 4,
        patch: 5,
        stages: vec![stage(4, 3, 2, PoolMode::Avg), stage(3, 3, 2, PoolMode::Max)],
        dense: vec![6, 5],
        learning_rate: 0.01,
    };
    let mut model = build_cnn2d::<f64>(&spec, seed)?;
    let x = random(&[3, 5, 5, 3], &mut rng);
    let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
    check_model("cnn2d", &mut model, &x, &labels, &mut rng)
}

/// Every check above for one seed.
pub fn suite(seed: u64) -> Result<Vec<Check>> {
    let mut out = operators(seed)?;
    out.extend(combinators(seed)?);
    out.extend(blocks(seed)?);
    out.extend(irx1d(seed)?);
    out.extend(cnn2d(seed)?);
    Ok(out)
}
