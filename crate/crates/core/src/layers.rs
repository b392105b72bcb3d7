//! Parameterised layers with cached forward state, plus the two
//! combinators (channel concatenation and residual addition) the blocks
//! are assembled from.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{self, BatchNormCache, Padding, PoolMode};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;
/// Inception pooling path window (stride 1, same padding).
pub const SEQ_POOL_WINDOW: usize = 3;

/// A named tensor with its gradient and Adagrad accumulator.
///
/// Batch-norm running statistics are stored as non-trainable parameters so
/// that they are counted, checkpointed and audited like any other weight.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub accum: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        let accum = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
            accum,
            trainable,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub(crate) fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(g)
    }
}

/// Uniform Glorot initialisation, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-limit..=limit))).collect();
    Tensor::new(shape, data).expect("valid shape")
}

pub trait Layer<T: Real>: Send + Sync {
    /// Training-mode forward pass; caches what `backward` needs.
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Inference-mode forward pass; never mutates the layer.
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Parameter<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        Vec::new()
    }
}

fn take_cache<C>(slot: &mut Option<C>, layer: &str) -> Result<C> {
    slot.take()
        .ok_or_else(|| Error::State(format!("{layer}: backward called without a recorded forward pass")))
}

// ---------------------------------------------------------------- pointwise / dense

/// Kernel-size-1 convolution; on `[N, C]` inputs this is a dense layer.
pub struct Pointwise<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Pointwise<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Pointwise {
            weight: Parameter::new(format!("{name}.w"), glorot(&[cin, cout], cin, cout, rng), true),
            bias: Parameter::new(format!("{name}.b"), Tensor::zeros(&[cout]), true),
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for Pointwise<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::pointwise_conv(x, &self.weight.value, &self.bias.value)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.cache, &self.weight.name)?;
        let g = ops::pointwise_conv_backward(&x, &self.weight.value, dy)?;
        self.weight.accumulate(&g.dw)?;
        self.bias.accumulate(&g.db)?;
        Ok(g.dx)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------- depthwise

/// Kernel-size-1 depthwise stage: a bias-free scale per channel.
pub struct Depthwise<T> {
    pub scale: Parameter<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Depthwise<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, rng: &mut R) -> Self {
        Depthwise {
            scale: Parameter::new(format!("{name}.d"), glorot(&[channels], 1, 1, rng), true),
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for Depthwise<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::depthwise_scale(x, &self.scale.value)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.cache, &self.scale.name)?;
        let (dx, dd) = ops::depthwise_scale_backward(&x, &self.scale.value, dy)?;
        self.scale.accumulate(&dd)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.scale]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.scale]
    }
}

// ---------------------------------------------------------------- batch norm

pub struct BatchNorm<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Parameter<T>,
    pub running_var: Parameter<T>,
    eps: T,
    momentum: T,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), true),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: Parameter::new(format!("{name}.mean"), Tensor::zeros(&[channels]), false),
            running_var: Parameter::new(format!("{name}.var"), Tensor::full(&[channels], T::one()), false),
            eps: T::lit(BN_EPS),
            momentum: T::lit(BN_MOMENTUM),
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for BatchNorm<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, cache) = ops::batch_norm_train(x, &self.gamma.value, &self.beta.value, self.eps)?;
        let m = self.momentum;
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.value.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = m * *r + keep * b;
        }
        for (r, &b) in self.running_var.value.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = m * *r + keep * b;
        }
        self.cache = Some(cache);
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::batch_norm_infer(
            x,
            &self.gamma.value,
            &self.beta.value,
            &self.running_mean.value,
            &self.running_var.value,
            self.eps,
        )
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = take_cache(&mut self.cache, &self.gamma.name)?;
        let (dx, dgamma, dbeta) = ops::batch_norm_backward(&cache, &self.gamma.value, dy)?;
        self.gamma.accumulate(&dgamma)?;
        self.beta.accumulate(&dbeta)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

// ---------------------------------------------------------------- parameter-free layers

#[derive(Default)]
pub struct Relu<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Relu { cache: None }
    }
}

impl<T: Real> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = ops::relu(x);
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::relu(x))
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let y = take_cache(&mut self.cache, "relu")?;
        ops::relu_backward(&y, dy)
    }
}

pub struct MaxPoolSeq {
    window: usize,
    cache: Option<(Vec<usize>, Vec<u32>)>,
}

impl MaxPoolSeq {
    pub fn new(window: usize) -> Self {
        MaxPoolSeq { window, cache: None }
    }
}

impl<T: Real> Layer<T> for MaxPoolSeq {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, arg) = ops::maxpool_seq(x, self.window)?;
        self.cache = Some((x.shape().to_vec(), arg));
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::maxpool_seq(x, self.window)?.0)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, arg) = take_cache(&mut self.cache, "maxpool_seq")?;
        ops::maxpool_seq_backward(&shape, &arg, dy)
    }
}

#[derive(Default)]
pub struct GlobalAvgPool {
    cache: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { cache: None }
    }
}

impl<T: Real> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.cache = Some(x.shape().to_vec());
        ops::global_avg_pool(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::global_avg_pool(x)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = take_cache(&mut self.cache, "global_avg_pool")?;
        ops::global_avg_pool_backward(&shape, dy)
    }
}

/// Reinterprets `[N, p, p, C]` patches as `[N, p*p, C]` sequences
/// (or `[N, A, B, ...]` as `[N, A*B*...]` when `flatten_all` is set).
pub struct Reshape {
    flatten_all: bool,
    cache: Option<Vec<usize>>,
}

impl Reshape {
    pub fn to_sequence() -> Self {
        Reshape {
            flatten_all: false,
            cache: None,
        }
    }

    pub fn flatten() -> Self {
        Reshape {
            flatten_all: true,
            cache: None,
        }
    }

    fn target(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let (n, rest) = match *shape {
            [n, h, w, c] => (n, [h, w, c]),
            [h, w, c] => (1, [h, w, c]),
            _ => {
                return Err(Error::Shape {
                    layer: "reshape".into(),
                    reason: format!("expected an image batch, got {shape:?}"),
                })
            }
        };
        Ok(if self.flatten_all {
            vec![n, rest.iter().product()]
        } else {
            vec![n, rest[0] * rest[1], rest[2]]
        })
    }
}

impl<T: Real> Layer<T> for Reshape {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.cache = Some(x.shape().to_vec());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let target = self.target(x.shape())?;
        x.clone().reshape(&target)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = take_cache(&mut self.cache, "reshape")?;
        dy.clone().reshape(&shape)
    }
}

// ---------------------------------------------------------------- 2-D layers

pub struct Conv2d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: Padding,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let area = kernel * kernel;
        Conv2d {
            weight: Parameter::new(
                format!("{name}.w"),
                glorot(&[kernel, kernel, cin, cout], area * cin, area * cout, rng),
                true,
            ),
            bias: Parameter::new(format!("{name}.b"), Tensor::zeros(&[cout]), true),
            stride,
            padding,
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d(x, &self.weight.value, &self.bias.value, self.stride, self.padding)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.cache, &self.weight.name)?;
        let g = ops::conv2d_backward(&x, &self.weight.value, dy, self.stride, self.padding)?;
        self.weight.accumulate(&g.dw)?;
        self.bias.accumulate(&g.db)?;
        Ok(g.dx)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub struct Pool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub mode: PoolMode,
    cache: Option<(Vec<usize>, Vec<u32>)>,
}

impl Pool2d {
    pub fn new(kernel: usize, stride: usize, padding: Padding, mode: PoolMode) -> Self {
        Pool2d {
            kernel,
            stride,
            padding,
            mode,
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for Pool2d {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, route) = ops::pool2d(x, self.kernel, self.stride, self.padding, self.mode)?;
        self.cache = Some((x.shape().to_vec(), route));
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(ops::pool2d(x, self.kernel, self.stride, self.padding, self.mode)?.0)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, route) = take_cache(&mut self.cache, "pool2d")?;
        ops::pool2d_backward(&shape, &route, dy, self.kernel, self.stride, self.padding, self.mode)
    }
}

// ---------------------------------------------------------------- combinators

pub struct Sequential<T> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Real> Default for Sequential<T> {
    fn default() -> Self {
        Sequential { layers: Vec::new() }
    }
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn with(mut self, layer: impl Layer<T> + 'static) -> Self {
        self.push(layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Real> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Runs every branch on the same input and concatenates along channels.
pub struct Concat<T> {
    branches: Vec<Sequential<T>>,
    widths: Option<Vec<usize>>,
}

impl<T: Real> Concat<T> {
    pub fn new(branches: Vec<Sequential<T>>) -> Self {
        Concat { branches, widths: None }
    }

    fn join(outs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let lead = &outs[0].shape()[..outs[0].rank() - 1];
        for o in outs {
            if &o.shape()[..o.rank() - 1] != lead {
                return Err(Error::dim("concat", outs[0].shape(), o.shape()));
            }
        }
        let rows = outs[0].as_rows().0;
        let total: usize = outs.iter().map(|o| o.channels()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for o in outs {
                let c = o.channels();
                data.extend_from_slice(&o.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Tensor::new(&shape, data)
    }
}

impl<T: Real> Layer<T> for Concat<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let outs = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x))
            .collect::<Result<Vec<_>>>()?;
        self.widths = Some(outs.iter().map(|o| o.channels()).collect());
        Self::join(&outs)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let outs = self.branches.iter().map(|b| b.infer(x)).collect::<Result<Vec<_>>>()?;
        Self::join(&outs)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let widths = take_cache(&mut self.widths, "concat")?;
        let (rows, total) = dy.as_rows();
        let lead = &dy.shape()[..dy.rank() - 1];
        let mut offset = 0;
        let mut dx: Option<Tensor<T>> = None;
        for (branch, &w) in self.branches.iter_mut().zip(&widths) {
            let mut part = Vec::with_capacity(rows * w);
            for r in 0..rows {
                part.extend_from_slice(&dy.data()[r * total + offset..r * total + offset + w]);
            }
            offset += w;
            let mut shape = lead.to_vec();
            shape.push(w);
            let g = branch.backward(&Tensor::new(&shape, part)?)?;
            match dx.as_mut() {
                Some(acc) => acc.add_assign(&g)?,
                None => dx = Some(g),
            }
        }
        dx.ok_or_else(|| Error::State("concat without branches".into()))
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        self.branches.iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.branches.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}

/// `main(x) + shortcut(x)`, where a missing shortcut is the identity.
pub struct Residual<T> {
    main: Sequential<T>,
    shortcut: Option<Sequential<T>>,
}

impl<T: Real> Residual<T> {
    pub fn new(main: Sequential<T>, shortcut: Option<Sequential<T>>) -> Self {
        Residual { main, shortcut }
    }
}

impl<T: Real> Layer<T> for Residual<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.main.forward(x)?;
        let b = match self.shortcut.as_mut() {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        a.add(&b).map_err(|_| Error::dim("residual add", a.shape(), b.shape()))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.main.infer(x)?;
        let b = match self.shortcut.as_ref() {
            Some(s) => s.infer(x)?,
            None => x.clone(),
        };
        a.add(&b).map_err(|_| Error::dim("residual add", a.shape(), b.shape()))
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut dx = self.main.backward(dy)?;
        match self.shortcut.as_mut() {
            Some(s) => dx.add_assign(&s.backward(dy)?)?,
            None => dx.add_assign(dy)?,
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        let mut p = self.main.params();
        if let Some(s) = &self.shortcut {
            p.extend(s.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut p = self.main.params_mut();
        if let Some(s) = &mut self.shortcut {
            p.extend(s.params_mut());
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pw = Pointwise::<f64>::new("pw", 2, 3, &mut rng);
        let dy = Tensor::zeros(&[1, 3]);
        assert!(matches!(pw.backward(&dy), Err(Error::State(_))));
        let mut seq = Sequential::<f64>::new().with(Relu::new());
        assert!(matches!(seq.backward(&dy), Err(Error::State(_))));
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Tensor<f64> = glorot(&[64, 128], 64, 128, &mut rng);
        let limit = (6.0f64 / 192.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(w.data().iter().any(|v| v.abs() > 0.9 * limit));
    }

    #[test]
    fn batchnorm_updates_running_stats() {
        let mut bn = BatchNorm::<f64>::new("bn", 1);
        let x = Tensor::from_f64(&[2, 1], &[1.0, 3.0]).unwrap();
        bn.forward(&x).unwrap();
        assert!((bn.running_mean.value.data()[0] - 0.02).abs() < 1e-12);
        assert!((bn.running_var.value.data()[0] - (0.99 + 0.01)).abs() < 1e-12);
    }

    #[test]
    fn concat_stacks_channels() {
        let x = Tensor::<f64>::from_f64(&[2, 1], &[1.0, -2.0]).unwrap();
        let c = Concat::new(vec![
            Sequential::new(),
            Sequential::new().with(Relu::new()),
        ]);
        let y = c.infer(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[1.0, 1.0, -2.0, 0.0]);
    }
}
