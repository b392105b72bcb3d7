//! Inception, residual and Xception blocks built from kernel-size-1 layers.
//!
//! Each spec knows how to build its block and how many parameters the
//! block holds; the counters are checked against the built layers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{
    BatchNorm, Concat, Depthwise, Layer, MaxPoolSeq, Parameter, Pointwise, Relu, Residual, Sequential,
    SEQ_POOL_WINDOW,
};
use crate::tensor::{Real, Tensor};

/// Batch-norm parameters per channel: scale, shift, running mean, running variance.
pub const BN_PARAMS_PER_CHANNEL: usize = 4;

fn pointwise_params(cin: usize, cout: usize) -> usize {
    (cin + 1) * cout
}

fn bn_params(channels: usize) -> usize {
    BN_PARAMS_PER_CHANNEL * channels
}

/// A built block; checks its input channel count before running.
pub struct Block<T> {
    kind: &'static str,
    in_channels: usize,
    out_channels: usize,
    inner: Sequential<T>,
}

impl<T: Real> Block<T> {
    pub fn kind(&self) -> &'static str {
        self.kind
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.inner.params().iter().map(|p| p.numel()).sum()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::dim(self.kind, x.shape(), &[self.in_channels]));
        }
        Ok(())
    }
}

impl<T: Real> Layer<T> for Block<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        self.inner.forward(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        self.inner.infer(x)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        self.inner.backward(dy)
    }

    fn params(&self) -> Vec<&Parameter<T>> {
        self.inner.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.inner.params_mut()
    }
}

// ---------------------------------------------------------------- inception

/// Filter counts `{(f1), (f2, f3), (f4, f5), (f6)}` of the four parallel paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InceptionSpec {
    pub f1: usize,
    pub f2: usize,
    pub f3: usize,
    pub f4: usize,
    pub f5: usize,
    pub f6: usize,
}

impl Default for InceptionSpec {
    fn default() -> Self {
        InceptionSpec {
            f1: 64,
            f2: 64,
            f3: 64,
            f4: 64,
            f5: 64,
            f6: 64,
        }
    }
}

impl InceptionSpec {
    pub fn out_channels(&self) -> usize {
        self.f1 + self.f3 + self.f5 + self.f6
    }

    pub fn param_count(&self, cin: usize) -> usize {
        pointwise_params(cin, self.f1)
            + pointwise_params(cin, self.f2)
            + pointwise_params(self.f2, self.f3)
            + pointwise_params(cin, self.f4)
            + pointwise_params(self.f4, self.f5)
            + pointwise_params(cin, self.f6)
    }

    pub fn build<T: Real, R: Rng + ?Sized>(&self, name: &str, cin: usize, rng: &mut R) -> Result<Block<T>> {
        if cin == 0 {
            return Err(Error::Argument("inception input needs at least one channel".into()));
        }
        let b1 = Sequential::new()
            .with(Pointwise::new(&format!("{name}.p1"), cin, self.f1, rng))
            .with(Relu::new());
        let b2 = Sequential::new()
            .with(Pointwise::new(&format!("{name}.p2a"), cin, self.f2, rng))
            .with(Relu::new())
            .with(Pointwise::new(&format!("{name}.p2b"), self.f2, self.f3, rng))
            .with(Relu::new());
        let b3 = Sequential::new()
            .with(Pointwise::new(&format!("{name}.p3a"), cin, self.f4, rng))
            .with(Relu::new())
            .with(Pointwise::new(&format!("{name}.p3b"), self.f4, self.f5, rng))
            .with(Relu::new());
        let b4 = Sequential::new()
            .with(MaxPoolSeq::new(SEQ_POOL_WINDOW))
            .with(Pointwise::new(&format!("{name}.p4"), cin, self.f6, rng))
            .with(Relu::new());
        Ok(Block {
            kind: "inception",
            in_channels: cin,
            out_channels: self.out_channels(),
            inner: Sequential::new().with(Concat::new(vec![b1, b2, b3, b4])),
        })
    }
}

// ---------------------------------------------------------------- residual

/// Three conv/BN stages `(n1, n2, n3)` on the main path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IdentityBlockSpec {
    pub filters: (usize, usize, usize),
}

impl Default for IdentityBlockSpec {
    fn default() -> Self {
        IdentityBlockSpec { filters: (64, 64, 256) }
    }
}

fn residual_main<T: Real, R: Rng + ?Sized>(
    name: &str,
    cin: usize,
    (n1, n2, n3): (usize, usize, usize),
    rng: &mut R,
) -> Sequential<T> {
    Sequential::new()
        .with(Pointwise::new(&format!("{name}.c1"), cin, n1, rng))
        .with(BatchNorm::new(&format!("{name}.bn1"), n1))
        .with(Relu::new())
        .with(Pointwise::new(&format!("{name}.c2"), n1, n2, rng))
        .with(BatchNorm::new(&format!("{name}.bn2"), n2))
        .with(Relu::new())
        .with(Pointwise::new(&format!("{name}.c3"), n2, n3, rng))
        .with(BatchNorm::new(&format!("{name}.bn3"), n3))
}

fn residual_main_params(cin: usize, (n1, n2, n3): (usize, usize, usize)) -> usize {
    pointwise_params(cin, n1)
        + pointwise_params(n1, n2)
        + pointwise_params(n2, n3)
        + bn_params(n1 + n2 + n3)
}

impl IdentityBlockSpec {
    pub fn out_channels(&self) -> usize {
        self.filters.2
    }

    pub fn param_count(&self) -> usize {
        residual_main_params(self.filters.2, self.filters)
    }

    pub fn build<T: Real, R: Rng + ?Sized>(&self, name: &str, cin: usize, rng: &mut R) -> Result<Block<T>> {
        if cin != self.filters.2 {
            return Err(Error::dim("identity block", &[cin], &[self.filters.2]));
        }
        let main = residual_main(name, cin, self.filters, rng);
        Ok(Block {
            kind: "identity",
            in_channels: cin,
            out_channels: cin,
            inner: Sequential::new()
                .with(Residual::new(main, None))
                .with(Relu::new()),
        })
    }
}

/// Residual block whose shortcut is a projection (pointwise conv + BN).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvBlockSpec {
    pub filters: (usize, usize, usize),
}

impl Default for ConvBlockSpec {
    fn default() -> Self {
        ConvBlockSpec { filters: (64, 64, 256) }
    }
}

impl ConvBlockSpec {
    pub fn out_channels(&self) -> usize {
        self.filters.2
    }

    pub fn param_count(&self, cin: usize) -> usize {
        let n3 = self.filters.2;
        residual_main_params(cin, self.filters) + pointwise_params(cin, n3) + bn_params(n3)
    }

    pub fn build<T: Real, R: Rng + ?Sized>(&self, name: &str, cin: usize, rng: &mut R) -> Result<Block<T>> {
        if cin == 0 {
            return Err(Error::Argument("conv block input needs at least one channel".into()));
        }
        let n3 = self.filters.2;
        let main = residual_main(name, cin, self.filters, rng);
        let shortcut = Sequential::new()
            .with(Pointwise::new(&format!("{name}.proj"), cin, n3, rng))
            .with(BatchNorm::new(&format!("{name}.proj_bn"), n3));
        Ok(Block {
            kind: "conv_block",
            in_channels: cin,
            out_channels: n3,
            inner: Sequential::new()
                .with(Residual::new(main, Some(shortcut)))
                .with(Relu::new()),
        })
    }
}

// ---------------------------------------------------------------- xception

/// Depthwise (kernel 1, no bias) then pointwise (with bias), optionally batch-normed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeparableBlockSpec {
    pub filters: usize,
    pub batch_norm: bool,
}

impl SeparableBlockSpec {
    pub fn param_count(&self, cin: usize) -> usize {
        cin + pointwise_params(cin, self.filters) + if self.batch_norm { bn_params(self.filters) } else { 0 }
    }

    fn push<T: Real, R: Rng + ?Sized>(&self, seq: &mut Sequential<T>, name: &str, cin: usize, rng: &mut R) {
        seq.push(Depthwise::new(&format!("{name}.dw"), cin, rng));
        seq.push(Pointwise::new(&format!("{name}.pw"), cin, self.filters, rng));
        if self.batch_norm {
            seq.push(BatchNorm::new(&format!("{name}.bn"), self.filters));
        }
    }
}

/// Separable path plus a projected shortcut, merged by addition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct XceptionBlockSpec {
    pub separable: [SeparableBlockSpec; 3],
    pub shortcut: usize,
}

impl Default for XceptionBlockSpec {
    fn default() -> Self {
        let sep = |batch_norm| SeparableBlockSpec { filters: 64, batch_norm };
        XceptionBlockSpec {
            separable: [sep(true), sep(true), sep(false)],
            shortcut: 64,
        }
    }
}

impl XceptionBlockSpec {
    pub fn out_channels(&self) -> usize {
        self.shortcut
    }

    pub fn param_count(&self, cin: usize) -> usize {
        let mut c = cin;
        let mut total = 0;
        for s in &self.separable {
            total += s.param_count(c);
            c = s.filters;
        }
        total + pointwise_params(cin, self.shortcut) + bn_params(self.shortcut)
    }

    pub fn build<T: Real, R: Rng + ?Sized>(&self, name: &str, cin: usize, rng: &mut R) -> Result<Block<T>> {
        let last = self.separable[2].filters;
        if last != self.shortcut {
            return Err(Error::dim("xception merge", &[last], &[self.shortcut]));
        }
        let mut main = Sequential::new();
        let mut c = cin;
        for (i, s) in self.separable.iter().enumerate() {
            s.push(&mut main, &format!("{name}.sep{}", i + 1), c, rng);
            if i + 1 < self.separable.len() {
                main.push(Relu::new());
            }
            c = s.filters;
        }
        let shortcut = Sequential::new()
            .with(Pointwise::new(&format!("{name}.short"), cin, self.shortcut, rng))
            .with(BatchNorm::new(&format!("{name}.short_bn"), self.shortcut));
        Ok(Block {
            kind: "xception",
            in_channels: cin,
            out_channels: self.shortcut,
            inner: Sequential::new()
                .with(Residual::new(main, Some(shortcut)))
                .with(Relu::new()),
        })
    }
}
