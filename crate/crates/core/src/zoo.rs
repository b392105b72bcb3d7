//! Complete models: IRX-1D and the 2-D CNN baselines, plus parameter audits.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{IdentityBlockSpec, InceptionSpec, XceptionBlockSpec};
use crate::error::{Error, Result};
use crate::layers::{Conv2d, GlobalAvgPool, Layer, Parameter, Pointwise, Pool2d, Relu, Reshape, Sequential};
use crate::ops::{self, window_geometry, Padding, PoolMode};
use crate::tensor::{Real, Tensor};

/// Parameters of IRX-1D that depend on neither band nor class count.
pub const IRX_BASE_PARAMS: usize = 106_304;
pub const IRX_PARAMS_PER_BAND: usize = 256;
pub const IRX_PARAMS_PER_CLASS: usize = 65;
pub const IRX_DENSE: [usize; 2] = [128, 64];

/// Closed-form IRX-1D parameter count.
pub fn param_formula(bands: usize, classes: usize) -> usize {
    IRX_BASE_PARAMS + IRX_PARAMS_PER_BAND * bands + IRX_PARAMS_PER_CLASS * classes
}

/// A published IRX-1D total for one dataset shape.
#[derive(Clone, Copy, Debug)]
pub struct PublishedTotal {
    pub dataset: &'static str,
    pub bands: usize,
    pub classes: usize,
    pub total: usize,
    /// Published totals known to disagree with the architecture.
    pub anomalous: bool,
}

pub const PUBLISHED_IRX_TOTALS: [PublishedTotal; 5] = [
    PublishedTotal { dataset: "aviris-ng", bands: 372, classes: 13, total: 202_400, anomalous: true },
    PublishedTotal { dataset: "dais", bands: 65, classes: 8, total: 123_464, anomalous: false },
    PublishedTotal { dataset: "etm+", bands: 6, classes: 7, total: 108_295, anomalous: false },
    PublishedTotal { dataset: "sentinel-2", bands: 4, classes: 8, total: 107_848, anomalous: false },
    PublishedTotal { dataset: "indian-pines", bands: 220, classes: 16, total: 163_664, anomalous: false },
];

// ---------------------------------------------------------------- architecture descriptions

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IrxModelSpec {
    pub bands: usize,
    pub classes: usize,
    pub patch: usize,
    pub inception: InceptionSpec,
    pub identity: IdentityBlockSpec,
    pub xception: XceptionBlockSpec,
}

impl IrxModelSpec {
    pub fn new(bands: usize, classes: usize, patch: usize) -> Result<Self> {
        if bands == 0 {
            return Err(Error::Argument("IRX-1D needs at least one band".into()));
        }
        if classes < 2 {
            return Err(Error::Argument(format!("IRX-1D needs at least two classes, got {classes}")));
        }
        if patch == 0 || patch.is_multiple_of(2) {
            return Err(Error::Argument(format!("patch size must be odd and >= 1, got {patch}")));
        }
        Ok(IrxModelSpec {
            bands,
            classes,
            patch,
            inception: InceptionSpec::default(),
            identity: IdentityBlockSpec::default(),
            xception: XceptionBlockSpec::default(),
        })
    }

    /// Analytic count from the block counters.
    pub fn param_count(&self) -> usize {
        let mid = self.inception.out_channels();
        let head_in = self.xception.out_channels();
        self.inception.param_count(self.bands)
            + self.identity.param_count()
            + self.xception.param_count(mid)
            + (head_in + 1) * IRX_DENSE[0]
            + (IRX_DENSE[0] + 1) * IRX_DENSE[1]
            + (IRX_DENSE[1] + 1) * self.classes
    }
}

/// Padding and stride of one sliding-window layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub padding: Padding,
    pub stride: usize,
}

impl Window {
    pub const SAME: Window = Window { padding: Padding::Same, stride: 1 };
    pub const VALID: Window = Window { padding: Padding::Valid, stride: 1 };
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.padding {
            Padding::Same => 'S',
            Padding::Valid => 'V',
        };
        write!(f, "{p}{}", self.stride)
    }
}

/// One convolution followed by one pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: usize,
    pub conv: Window,
    pub pool_kernel: usize,
    pub pool_mode: PoolMode,
    pub pool: Window,
}

impl fmt::Display for ConvStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.pool_mode {
            PoolMode::Max => "max",
            PoolMode::Avg => "avg",
        };
        write!(
            f,
            "{}x{}{}/{}{}{}",
            self.filters, self.kernel, self.conv, mode, self.pool_kernel, self.pool
        )
    }
}

fn parse_window(s: &str) -> Result<Window> {
    let bad = || Error::Format(format!("bad window {s:?}"));
    let mut chars = s.chars();
    let padding = match chars.next() {
        Some('S') => Padding::Same,
        Some('V') => Padding::Valid,
        _ => return Err(bad()),
    };
    let stride = chars.as_str().parse().map_err(|_| bad())?;
    Ok(Window { padding, stride })
}

/// Splits `"600S1"` into `("600", "S1")`.
fn split_digits(s: &str) -> (&str, &str) {
    let end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    s.split_at(end)
}

impl FromStr for ConvStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad conv stage {s:?}"));
        let (conv, pool) = s.split_once('/').ok_or_else(bad)?;
        let (filters, rest) = conv.split_once('x').ok_or_else(bad)?;
        let (kernel, cwin) = split_digits(rest);
        let (pool_mode, prest) = if let Some(r) = pool.strip_prefix("max") {
            (PoolMode::Max, r)
        } else if let Some(r) = pool.strip_prefix("avg") {
            (PoolMode::Avg, r)
        } else {
            return Err(bad());
        };
        let (pk, pwin) = split_digits(prest);
        Ok(ConvStage {
            filters: filters.parse().map_err(|_| bad())?,
            kernel: kernel.parse().map_err(|_| bad())?,
            conv: parse_window(cwin)?,
            pool_kernel: pk.parse().map_err(|_| bad())?,
            pool_mode,
            pool: parse_window(pwin)?,
        })
    }
}

/// A conv/pool stack with a dense head on a `patch x patch x bands` input.
#[derive(Clone, Debug, PartialEq)]
pub struct Cnn2dSpec {
    pub bands: usize,
    pub classes: usize,
    pub patch: usize,
    pub stages: Vec<ConvStage>,
    pub dense: Vec<usize>,
    pub learning_rate: f64,
}

impl Cnn2dSpec {
    /// Spatial extent after every conv and pool layer, or the first layer
    /// whose window does not fit.
    pub fn spatial_chain(&self) -> Result<Vec<usize>> {
        let mut n = self.patch;
        let mut chain = vec![n];
        for (i, s) in self.stages.iter().enumerate() {
            for (what, k, w) in [("conv", s.kernel, s.conv), ("pool", s.pool_kernel, s.pool)] {
                n = window_geometry(n, k, w.stride, w.padding)
                    .ok_or_else(|| Error::Shape {
                        layer: format!("{what}{}", i + 1),
                        reason: format!("{k}x{k} window with {w} does not fit a {n}x{n} input"),
                    })?
                    .0;
                chain.push(n);
            }
        }
        Ok(chain)
    }

    pub fn flatten_width(&self) -> Result<usize> {
        let n = *self.spatial_chain()?.last().unwrap();
        let c = self.stages.last().map_or(self.bands, |s| s.filters);
        Ok(n * n * c)
    }

    pub fn param_count(&self) -> Result<usize> {
        let mut cin = self.bands;
        let mut total = 0;
        for s in &self.stages {
            total += s.kernel * s.kernel * cin * s.filters + s.filters;
            cin = s.filters;
        }
        let mut width = self.flatten_width()?;
        for &d in self.dense.iter().chain(std::iter::once(&self.classes)) {
            total += (width + 1) * d;
            width = d;
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Arch {
    Irx1d(IrxModelSpec),
    Cnn2d(Cnn2dSpec),
}

impl Arch {
    pub fn bands(&self) -> usize {
        match self {
            Arch::Irx1d(s) => s.bands,
            Arch::Cnn2d(s) => s.bands,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Arch::Irx1d(s) => s.classes,
            Arch::Cnn2d(s) => s.classes,
        }
    }

    pub fn patch(&self) -> usize {
        match self {
            Arch::Irx1d(s) => s.patch,
            Arch::Cnn2d(s) => s.patch,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Irx1d(_) => "irx1d",
            Arch::Cnn2d(_) => "cnn2d",
        }
    }
}

/// Single-line text form, e.g.
/// `irx1d bands=65 classes=8 patch=7` or
/// `cnn2d bands=4 classes=8 patch=7 stages=600x3S1/max3S1,600x5V1/max2V1 dense=200,50 lr=0.01`.
impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bands={} classes={} patch={}", self.name(), self.bands(), self.classes(), self.patch())?;
        if let Arch::Cnn2d(s) = self {
            let stages: Vec<String> = s.stages.iter().map(|st| st.to_string()).collect();
            let dense: Vec<String> = s.dense.iter().map(|d| d.to_string()).collect();
            write!(f, " stages={} dense={} lr={}", stages.join(","), dense.join(","), s.learning_rate)?;
        }
        Ok(())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut words = s.split_whitespace();
        let kind = words.next().ok_or_else(|| Error::Format("empty architecture".into()))?;
        let mut fields = std::collections::HashMap::new();
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad architecture field {w:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("architecture missing {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("architecture field {k} is not a count")))
        };
        match kind {
            "irx1d" => Ok(Arch::Irx1d(IrxModelSpec::new(num("bands")?, num("classes")?, num("patch")?)?)),
            "cnn2d" => {
                let stages = get("stages")?
                    .split(',')
                    .map(str::parse)
                    .collect::<Result<Vec<ConvStage>>>()?;
                let dense = get("dense")?
                    .split(',')
                    .map(|d| d.parse().map_err(|_| Error::Format(format!("bad dense width {d:?}"))))
                    .collect::<Result<Vec<usize>>>()?;
                let learning_rate = get("lr")?
                    .parse()
                    .map_err(|_| Error::Format("bad learning rate".into()))?;
                Ok(Arch::Cnn2d(Cnn2dSpec {
                    bands: num("bands")?,
                    classes: num("classes")?,
                    patch: num("patch")?,
                    stages,
                    dense,
                    learning_rate,
                }))
            }
            other => Err(Error::Format(format!("unknown architecture {other:?}"))),
        }
    }
}

// ---------------------------------------------------------------- models

pub struct Model<T> {
    arch: Arch,
    net: Sequential<T>,
}

impl<T: Real> Model<T> {
    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    /// Training-mode forward pass on `[N, p, p, C]` patches; returns `[N, K]` logits.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.net.forward(x)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.net.infer(x)
    }

    /// Propagates a logit gradient, accumulating into every parameter gradient.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<()> {
        self.net.backward(dlogits).map(|_| ())
    }

    /// Zeroes gradients, runs forward + softmax cross-entropy + backward and
    /// returns the mean loss together with the logits.
    pub fn loss_and_grad(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
        self.zero_grad();
        let logits = self.forward(x)?;
        let (loss, dlogits) = ops::softmax_xent(&logits, labels)?;
        self.backward(&dlogits)?;
        Ok((loss, logits))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.infer(x)?;
        let k = logits.channels();
        Ok(logits.data().chunks_exact(k).map(ops::argmax).collect())
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.net.params_mut()
    }

    /// Brute-force count: the element count of every parameter tensor.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let p = self.arch.patch();
        let c = self.arch.bands();
        let (_, h, w, ch) = x.image_dims("model input")?;
        if h != p || w != p || ch != c {
            return Err(Error::dim("model input", x.shape(), &[p, p, c]));
        }
        Ok(())
    }
}

pub fn build<T: Real>(arch: &Arch, seed: u64) -> Result<Model<T>> {
    match arch {
        Arch::Irx1d(spec) => build_irx1d_from(spec, seed),
        Arch::Cnn2d(spec) => build_cnn2d(spec, seed),
    }
}

pub fn build_irx1d<T: Real>(bands: usize, classes: usize, patch: usize, seed: u64) -> Result<Model<T>> {
    build_irx1d_from(&IrxModelSpec::new(bands, classes, patch)?, seed)
}

fn build_irx1d_from<T: Real>(spec: &IrxModelSpec, seed: u64) -> Result<Model<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inception = spec.inception.build("inception", spec.bands, &mut rng)?;
    let identity = spec.identity.build("identity", inception.out_channels(), &mut rng)?;
    let xception = spec.xception.build("xception", identity.out_channels(), &mut rng)?;
    let head_in = xception.out_channels();
    let net = Sequential::new()
        .with(Reshape::to_sequence())
        .with(inception)
        .with(identity)
        .with(xception)
        .with(GlobalAvgPool::new())
        .with(Pointwise::new("dense1", head_in, IRX_DENSE[0], &mut rng))
        .with(Relu::new())
        .with(Pointwise::new("dense2", IRX_DENSE[0], IRX_DENSE[1], &mut rng))
        .with(Relu::new())
        .with(Pointwise::new("output", IRX_DENSE[1], spec.classes, &mut rng));
    Ok(Model {
        arch: Arch::Irx1d(*spec),
        net,
    })
}

pub fn build_cnn2d<T: Real>(spec: &Cnn2dSpec, seed: u64) -> Result<Model<T>> {
    if spec.bands == 0 || spec.classes < 2 || spec.stages.is_empty() {
        return Err(Error::Argument(format!(
            "2-D CNN needs bands >= 1, classes >= 2 and at least one stage (got {}, {}, {})",
            spec.bands,
            spec.classes,
            spec.stages.len()
        )));
    }
    let width = spec.flatten_width()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::new();
    let mut cin = spec.bands;
    for (i, s) in spec.stages.iter().enumerate() {
        net.push(Conv2d::new(
            &format!("conv{}", i + 1),
            s.kernel,
            cin,
            s.filters,
            s.conv.stride,
            s.conv.padding,
            &mut rng,
        ));
        net.push(Relu::new());
        net.push(Pool2d::new(s.pool_kernel, s.pool.stride, s.pool.padding, s.pool_mode));
        cin = s.filters;
    }
    net.push(Reshape::flatten());
    let mut w = width;
    for (i, &d) in spec.dense.iter().enumerate() {
        net.push(Pointwise::new(&format!("dense{}", i + 1), w, d, &mut rng));
        net.push(Relu::new());
        w = d;
    }
    net.push(Pointwise::new("output", w, spec.classes, &mut rng));
    Ok(Model {
        arch: Arch::Cnn2d(spec.clone()),
        net,
    })
}

// ---------------------------------------------------------------- 2-D CNN presets

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    AvirisNg,
    Dais,
    EtmPlus,
    Sentinel2,
}

/// Layer recipe without padding/stride conventions: `(filters, kernel, pool kernel, pool mode)`.
type StageRecipe = (usize, usize, usize, PoolMode);

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::AvirisNg, Preset::Dais, Preset::EtmPlus, Preset::Sentinel2];

    pub fn name(self) -> &'static str {
        match self {
            Preset::AvirisNg => "aviris-ng",
            Preset::Dais => "dais",
            Preset::EtmPlus => "etm+",
            Preset::Sentinel2 => "sentinel-2",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let key = name.to_ascii_lowercase().replace(['_', ' '], "-");
        Preset::ALL.into_iter().find(|p| {
            p.name() == key || p.name().replace(['-', '+'], "") == key.replace(['-', '+'], "")
        })
    }

    pub fn bands(self) -> usize {
        match self {
            Preset::AvirisNg => 372,
            Preset::Dais => 65,
            Preset::EtmPlus => 6,
            Preset::Sentinel2 => 4,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Preset::AvirisNg => 13,
            Preset::Dais => 8,
            Preset::EtmPlus => 7,
            Preset::Sentinel2 => 8,
        }
    }

    pub fn published_total(self) -> usize {
        match self {
            Preset::AvirisNg => 2_593_713,
            Preset::Dais => 5_212_658,
            Preset::EtmPlus => 2_563_907,
            Preset::Sentinel2 => 9_513_458,
        }
    }

    fn recipe(self) -> (Vec<StageRecipe>, Vec<usize>) {
        use PoolMode::{Avg, Max};
        match self {
            Preset::AvirisNg => (vec![(100, 5, 3, Avg), (600, 3, 3, Max)], vec![200, 200]),
            Preset::Dais => (vec![(600, 3, 3, Max), (300, 5, 3, Max), (100, 3, 3, Max)], vec![200, 50]),
            Preset::EtmPlus => (vec![(600, 3, 2, Max), (100, 5, 3, Max)], vec![200, 200, 50]),
            Preset::Sentinel2 => (vec![(600, 3, 3, Max), (600, 5, 2, Max)], vec![200, 50]),
        }
    }

    /// Frozen per-layer `(conv, pool)` windows that reproduce the published total.
    ///
    /// AVIRIS-NG and ETM+ use their documented conventions; DAIS and
    /// Sentinel-2 use the first hit of [`search_convention`].
    pub fn convention(self) -> Vec<(Window, Window)> {
        let (s, v) = (Window::SAME, Window::VALID);
        let same2 = Window { padding: Padding::Same, stride: 2 };
        match self {
            Preset::AvirisNg => vec![(s, v), (s, v)],
            Preset::Dais => vec![(s, s), (s, s), (same2, v)],
            Preset::EtmPlus => vec![(s, s), (s, s)],
            Preset::Sentinel2 => vec![(s, s), (v, v)],
        }
    }

    pub fn spec(self) -> Cnn2dSpec {
        self.spec_with(&self.convention())
    }

    pub fn spec_with(self, convention: &[(Window, Window)]) -> Cnn2dSpec {
        let (recipe, dense) = self.recipe();
        let stages = recipe
            .iter()
            .zip(convention)
            .map(|(&(filters, kernel, pool_kernel, pool_mode), &(conv, pool))| ConvStage {
                filters,
                kernel,
                conv,
                pool_kernel,
                pool_mode,
                pool,
            })
            .collect();
        Cnn2dSpec {
            bands: self.bands(),
            classes: self.classes(),
            patch: 7,
            stages,
            dense,
            learning_rate: 0.01,
        }
    }
}

const SEARCH_WINDOWS: [Window; 4] = [
    Window { padding: Padding::Same, stride: 1 },
    Window { padding: Padding::Same, stride: 2 },
    Window { padding: Padding::Valid, stride: 1 },
    Window { padding: Padding::Valid, stride: 2 },
];

/// Exhaustive search over `{same, valid} x {stride 1, 2}` for every conv and
/// pool layer of a preset. Returns every matching convention, best first:
/// fewest stride-2 layers, then fewest valid layers, then enumeration order
/// (first layer most significant).
pub fn search_convention(preset: Preset) -> Vec<Vec<(Window, Window)>> {
    let layers = preset.recipe().0.len() * 2;
    let target = preset.published_total();
    let mut hits = Vec::new();
    for code in 0..SEARCH_WINDOWS.len().pow(layers as u32) {
        let mut windows = Vec::with_capacity(layers);
        let mut rest = code;
        for _ in 0..layers {
            windows.push(SEARCH_WINDOWS[rest % SEARCH_WINDOWS.len()]);
            rest /= SEARCH_WINDOWS.len();
        }
        windows.reverse();
        let convention: Vec<(Window, Window)> = windows.chunks(2).map(|w| (w[0], w[1])).collect();
        if preset.spec_with(&convention).param_count().ok() == Some(target) {
            hits.push(convention);
        }
    }
    let rank = |c: &Vec<(Window, Window)>| {
        let all = c.iter().flat_map(|&(a, b)| [a, b]);
        let strided = all.clone().filter(|w| w.stride > 1).count();
        let valid = all.filter(|w| w.padding == Padding::Valid).count();
        (strided, valid)
    };
    hits.sort_by_key(rank);
    hits
}

pub fn describe_convention(convention: &[(Window, Window)]) -> String {
    convention
        .iter()
        .enumerate()
        .map(|(i, (c, p))| format!("conv{n}={c} pool{n}={p}", n = i + 1))
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------- audit

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditStatus {
    Exact,
    DocumentedAnomaly,
    Mismatch,
}

#[derive(Clone, Debug)]
pub struct AuditRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct ParamAudit {
    pub arch: String,
    pub rows: Vec<AuditRow>,
    pub total: usize,
    pub expected: Option<usize>,
    pub status: AuditStatus,
}

impl ParamAudit {
    pub fn delta(&self) -> Option<i64> {
        self.expected.map(|e| self.total as i64 - e as i64)
    }

    /// Human-readable per-layer report.
    pub fn report(&self) -> String {
        let mut out = format!("# {}\n", self.arch);
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        out.push_str(&format!("{:<width$}  {:<20} {:>10}\n", "name", "shape", "count"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:<20} {:>10}\n",
                r.name,
                format!("{:?}", r.shape),
                r.count
            ));
        }
        out.push_str(&format!("total {}\n", group_thousands(self.total)));
        if let (Some(e), Some(d)) = (self.expected, self.delta()) {
            out.push_str(&format!("expected {}\ndelta {:+}\n", group_thousands(e), d));
        }
        let status = match self.status {
            AuditStatus::Exact => "exact",
            AuditStatus::DocumentedAnomaly => "documented anomaly",
            AuditStatus::Mismatch => "mismatch",
        };
        out.push_str(&format!("status {status}\n"));
        out
    }
}

pub fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn is_documented_anomaly(arch: &Arch, expected: usize) -> bool {
    match arch {
        Arch::Irx1d(s) => PUBLISHED_IRX_TOTALS
            .iter()
            .any(|p| p.anomalous && p.bands == s.bands && p.classes == s.classes && p.total == expected),
        Arch::Cnn2d(_) => false,
    }
}

/// Lists every parameter tensor and compares the grand total with `expected`.
pub fn audit<T: Real>(model: &Model<T>, expected: Option<usize>) -> ParamAudit {
    let rows: Vec<AuditRow> = model
        .params()
        .iter()
        .map(|p| AuditRow {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            count: p.numel(),
        })
        .collect();
    let total = rows.iter().map(|r| r.count).sum();
    let status = match expected {
        None => AuditStatus::Exact,
        Some(e) if e == total => AuditStatus::Exact,
        Some(e) if is_documented_anomaly(model.arch(), e) => AuditStatus::DocumentedAnomaly,
        Some(_) => AuditStatus::Mismatch,
    };
    ParamAudit {
        arch: model.arch().to_string(),
        rows,
        total,
        expected,
        status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_decomposition_closes() {
        // inception biases + two 64->64 convs, identity, xception, dense head
        let parts = [256, 8_320, 38_784, 42_368, 8_320, 8_256];
        assert_eq!(parts.iter().sum::<usize>(), IRX_BASE_PARAMS);
        let spec = IrxModelSpec::new(1, 2, 1).unwrap();
        assert_eq!(spec.param_count(), param_formula(1, 2));
    }

    #[test]
    fn formula_examples() {
        assert_eq!(param_formula(220, 16), 163_664);
        assert_eq!(param_formula(65, 8), 123_464);
        assert_eq!(param_formula(6, 7), 108_295);
        assert_eq!(param_formula(4, 8), 107_848);
        assert_eq!(param_formula(372, 13), 202_381);
    }

    #[test]
    fn build_rejects_bad_arguments() {
        assert!(build_irx1d::<f32>(4, 8, 6, 0).is_err());
        assert!(build_irx1d::<f32>(4, 1, 7, 0).is_err());
        assert!(build_irx1d::<f32>(0, 8, 7, 0).is_err());
    }

    #[test]
    fn arch_text_round_trip() {
        let archs = [
            Arch::Irx1d(IrxModelSpec::new(65, 8, 7).unwrap()),
            Arch::Cnn2d(Preset::Dais.spec()),
            Arch::Cnn2d(Preset::AvirisNg.spec()),
        ];
        for a in archs {
            let text = a.to_string();
            assert_eq!(text.parse::<Arch>().unwrap(), a, "{text}");
        }
    }

    #[test]
    fn preset_chains() {
        assert_eq!(Preset::AvirisNg.spec().spatial_chain().unwrap(), vec![7, 7, 5, 5, 3]);
        assert_eq!(Preset::EtmPlus.spec().flatten_width().unwrap(), 4_900);
        assert_eq!(Preset::Sentinel2.spec().flatten_width().unwrap(), 2_400);
        assert_eq!(Preset::Dais.spec().flatten_width().unwrap(), 400);
    }

    #[test]
    fn underflowing_chain_names_layer() {
        let mut spec = Preset::AvirisNg.spec();
        spec.stages[1].conv = Window::VALID;
        spec.stages[0].conv = Window::VALID;
        spec.stages[1].pool = Window::VALID;
        // 7 -> 3 -> 1 -> underflow at conv2 (3x3 on 1x1)
        match spec.spatial_chain() {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "conv2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn thousands_grouping() {
        assert_eq!(group_thousands(163_664), "163,664");
        assert_eq!(group_thousands(2_593_713), "2,593,713");
        assert_eq!(group_thousands(12), "12");
    }
}
