//! Gaussian-process Bayesian search over the 2-D CNN hyperparameter lattice.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::PoolMode;
use crate::zoo::{Cnn2dSpec, ConvStage, Window};

/// GP observation noise on standardised objectives.
pub const GP_NOISE: f64 = 1e-6;
/// Random lattice points scored by expected improvement per suggestion.
pub const EI_CANDIDATES: usize = 512;
/// Trials drawn at random before the surrogate takes over.
pub const INITIAL_RANDOM_TRIALS: usize = 5;
/// Length scales tried when fitting the surrogate.
pub const LENGTH_SCALES: [f64; 12] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0];

/// A discrete search space the optimiser can sample, embed and measure.
pub trait Lattice {
    type Point: Clone + PartialEq + fmt::Debug;

    /// Random feasible point; each call consumes randomness from `rng` only.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Self::Point;
    /// Fixed-length embedding with every coordinate in `[0, 1]`.
    fn encode(&self, p: &Self::Point) -> Vec<f64>;
    /// Number of single-coordinate lattice steps between two points.
    fn distance(&self, a: &Self::Point, b: &Self::Point) -> usize;
    /// Single-line, tab-free text form.
    fn render(&self, p: &Self::Point) -> String;
    fn parse(&self, s: &str) -> Result<Self::Point>;
}

// ------------------------------------------------------------ search space

/// One sampled 2-D CNN configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct HpoConfig {
    pub stages: Vec<(usize, usize, usize, PoolMode)>,
    pub dense: Vec<usize>,
    pub learning_rate: f64,
}

/// Conv depth, filters, kernels, pooling, dense head and learning rate,
/// each a finite list of choices. Convolutions and pools use fixed
/// windows; configurations whose spatial chain collapses are infeasible.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub bands: usize,
    pub classes: usize,
    pub patch: usize,
    pub conv_layers: (usize, usize),
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pool_kernels: Vec<usize>,
    pub pool_modes: Vec<PoolMode>,
    pub learning_rates: Vec<f64>,
    pub dense_layers: (usize, usize),
    pub dense_units: Vec<usize>,
    pub conv_window: Window,
    pub pool_window: Window,
}

impl SearchSpace {
    /// The published ranges: 2-5 conv layers of 100-600 filters, 3/5
    /// kernels, 2/3 max or average pooling, stride 1, learning rate 0.01 or
    /// 0.001, 2-3 dense layers of 50-200 units.
    pub fn standard(bands: usize, classes: usize, patch: usize) -> Self {
        SearchSpace {
            bands,
            classes,
            patch,
            conv_layers: (2, 5),
            filters: (1..=6).map(|i| i * 100).collect(),
            kernels: vec![3, 5],
            pool_kernels: vec![2, 3],
            pool_modes: vec![PoolMode::Max, PoolMode::Avg],
            learning_rates: vec![0.01, 0.001],
            dense_layers: (2, 3),
            dense_units: vec![50, 100, 150, 200],
            conv_window: Window::SAME,
            pool_window: Window::VALID,
        }
    }

    fn layer_choices(&self) -> u128 {
        (self.filters.len() * self.kernels.len() * self.pool_kernels.len() * self.pool_modes.len()) as u128
    }

    /// Size of the full lattice, feasible or not.
    pub fn cardinality(&self) -> u128 {
        let conv: u128 = (self.conv_layers.0..=self.conv_layers.1)
            .map(|l| self.layer_choices().pow(l as u32))
            .sum();
        let dense: u128 = (self.dense_layers.0..=self.dense_layers.1)
            .map(|d| (self.dense_units.len() as u128).pow(d as u32))
            .sum();
        conv * dense * self.learning_rates.len() as u128
    }

    pub fn to_spec(&self, c: &HpoConfig) -> Cnn2dSpec {
        Cnn2dSpec {
            bands: self.bands,
            classes: self.classes,
            patch: self.patch,
            stages: c
                .stages
                .iter()
                .map(|&(filters, kernel, pool_kernel, pool_mode)| ConvStage {
                    filters,
                    kernel,
                    conv: self.conv_window,
                    pool_kernel,
                    pool_mode,
                    pool: self.pool_window,
                })
                .collect(),
            dense: c.dense.clone(),
            learning_rate: c.learning_rate,
        }
    }

    pub fn feasible(&self, c: &HpoConfig) -> bool {
        self.to_spec(c).spatial_chain().is_ok()
    }

    pub fn contains(&self, c: &HpoConfig) -> bool {
        let (lo, hi) = self.conv_layers;
        let (dlo, dhi) = self.dense_layers;
        (lo..=hi).contains(&c.stages.len())
            && c.stages.iter().all(|(f, k, pk, m)| {
                self.filters.contains(f)
                    && self.kernels.contains(k)
                    && self.pool_kernels.contains(pk)
                    && self.pool_modes.contains(m)
            })
            && (dlo..=dhi).contains(&c.dense.len())
            && c.dense.iter().all(|u| self.dense_units.contains(u))
            && self.learning_rates.contains(&c.learning_rate)
    }

    /// Draws every coordinate uniformly from its own choices, depth first,
    /// ignoring feasibility.
    pub fn sample_unchecked(&self, rng: &mut ChaCha8Rng) -> HpoConfig {
        let depth = rng.random_range(self.conv_layers.0..=self.conv_layers.1);
        let stages = (0..depth)
            .map(|_| {
                (
                    self.filters[rng.random_range(0..self.filters.len())],
                    self.kernels[rng.random_range(0..self.kernels.len())],
                    self.pool_kernels[rng.random_range(0..self.pool_kernels.len())],
                    self.pool_modes[rng.random_range(0..self.pool_modes.len())],
                )
            })
            .collect();
        let dense_depth = rng.random_range(self.dense_layers.0..=self.dense_layers.1);
        let dense = (0..dense_depth)
            .map(|_| self.dense_units[rng.random_range(0..self.dense_units.len())])
            .collect();
        HpoConfig {
            stages,
            dense,
            learning_rate: self.learning_rates[rng.random_range(0..self.learning_rates.len())],
        }
    }

    fn index_of<V: PartialEq>(list: &[V], v: &V) -> usize {
        list.iter().position(|x| x == v).unwrap_or(0)
    }

    fn scaled<V: PartialEq>(list: &[V], v: &V) -> f64 {
        if list.len() < 2 {
            0.0
        } else {
            Self::index_of(list, v) as f64 / (list.len() - 1) as f64
        }
    }
}

/// Samples one configuration; infeasible draws are logged and redrawn.
pub fn sample(space: &SearchSpace, seed: u64) -> HpoConfig {
    space.sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

impl Lattice for SearchSpace {
    type Point = HpoConfig;

    fn sample(&self, rng: &mut ChaCha8Rng) -> HpoConfig {
        loop {
            let c = self.sample_unchecked(rng);
            if self.feasible(&c) {
                return c;
            }
            log::debug!("rejected infeasible configuration {}", self.render(&c));
        }
    }

    fn encode(&self, c: &HpoConfig) -> Vec<f64> {
        let mut v = Vec::new();
        let (lo, hi) = self.conv_layers;
        v.push(if hi > lo { (c.stages.len() - lo) as f64 / (hi - lo) as f64 } else { 0.0 });
        for i in 0..hi {
            match c.stages.get(i) {
                Some((f, k, pk, m)) => {
                    v.push(1.0);
                    v.push(Self::scaled(&self.filters, f));
                    v.push(Self::scaled(&self.kernels, k));
                    v.push(Self::scaled(&self.pool_kernels, pk));
                    v.extend(self.pool_modes.iter().map(|x| f64::from(u8::from(x == m))));
                }
                None => v.extend(std::iter::repeat_n(0.0, 4 + self.pool_modes.len())),
            }
        }
        let (dlo, dhi) = self.dense_layers;
        v.push(if dhi > dlo { (c.dense.len() - dlo) as f64 / (dhi - dlo) as f64 } else { 0.0 });
        for i in 0..dhi {
            match c.dense.get(i) {
                Some(u) => {
                    v.push(1.0);
                    v.push(Self::scaled(&self.dense_units, u));
                }
                None => v.extend([0.0, 0.0]),
            }
        }
        v.extend(
            self.learning_rates
                .iter()
                .map(|&x| f64::from(u8::from(x == c.learning_rate))),
        );
        v
    }

    fn distance(&self, a: &HpoConfig, b: &HpoConfig) -> usize {
        let step = |l: usize, r: usize| l.abs_diff(r);
        let mut d = a.stages.len().abs_diff(b.stages.len()) + a.dense.len().abs_diff(b.dense.len());
        for (x, y) in a.stages.iter().zip(&b.stages) {
            d += step(Self::index_of(&self.filters, &x.0), Self::index_of(&self.filters, &y.0));
            d += step(Self::index_of(&self.kernels, &x.1), Self::index_of(&self.kernels, &y.1));
            d += step(Self::index_of(&self.pool_kernels, &x.2), Self::index_of(&self.pool_kernels, &y.2));
            d += usize::from(x.3 != y.3);
        }
        for (x, y) in a.dense.iter().zip(&b.dense) {
            d += step(Self::index_of(&self.dense_units, x), Self::index_of(&self.dense_units, y));
        }
        d + usize::from(a.learning_rate != b.learning_rate)
    }

    fn render(&self, c: &HpoConfig) -> String {
        let stages: Vec<String> = c
            .stages
            .iter()
            .map(|&(f, k, pk, m)| {
                let mode = match m {
                    PoolMode::Max => "max",
                    PoolMode::Avg => "avg",
                };
                format!("{f}x{k}/{mode}{pk}")
            })
            .collect();
        let dense: Vec<String> = c.dense.iter().map(usize::to_string).collect();
        format!("conv={};dense={};lr={}", stages.join(","), dense.join(","), c.learning_rate)
    }

    fn parse(&self, s: &str) -> Result<HpoConfig> {
        let bad = || Error::Format(format!("bad configuration {s:?}"));
        let mut stages = None;
        let mut dense = None;
        let mut lr = None;
        for part in s.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            match k {
                "conv" => {
                    let mut out = Vec::new();
                    for item in v.split(',').filter(|x| !x.is_empty()) {
                        let (conv, pool) = item.split_once('/').ok_or_else(bad)?;
                        let (f, k) = conv.split_once('x').ok_or_else(bad)?;
                        let (mode, pk) = if let Some(r) = pool.strip_prefix("max") {
                            (PoolMode::Max, r)
                        } else if let Some(r) = pool.strip_prefix("avg") {
                            (PoolMode::Avg, r)
                        } else {
                            return Err(bad());
                        };
                        out.push((
                            f.parse().map_err(|_| bad())?,
                            k.parse().map_err(|_| bad())?,
                            pk.parse().map_err(|_| bad())?,
                            mode,
                        ));
                    }
                    stages = Some(out);
                }
                "dense" => {
                    dense = Some(
                        v.split(',')
                            .filter(|x| !x.is_empty())
                            .map(|u| u.parse().map_err(|_| bad()))
                            .collect::<Result<Vec<usize>>>()?,
                    )
                }
                "lr" => lr = Some(v.parse::<f64>().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        Ok(HpoConfig {
            stages: stages.ok_or_else(bad)?,
            dense: dense.ok_or_else(bad)?,
            learning_rate: lr.ok_or_else(bad)?,
        })
    }
}

// ------------------------------------------------------------ surrogate

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lower-triangular factor of a symmetric positive-definite matrix.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * x[k]).sum();
        x[i] = (b[i] - s) / l[i * n + i];
    }
    x
}

fn solve_upper_t(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (b[i] - s) / l[i * n + i];
    }
    x
}

/// Zero-mean GP with a unit-amplitude squared-exponential kernel, fitted
/// to standardised targets.
#[derive(Clone, Debug)]
pub struct Gp {
    pub length_scale: f64,
    pub noise: f64,
    x: Vec<Vec<f64>>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    log_likelihood: f64,
}

impl Gp {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        (-sq_dist(a, b) / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    pub fn fit(x: &[Vec<f64>], y: &[f64], length_scale: f64, noise: f64) -> Result<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(Error::Argument("GP needs matching, non-empty inputs".into()));
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n as f64;
        let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();
        let mut gp = Gp {
            length_scale,
            noise,
            x: x.to_vec(),
            chol: Vec::new(),
            alpha: Vec::new(),
            y_mean,
            y_std,
            log_likelihood: f64::NEG_INFINITY,
        };
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = gp.kernel(&x[i], &x[j]);
            }
        }
        let mut jitter = 0.0;
        let chol = loop {
            let mut kk = k.clone();
            for i in 0..n {
                kk[i * n + i] += noise + jitter;
            }
            if let Some(l) = cholesky(&kk, n) {
                break l;
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
            if jitter > 1e-2 {
                return Err(Error::Numeric("GP kernel matrix is not positive definite".into()));
            }
        };
        let alpha = solve_upper_t(&chol, n, &solve_lower(&chol, n, &ys));
        let fit: f64 = ys.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let logdet: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum();
        gp.log_likelihood = -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        gp.chol = chol;
        gp.alpha = alpha;
        Ok(gp)
    }

    /// Fits every length scale in the grid and keeps the most likely.
    pub fn fit_best(x: &[Vec<f64>], y: &[f64], noise: f64) -> Result<Self> {
        let mut best: Option<Gp> = None;
        for &ls in &LENGTH_SCALES {
            let gp = Gp::fit(x, y, ls, noise)?;
            if best.as_ref().is_none_or(|b| gp.log_likelihood > b.log_likelihood) {
                best = Some(gp);
            }
        }
        Ok(best.expect("non-empty grid"))
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Posterior mean and standard deviation in objective units.
    pub fn predict(&self, p: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let ks: Vec<f64> = self.x.iter().map(|xi| self.kernel(xi, p)).collect();
        let mean: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = solve_lower(&self.chol, n, &ks);
        let var = (1.0 - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }

    /// Expected improvement over `best` for maximisation.
    pub fn expected_improvement(&self, p: &[f64], best: f64) -> f64 {
        let (mu, sigma) = self.predict(p);
        expected_improvement(mu, sigma, best)
    }
}

pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let imp = mu - best;
    if sigma <= 1e-12 {
        return imp.max(0.0);
    }
    let z = imp / sigma;
    let cdf = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (imp * cdf + sigma * pdf).max(0.0)
}

/// Next point to evaluate given completed `(point, objective)` pairs.
/// Empty or flat histories fall back to random sampling.
pub fn suggest<L: Lattice>(lattice: &L, history: &[(L::Point, f64)], rng: &mut ChaCha8Rng) -> Result<L::Point> {
    if history.is_empty() {
        return Ok(lattice.sample(rng));
    }
    let ys: Vec<f64> = history.iter().map(|h| h.1).collect();
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 {
        log::warn!("all {} objectives are identical; sampling at random", ys.len());
        return Ok(lattice.sample(rng));
    }
    let xs: Vec<Vec<f64>> = history.iter().map(|h| lattice.encode(&h.0)).collect();
    let gp = Gp::fit_best(&xs, &ys, GP_NOISE)?;
    let mut best_point = None;
    let mut best_ei = f64::NEG_INFINITY;
    for _ in 0..EI_CANDIDATES {
        let c = lattice.sample(rng);
        let ei = gp.expected_improvement(&lattice.encode(&c), hi);
        if ei > best_ei {
            best_ei = ei;
            best_point = Some(c);
        }
    }
    log::debug!("suggestion EI {best_ei:.3e}, length scale {}", gp.length_scale);
    Ok(best_point.expect("candidates drawn"))
}

// ------------------------------------------------------------ study

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrialStatus {
    Complete,
    Failed,
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialStatus::Complete => "complete",
            TrialStatus::Failed => "failed",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial<P> {
    pub id: usize,
    pub config: P,
    pub objective: Option<f64>,
    pub status: TrialStatus,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRecord<P> {
    pub seed: u64,
    pub trials: Vec<Trial<P>>,
}

impl<P: Clone> StudyRecord<P> {
    pub fn completed(&self) -> Vec<(P, f64)> {
        self.trials
            .iter()
            .filter_map(|t| t.objective.map(|o| (t.config.clone(), o)))
            .collect()
    }

    /// Highest objective, earliest trial on ties.
    pub fn best(&self) -> Option<&Trial<P>> {
        let mut best: Option<&Trial<P>> = None;
        for t in &self.trials {
            if let Some(o) = t.objective {
                if best.is_none_or(|b| o > b.objective.unwrap()) {
                    best = Some(t);
                }
            }
        }
        best
    }

    /// Best objective seen after each trial.
    pub fn best_so_far(&self) -> Vec<Option<f64>> {
        let mut cur: Option<f64> = None;
        self.trials
            .iter()
            .map(|t| {
                if let Some(o) = t.objective {
                    cur = Some(cur.map_or(o, |c| c.max(o)));
                }
                cur
            })
            .collect()
    }
}

const RECORD_HEADER: &str = "id\tconfig\tobjective\tstatus\tseed";

fn trial_seed(seed: u64, id: usize) -> u64 {
    crate::train::epoch_seed(seed ^ 0xA076_1D64_78BD_642F, id)
}

pub fn render_trial<L: Lattice>(lattice: &L, t: &Trial<L::Point>) -> String {
    let obj = t.objective.map_or_else(|| "nan".to_string(), |o| format!("{o:?}"));
    format!("{}\t{}\t{}\t{}\t{}", t.id, lattice.render(&t.config), obj, t.status, t.seed)
}

pub fn render_record<L: Lattice>(lattice: &L, record: &StudyRecord<L::Point>) -> String {
    let mut out = format!("# study seed={}\n{RECORD_HEADER}\n", record.seed);
    for t in &record.trials {
        out.push_str(&render_trial(lattice, t));
        out.push('\n');
    }
    out
}

pub fn parse_record<L: Lattice>(lattice: &L, text: &str) -> Result<StudyRecord<L::Point>> {
    let mut lines = text.lines();
    let seed = lines
        .next()
        .and_then(|l| l.strip_prefix("# study seed="))
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format("study record lacks its seed line".into()))?;
    if lines.next() != Some(RECORD_HEADER) {
        return Err(Error::Format("study record lacks its column header".into()));
    }
    let mut trials = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let bad = || Error::Format(format!("bad study record line {line:?}"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let id: usize = f[0].parse().map_err(|_| bad())?;
        if id != trials.len() {
            return Err(Error::Format(format!("trial {id} out of sequence")));
        }
        let status = match f[3] {
            "complete" => TrialStatus::Complete,
            "failed" => TrialStatus::Failed,
            _ => return Err(bad()),
        };
        let objective = match status {
            TrialStatus::Complete => Some(f[2].parse::<f64>().map_err(|_| bad())?),
            TrialStatus::Failed => None,
        };
        trials.push(Trial {
            id,
            config: lattice.parse(f[1])?,
            objective,
            status,
            seed: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(StudyRecord { seed, trials })
}

/// Runs trials until the record holds `trials` entries. With a record path,
/// earlier trials are read back from it and every new trial is appended as
/// soon as it finishes, so an interrupted study resumes where it stopped.
///
/// The point proposed for trial `i` depends only on the study seed and the
/// results of trials `0..i`.
pub fn run_study<L: Lattice>(
    lattice: &L,
    mut objective: impl FnMut(&L::Point, u64) -> Result<f64>,
    trials: usize,
    seed: u64,
    record_path: Option<&Path>,
) -> Result<StudyRecord<L::Point>> {
    let mut record = StudyRecord { seed, trials: Vec::new() };
    let mut file = None;
    if let Some(path) = record_path {
        if path.exists() {
            record = parse_record(lattice, &fs::read_to_string(path)?)?;
            if record.seed != seed {
                return Err(Error::Argument(format!(
                    "record was written with seed {}, not {seed}",
                    record.seed
                )));
            }
            file = Some(fs::OpenOptions::new().append(true).open(path)?);
        } else {
            let mut f = fs::File::create(path)?;
            write!(f, "# study seed={seed}\n{RECORD_HEADER}\n")?;
            f.flush()?;
            file = Some(f);
        }
    }
    while record.trials.len() < trials {
        let id = record.trials.len();
        let tseed = trial_seed(seed, id);
        let mut rng = ChaCha8Rng::seed_from_u64(tseed);
        let config = if id < INITIAL_RANDOM_TRIALS {
            lattice.sample(&mut rng)
        } else {
            suggest(lattice, &record.completed(), &mut rng)?
        };
        let (objective, status) = match objective(&config, tseed) {
            Ok(v) if v.is_finite() => (Some(v), TrialStatus::Complete),
            Ok(v) => {
                log::warn!("trial {id} returned non-finite objective {v}");
                (None, TrialStatus::Failed)
            }
            Err(e) => {
                log::warn!("trial {id} failed: {e}");
                (None, TrialStatus::Failed)
            }
        };
        let t = Trial {
            id,
            config,
            objective,
            status,
            seed: tseed,
        };
        log::info!("trial {}", render_trial(lattice, &t));
        if let Some(f) = file.as_mut() {
            writeln!(f, "{}", render_trial(lattice, &t))?;
            f.flush()?;
        }
        record.trials.push(t);
    }
    Ok(record)
}

// ------------------------------------------------------------ test objective

/// Smooth accuracy-like score over the search space with a known best
/// configuration, for exercising the optimiser without training anything.
///
/// The maximum, [`SyntheticObjective::PEAK`], is reached by three
/// convolution layers of 400 filters with 3x3 kernels and max pooling, two
/// dense layers of 150 units, and learning rate 0.01.
#[derive(Clone, Debug)]
pub struct SyntheticObjective;

impl SyntheticObjective {
    pub const PEAK: f64 = 0.97;

    pub fn optimum(space: &SearchSpace) -> HpoConfig {
        let pool = space.pool_kernels[0];
        HpoConfig {
            stages: vec![(400, 3, pool, PoolMode::Max); 3],
            dense: vec![150, 150],
            learning_rate: 0.01,
        }
    }

    pub fn score(c: &HpoConfig) -> f64 {
        let l = c.stages.len() as f64;
        let mut penalty = 0.03 * (l - 3.0).powi(2);
        if c.learning_rate != 0.01 {
            penalty += 0.08;
        }
        for &(f, k, _, m) in &c.stages {
            let df = (f as f64 - 400.0) / 500.0;
            penalty += (0.08 * df * df + 0.02 * f64::from(u8::from(k != 3)) + 0.012 * f64::from(u8::from(m != PoolMode::Max))) / l;
        }
        let d = c.dense.len() as f64;
        penalty += 0.02 * (d - 2.0);
        for &u in &c.dense {
            let du = (u as f64 - 150.0) / 150.0;
            penalty += 0.04 * du * du / d;
        }
        Self::PEAK - penalty
    }
}
