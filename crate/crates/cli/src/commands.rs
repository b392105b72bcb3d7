use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, ValueEnum};
use irx_core::checkpoint::{self, Header};
use irx_core::eval::{self, confusion, ConfusionMatrix, Metrics};
use irx_core::explog::ExperimentLog;
use irx_core::geodata::{
    extract_patches, load_cube, normalize_apply, normalize_fit, open_cube, open_labels, parse_band_list,
    parse_palette, raw_path_for, read_split, render_palette, save_cube, save_labels_pgm, stratified_split,
    synth_scene, write_split, BandStats, LabelRaster, Palette, RasterCube, Split, SynthConfig,
};
use irx_core::hpo::{self, HpoConfig, Lattice, SearchSpace, SyntheticObjective};
use irx_core::layers::{BN_EPS, BN_MOMENTUM};
use irx_core::train::{train_with, TrainConfig, TrainHistory, ADAGRAD_EPS};
use irx_core::zoo::{
    self, audit, describe_convention, group_thousands, Arch, AuditStatus, IrxModelSpec, Model, Preset,
    PUBLISHED_IRX_TOTALS,
};
use irx_core::{Precision, Real};

use crate::config::Usage;
use crate::{EXIT_ANOMALY, EXIT_FAILURE, EXIT_OK};

/// The resolved invocation, copied into every experiment log.
pub struct Run {
    pub command: String,
    pub args: Vec<(String, String)>,
}

impl Run {
    fn log(&self) -> ExperimentLog {
        let mut log = ExperimentLog::new();
        log.set("command", &self.command);
        for (k, v) in &self.args {
            log.set(k, v);
        }
        log.set("threads", rayon::current_num_threads());
        log.set("meta.version", env!("CARGO_PKG_VERSION"));
        log.set("meta.optimizer", "adagrad");
        log.set("meta.adagrad_eps", ADAGRAD_EPS);
        log.set("meta.init", "glorot-uniform weights, zero biases, bn gamma 1 beta 0");
        log.set("meta.bn_eps", BN_EPS);
        log.set("meta.bn_momentum", BN_MOMENTUM);
        log.set("meta.normalization", "per-band z-score fitted on training pixels");
        log.set("meta.patch_padding", "reflect-101 mirror at image edges");
        log.set("meta.loss", "softmax cross-entropy");
        log.set("meta.scoring", "test pixels only, background excluded");
        log
    }
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    checkpoint::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_log(path: &Path, log: &ExperimentLog) -> anyhow::Result<()> {
    write(path, log.render().as_bytes())?;
    log::info!("experiment log {}", path.display());
    Ok(())
}

/// `stem` + `suffix` in the same directory: `out/scene` + `_gt.pgm`.
fn sibling(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

// ---------------------------------------------------------------- data

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Cube header (.hdr) or raw file.
    #[arg(long)]
    pub cube: PathBuf,
    /// Ground truth: .pgm or single-band 8-bit ENVI raster, 0 = background.
    #[arg(long)]
    pub labels: PathBuf,
    /// One-based inclusive band ranges to drop, such as "1-5,196-207".
    #[arg(long, default_value = "")]
    pub drop_bands: String,
}

fn load_data(d: &DataArgs) -> anyhow::Result<(RasterCube, LabelRaster)> {
    let drop = parse_band_list(&d.drop_bands)?;
    let cube = open_cube(&d.cube, &drop).with_context(|| format!("reading cube {}", d.cube.display()))?;
    let gt = open_labels(&d.labels).with_context(|| format!("reading labels {}", d.labels.display()))?;
    gt.check_matches(&cube)?;
    if gt.classes() < 2 {
        bail!("{} holds fewer than two classes", d.labels.display());
    }
    Ok((cube, gt))
}

fn dataset_name(d: &DataArgs) -> String {
    d.cube
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// A split applied to a cube normalised with its training pixels.
struct Prepared {
    cube: RasterCube,
    gt: LabelRaster,
    split: Split,
    stats: BandStats,
}

fn prepare(cube: &RasterCube, gt: &LabelRaster, split: Split) -> anyhow::Result<Prepared> {
    if (split.rows, split.cols) != (gt.rows, gt.cols) {
        bail!(
            "split is for a {}x{} raster, labels are {}x{}",
            split.rows,
            split.cols,
            gt.rows,
            gt.cols
        );
    }
    let stats = normalize_fit(cube, &split.train_pixels())?;
    Ok(Prepared {
        cube: normalize_apply(cube, &stats)?,
        gt: gt.clone(),
        split,
        stats,
    })
}

// ---------------------------------------------------------------- models

/// `irx1d`, a 2-D CNN preset name (optionally `cnn2d-` prefixed) or a full
/// architecture string, fitted to the data shape.
fn resolve_arch(model: &str, bands: usize, classes: usize, patch: usize) -> anyhow::Result<Arch> {
    if model == "irx1d" {
        return Ok(Arch::Irx1d(IrxModelSpec::new(bands, classes, patch)?));
    }
    if let Some(p) = Preset::from_name(model.strip_prefix("cnn2d-").unwrap_or(model)) {
        let mut spec = p.spec();
        spec.bands = bands;
        spec.classes = classes;
        spec.patch = patch;
        spec.param_count()
            .with_context(|| format!("preset {} does not fit patch {patch}", p.name()))?;
        return Ok(Arch::Cnn2d(spec));
    }
    let arch: Arch = model
        .parse()
        .map_err(|e| usage(format!("--model {model:?}: expected irx1d, a preset or an architecture ({e})")))?;
    if (arch.bands(), arch.classes(), arch.patch()) != (bands, classes, patch) {
        bail!(
            "architecture is for {} bands, {} classes, patch {}; data needs {bands}, {classes}, {patch}",
            arch.bands(),
            arch.classes(),
            arch.patch()
        );
    }
    Ok(arch)
}

struct Fitted<T> {
    model: Model<T>,
    history: TrainHistory,
}

fn fit<T: Real>(arch: &Arch, data: &Prepared, cfg: &TrainConfig) -> anyhow::Result<Fitted<T>> {
    let mut model = zoo::build::<T>(arch, cfg.seed)?;
    let train_px = data.split.train_pixels();
    let patches = extract_patches(&data.cube, &data.gt, &train_px, arch.patch())?;
    log::info!(
        "training {} ({} parameters) on {} patches",
        arch.name(),
        group_thousands(model.param_count()),
        patches.len()
    );
    let history = train_with(&mut model, &patches, cfg, |e| {
        log::info!(
            "epoch {} loss {:.5} accuracy {:.4} ({:.1}s)",
            e.epoch,
            e.loss,
            e.accuracy,
            e.seconds
        )
    })?;
    Ok(Fitted { model, history })
}

fn score<T: Real>(model: &Model<T>, data: &Prepared, batch: usize) -> anyhow::Result<ConfusionMatrix> {
    let test = data.split.test_pixels();
    if test.is_empty() {
        bail!("the split leaves no test pixels");
    }
    let predicted = eval::classify_pixels(model, &data.cube, &test, model.arch().patch(), batch)?;
    let reference: Vec<u8> = test.iter().map(|&p| data.gt.labels[p]).collect();
    Ok(confusion(&reference, &predicted, model.arch().classes())?)
}

#[derive(Args, Debug, Clone)]
pub struct TrainSettings {
    /// irx1d, a 2-D CNN preset (aviris-ng, dais, etm+, sentinel-2) or an architecture string.
    #[arg(long, default_value = "irx1d")]
    pub model: String,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Seeds weight initialisation, shuffling and, unless --split-seed is given, the split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: PrecisionArg,
}

impl TrainSettings {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            seed: self.seed,
            precision: self.precision.into(),
        }
    }

    fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }
}

// ---------------------------------------------------------------- convert

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// ENVI header.
    #[arg(long)]
    pub header: PathBuf,
    /// Raw data file; found next to the header when omitted.
    #[arg(long)]
    pub raw: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub drop_bands: String,
    /// Output stem; writes STEM.hdr and STEM.raw.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn convert(a: &ConvertArgs, run: &Run) -> anyhow::Result<u8> {
    let raw = match &a.raw {
        Some(r) => r.clone(),
        None => raw_path_for(&a.header)?,
    };
    let drop = parse_band_list(&a.drop_bands)?;
    let cube = load_cube(&a.header, &raw, &drop).with_context(|| format!("reading {}", a.header.display()))?;
    let (hdr, rawp) = save_cube(&cube, &a.out)?;
    println!(
        "{} x {} x {} bands ({} dropped) -> {}, {}",
        cube.rows,
        cube.cols,
        cube.bands,
        drop.len(),
        hdr.display(),
        rawp.display()
    );
    write_log(&sibling(&a.out, ".log"), &run.log())?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub bands: usize,
    #[arg(long, default_value_t = 128)]
    pub rows: usize,
    #[arg(long, default_value_t = 128)]
    pub cols: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise relative to the closest pair of class means; 1.0 is moderate, 0 noise-free.
    #[arg(long, default_value_t = 1.0)]
    pub difficulty: f64,
    #[arg(long, default_value_t = 2)]
    pub sites_per_class: usize,
    /// Output stem; writes STEM.hdr, STEM.raw, STEM_gt.pgm and STEM_palette.csv.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth(a: &SynthArgs, run: &Run) -> anyhow::Result<u8> {
    let cfg = SynthConfig {
        sites_per_class: a.sites_per_class,
        ..SynthConfig::new(a.classes, a.bands, a.rows, a.cols, a.seed, a.difficulty)
    };
    let (cube, gt) = synth_scene(&cfg)?;
    save_cube(&cube, &a.out)?;
    save_labels_pgm(&gt, &sibling(&a.out, "_gt.pgm"))?;
    write(
        &sibling(&a.out, "_palette.csv"),
        render_palette(&Palette::generated(a.classes)).as_bytes(),
    )?;
    println!("{} x {} scene, {} bands, {} classes -> {}", a.rows, a.cols, a.bands, a.classes, a.out.display());
    write_log(&sibling(&a.out, ".log"), &run.log())?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------- split

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Training share of each class, in (0, 1).
    #[arg(long)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn split(a: &SplitArgs, run: &Run) -> anyhow::Result<u8> {
    let gt = open_labels(&a.labels).with_context(|| format!("reading labels {}", a.labels.display()))?;
    let s = stratified_split(&gt, a.fraction, a.seed)?;
    write(&a.out, write_split(&s).as_bytes())?;
    println!(
        "{} training, {} test pixels -> {}",
        s.train_pixels().len(),
        s.test_pixels().len(),
        a.out.display()
    );
    write_log(&sibling(&a.out, ".log"), &run.log())?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Split file from `irx split`; otherwise a split is drawn with --fraction.
    #[arg(long, conflicts_with = "fraction")]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Odd patch side length.
    #[arg(long, default_value_t = 7)]
    pub patch: usize,
    #[command(flatten)]
    pub settings: TrainSettings,
    /// Output directory for model.irx, history.csv, split.csv and run.log.
    #[arg(long)]
    pub out: PathBuf,
}

fn train_split(a: &TrainArgs, gt: &LabelRaster) -> anyhow::Result<Split> {
    match (&a.split, a.fraction) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading split {}", path.display()))?;
            Ok(read_split(&text)?)
        }
        (None, Some(f)) => Ok(stratified_split(gt, f, a.settings.split_seed())?),
        (None, None) => Err(usage("train needs --split FILE or --fraction F")),
    }
}

fn run_header(data: &Prepared, s: &TrainSettings) -> Header {
    let mut h = Header::default();
    h.set("normalization", data.stats.render());
    h.set("split_fraction", data.split.fraction);
    h.set("split_seed", data.split.seed);
    h.set("seed", s.seed);
    h.set("epochs", s.epochs);
    h.set("learning_rate", s.lr);
    h.set("batch", s.batch);
    h.set("adagrad_eps", ADAGRAD_EPS);
    h.set("init", "glorot-uniform");
    h
}

pub fn train(a: &TrainArgs, run: &Run) -> anyhow::Result<u8> {
    let (cube, gt) = load_data(&a.data)?;
    let data = prepare(&cube, &gt, train_split(a, &gt)?)?;
    let arch = resolve_arch(&a.settings.model, cube.bands, gt.classes(), a.patch)?;
    let cfg = a.settings.config();
    cfg.validate()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let header = run_header(&data, &a.settings);
    let history = match a.settings.precision {
        PrecisionArg::F32 => {
            let f = fit::<f32>(&arch, &data, &cfg)?;
            write(&a.out.join("model.irx"), &checkpoint::encode(&f.model, &header))?;
            f.history
        }
        PrecisionArg::F64 => {
            let f = fit::<f64>(&arch, &data, &cfg)?;
            write(&a.out.join("model.irx"), &checkpoint::encode(&f.model, &header))?;
            f.history
        }
    };
    write(&a.out.join("history.csv"), history.to_csv().as_bytes())?;
    write(&a.out.join("split.csv"), write_split(&data.split).as_bytes())?;
    let mut log = run.log();
    log.set("meta.arch", &arch);
    log.set("meta.train_pixels", data.split.train_pixels().len());
    log.set("meta.test_pixels", data.split.test_pixels().len());
    if let Some(last) = history.last() {
        log.set("meta.final_loss", last.loss);
        log.set("meta.final_train_accuracy", last.accuracy);
    }
    write_log(&a.out.join("run.log"), &log)?;
    println!("checkpoint {}", a.out.join("model.irx").display());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------- params

#[derive(Args, Debug)]
pub struct ParamsArgs {
    /// irx1d, a 2-D CNN preset or an architecture string.
    #[arg(long, default_value = "irx1d")]
    pub model: String,
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub patch: usize,
    /// Total to compare against; published totals are used when known.
    #[arg(long)]
    pub expected: Option<usize>,
    /// For presets: search padding and stride conventions that reproduce the expected total.
    #[arg(long)]
    pub search: bool,
}

pub fn params(a: &ParamsArgs) -> anyhow::Result<u8> {
    let preset = Preset::from_name(a.model.strip_prefix("cnn2d-").unwrap_or(&a.model));
    let (arch, expected) = match preset {
        Some(p) if a.model != "irx1d" => {
            let bands = a.bands.unwrap_or(p.bands());
            let classes = a.classes.unwrap_or(p.classes());
            let expected = a.expected.or(Some(p.published_total()));
            let convention = if a.search {
                let target = expected.unwrap_or(p.published_total());
                if target != p.published_total() || (bands, classes) != (p.bands(), p.classes()) {
                    return Err(usage("--search works on the published preset shape and total"));
                }
                let hits = zoo::search_convention(p);
                println!("conventions reproducing {}: {}", group_thousands(target), hits.len());
                for (i, h) in hits.iter().enumerate().take(10) {
                    println!("  {}. {}", i + 1, describe_convention(h));
                }
                match hits.into_iter().next() {
                    Some(h) => h,
                    None => {
                        println!("no convention reproduces {}", group_thousands(target));
                        return Ok(EXIT_FAILURE);
                    }
                }
            } else {
                p.convention()
            };
            println!("convention {}", describe_convention(&convention));
            let mut spec = p.spec_with(&convention);
            spec.bands = bands;
            spec.classes = classes;
            spec.patch = a.patch;
            (Arch::Cnn2d(spec), expected)
        }
        _ => {
            let arch = if a.model == "irx1d" {
                let need = |v: Option<usize>, flag: &str| v.ok_or_else(|| usage(format!("irx1d needs --{flag}")));
                Arch::Irx1d(IrxModelSpec::new(need(a.bands, "bands")?, need(a.classes, "classes")?, a.patch)?)
            } else {
                a.model.parse().map_err(|e| usage(format!("--model {:?}: {e}", a.model)))?
            };
            let expected = a.expected.or_else(|| match &arch {
                Arch::Irx1d(s) => PUBLISHED_IRX_TOTALS
                    .iter()
                    .find(|p| (p.bands, p.classes) == (s.bands, s.classes))
                    .map(|p| p.total),
                Arch::Cnn2d(_) => None,
            });
            (arch, expected)
        }
    };
    let model = zoo::build::<f32>(&arch, 0)?;
    let report = audit(&model, expected);
    print!("{}", report.report());
    Ok(match report.status {
        AuditStatus::Exact => EXIT_OK,
        AuditStatus::DocumentedAnomaly => EXIT_ANOMALY,
        AuditStatus::Mismatch if expected.is_none() => EXIT_OK,
        AuditStatus::Mismatch => EXIT_FAILURE,
    })
}

// ---------------------------------------------------------------- evaluate / classify

struct Loaded<T> {
    model: Model<T>,
    header: Header,
}

fn load_checkpoint<T: Real>(bytes: &[u8]) -> anyhow::Result<Loaded<T>> {
    let (model, header) = checkpoint::decode::<T>(bytes)?;
    Ok(Loaded { model, header })
}

fn header_stats(header: &Header) -> anyhow::Result<BandStats> {
    let text = header
        .get("normalization")
        .ok_or_else(|| anyhow!("checkpoint carries no normalisation statistics"))?;
    Ok(BandStats::parse(text)?)
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split file; by default the checkpoint's own split is redrawn.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    /// Dataset column of the metrics CSV; defaults to the cube's file name.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn evaluate(a: &EvaluateArgs, run: &Run) -> anyhow::Result<u8> {
    let bytes = fs::read(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let pre = checkpoint::peek(&bytes)?;
    match pre.precision {
        Precision::F32 => evaluate_with(load_checkpoint::<f32>(&bytes)?, a, run),
        Precision::F64 => evaluate_with(load_checkpoint::<f64>(&bytes)?, a, run),
    }
}

fn evaluate_with<T: Real>(ck: Loaded<T>, a: &EvaluateArgs, run: &Run) -> anyhow::Result<u8> {
    let (cube, gt) = load_data(&a.data)?;
    let split = match &a.split {
        Some(p) => read_split(&fs::read_to_string(p).with_context(|| format!("reading split {}", p.display()))?)?,
        None => {
            let get = |k: &str| {
                ck.header
                    .get(k)
                    .ok_or_else(|| anyhow!("checkpoint lacks {k}; pass --split"))
            };
            let fraction: f64 = get("split_fraction")?.parse()?;
            let seed: u64 = get("split_seed")?.parse()?;
            stratified_split(&gt, fraction, seed)?
        }
    };
    let stats = header_stats(&ck.header)?;
    let data = Prepared {
        cube: normalize_apply(&cube, &stats)?,
        gt,
        split,
        stats,
    };
    let cm = score(&ck.model, &data, a.batch)?;
    let dataset = a.dataset.clone().unwrap_or_else(|| dataset_name(&a.data));
    let m = Metrics::from_confusion(&dataset, ck.model.arch().patch(), data.split.fraction, data.split.seed, &cm)?;
    let csv = format!("{}\n{}\n", Metrics::csv_header(ck.model.arch().classes()), m.csv_row());
    write(&a.out, csv.as_bytes())?;
    println!("overall accuracy {:.4}  kappa {:.4}", m.overall_accuracy, m.kappa);
    let mut log = run.log();
    log.set("meta.oa", m.overall_accuracy);
    log.set("meta.kappa", m.kappa);
    write_log(&sibling(&a.out, ".log"), &log)?;
    Ok(EXIT_OK)
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long, default_value = "")]
    pub drop_bands: String,
    /// palette CSV (index,name,r,g,b); generated hues when omitted.
    #[arg(long)]
    pub palette: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    /// Also write the label map as PGM.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
    /// Colour map (PPM).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn classify(a: &ClassifyArgs, run: &Run) -> anyhow::Result<u8> {
    let bytes = fs::read(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    match checkpoint::peek(&bytes)?.precision {
        Precision::F32 => classify_with(load_checkpoint::<f32>(&bytes)?, a, run),
        Precision::F64 => classify_with(load_checkpoint::<f64>(&bytes)?, a, run),
    }
}

fn load_palette(path: Option<&Path>, classes: usize) -> anyhow::Result<Palette> {
    match path {
        Some(p) => Ok(parse_palette(
            &fs::read_to_string(p).with_context(|| format!("reading palette {}", p.display()))?,
        )?),
        None => Ok(Palette::generated(classes)),
    }
}

fn classify_with<T: Real>(ck: Loaded<T>, a: &ClassifyArgs, run: &Run) -> anyhow::Result<u8> {
    let drop = parse_band_list(&a.drop_bands)?;
    let cube = open_cube(&a.cube, &drop).with_context(|| format!("reading cube {}", a.cube.display()))?;
    let cube = normalize_apply(&cube, &header_stats(&ck.header)?)?;
    let arch = ck.model.arch();
    let map = eval::classify_image(&ck.model, &cube, arch.patch(), a.batch)?;
    let palette = load_palette(a.palette.as_deref(), arch.classes())?;
    write(&a.out, &eval::render_ppm(&map, &palette)?)?;
    if let Some(p) = &a.labels_out {
        save_labels_pgm(&map, p)?;
    }
    println!("map {}", a.out.display());
    write_log(&sibling(&a.out, ".log"), &run.log())?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------- diff-maps

#[derive(Args, Debug)]
pub struct DiffArgs {
    /// First label map (.pgm or ENVI).
    pub a: PathBuf,
    pub b: PathBuf,
    /// Reference map; only its labelled pixels are compared unless --full-extent.
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub full_extent: bool,
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// Output stem; writes STEM_mask.ppm and STEM_areas.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn diff_maps(a: &DiffArgs, run: &Run) -> anyhow::Result<u8> {
    let open = |p: &Path| open_labels(p).with_context(|| format!("reading map {}", p.display()));
    let ma = open(&a.a)?;
    let mb = open(&a.b)?;
    let reference = a.reference.as_deref().map(open).transpose()?;
    let d = eval::diff_maps(&ma, &mb, reference.as_ref(), a.full_extent)?;
    println!(
        "disagreement {:.4}% ({} of {} pixels)",
        d.percent(),
        d.disagreeing,
        d.compared
    );
    if let Some(stem) = &a.out {
        let palette = match &a.palette {
            Some(p) => Some(load_palette(Some(p), 0)?),
            None => None,
        };
        write(&sibling(stem, "_mask.ppm"), &d.mask_ppm())?;
        write(&sibling(stem, "_areas.csv"), d.area_csv(palette.as_ref()).as_bytes())?;
        let mut log = run.log();
        log.set("meta.disagreement_percent", d.percent());
        write_log(&sibling(stem, ".log"), &log)?;
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------- sweeps

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> anyhow::Result<Vec<T>> {
    let out: Vec<T> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| usage(format!("--{flag}: bad entry {s:?}"))))
        .collect::<anyhow::Result<_>>()?;
    if out.is_empty() {
        return Err(usage(format!("--{flag} is empty")));
    }
    Ok(out)
}

/// Trains and scores one model per `(fraction, patch)` point and writes one
/// metrics row per point.
fn sweep(
    data: &DataArgs,
    settings: &TrainSettings,
    batch_eval: usize,
    dataset: Option<&str>,
    points: &[(f64, usize)],
    out: &Path,
    run: &Run,
) -> anyhow::Result<u8> {
    let (cube, gt) = load_data(data)?;
    let cfg = settings.config();
    cfg.validate()?;
    let dataset = dataset.map(str::to_string).unwrap_or_else(|| dataset_name(data));
    let mut rows = Vec::new();
    let mut classes = gt.classes();
    for &(fraction, patch) in points {
        let prepared = prepare(&cube, &gt, stratified_split(&gt, fraction, settings.split_seed())?)?;
        let arch = resolve_arch(&settings.model, cube.bands, gt.classes(), patch)?;
        classes = arch.classes();
        let cm = match settings.precision {
            PrecisionArg::F32 => score(&fit::<f32>(&arch, &prepared, &cfg)?.model, &prepared, batch_eval)?,
            PrecisionArg::F64 => score(&fit::<f64>(&arch, &prepared, &cfg)?.model, &prepared, batch_eval)?,
        };
        let m = Metrics::from_confusion(&dataset, patch, fraction, settings.seed, &cm)?;
        println!("fraction {fraction} patch {patch}: oa {:.4} kappa {:.4}", m.overall_accuracy, m.kappa);
        rows.push(m.csv_row());
    }
    let mut csv = Metrics::csv_header(classes);
    csv.push('\n');
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    write(out, csv.as_bytes())?;
    write_log(&sibling(out, ".log"), &run.log())?;
    Ok(EXIT_OK)
}

#[derive(Args, Debug)]
pub struct SweepFractionArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "0.05,0.1,0.15,0.25,0.5,0.75")]
    pub fractions: String,
    #[arg(long, default_value_t = 7)]
    pub patch: usize,
    #[command(flatten)]
    pub settings: TrainSettings,
    #[arg(long, default_value_t = 256)]
    pub eval_batch: usize,
    #[arg(long)]
    pub dataset: Option<String>,
    /// Long-form metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sweep_fraction(a: &SweepFractionArgs, run: &Run) -> anyhow::Result<u8> {
    let points: Vec<(f64, usize)> = parse_list::<f64>("fractions", &a.fractions)?
        .into_iter()
        .map(|f| (f, a.patch))
        .collect();
    sweep(&a.data, &a.settings, a.eval_batch, a.dataset.as_deref(), &points, &a.out, run)
}

#[derive(Args, Debug)]
pub struct SweepPatchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "3,5,7,9,11,13,15")]
    pub patches: String,
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    #[command(flatten)]
    pub settings: TrainSettings,
    #[arg(long, default_value_t = 256)]
    pub eval_batch: usize,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sweep_patch(a: &SweepPatchArgs, run: &Run) -> anyhow::Result<u8> {
    let points: Vec<(f64, usize)> = parse_list::<usize>("patches", &a.patches)?
        .into_iter()
        .map(|p| (a.fraction, p))
        .collect();
    sweep(&a.data, &a.settings, a.eval_batch, a.dataset.as_deref(), &points, &a.out, run)
}

// ---------------------------------------------------------------- hpo

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Objective {
    /// Test accuracy of a trained 2-D CNN.
    Train,
    /// Closed-form stand-in with a known optimum.
    Synthetic,
}

#[derive(Args, Debug)]
pub struct HpoArgs {
    #[arg(long, value_enum, default_value = "train")]
    pub objective: Objective,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Study record; an existing record is resumed.
    #[arg(long)]
    pub record: PathBuf,
    #[arg(long)]
    pub cube: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub drop_bands: String,
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    #[arg(long, default_value_t = 7)]
    pub patch: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Search-space shape for the synthetic objective.
    #[arg(long, default_value_t = 8)]
    pub bands: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
}

pub fn hpo(a: &HpoArgs, run: &Run) -> anyhow::Result<u8> {
    let mut log = run.log();
    log.set("meta.gp_noise", hpo::GP_NOISE);
    log.set("meta.ei_candidates", hpo::EI_CANDIDATES);
    log.set("meta.initial_random_trials", hpo::INITIAL_RANDOM_TRIALS);
    log.set(
        "meta.length_scales",
        hpo::LENGTH_SCALES.map(|l| l.to_string()).join(","),
    );
    let (space, record) = match a.objective {
        Objective::Synthetic => {
            let space = SearchSpace::standard(a.bands, a.classes, a.patch);
            let record = hpo::run_study(
                &space,
                |c: &HpoConfig, _| Ok(SyntheticObjective::score(c)),
                a.trials,
                a.seed,
                Some(&a.record),
            )?;
            log.set("meta.optimum", SyntheticObjective::PEAK);
            (space, record)
        }
        Objective::Train => {
            let (Some(cube), Some(labels)) = (&a.cube, &a.labels) else {
                return Err(usage("--objective train needs --cube and --labels"));
            };
            let d = DataArgs {
                cube: cube.clone(),
                labels: labels.clone(),
                drop_bands: a.drop_bands.clone(),
            };
            let (cube, gt) = load_data(&d)?;
            let prepared = prepare(&cube, &gt, stratified_split(&gt, a.fraction, a.seed)?)?;
            let space = SearchSpace::standard(cube.bands, gt.classes(), a.patch);
            let record = hpo::run_study(
                &space,
                |c: &HpoConfig, seed| {
                    let arch = Arch::Cnn2d(space.to_spec(c));
                    let cfg = TrainConfig {
                        learning_rate: c.learning_rate,
                        epochs: a.epochs,
                        batch_size: a.batch,
                        seed,
                        precision: Precision::F32,
                    };
                    let fitted = fit::<f32>(&arch, &prepared, &cfg).map_err(|e| irx_core::Error::State(format!("{e:#}")))?;
                    let cm = score(&fitted.model, &prepared, 256).map_err(|e| irx_core::Error::State(format!("{e:#}")))?;
                    eval::overall_accuracy(&cm)
                },
                a.trials,
                a.seed,
                Some(&a.record),
            )?;
            (space, record)
        }
    };
    let best = record.best().ok_or_else(|| anyhow!("no trial completed"))?;
    println!(
        "best trial {} objective {:.6}: {}",
        best.id,
        best.objective.unwrap_or(f64::NAN),
        space.render(&best.config)
    );
    log.set("meta.best_trial", best.id);
    log.set("meta.best_objective", best.objective.unwrap_or(f64::NAN));
    log.set("meta.best_config", space.render(&best.config));
    write_log(&sibling(&a.record, ".log"), &log)?;
    Ok(EXIT_OK)
}
