use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Interleave, LabelRaster, RasterCube};
use crate::error::{Error, Result};

/// Parameters of a synthetic labelled scene.
///
/// Classes occupy Voronoi cells around `sites_per_class * classes` random
/// sites. Every class gets a random spectral mean drawn from N(0, 1) per
/// band, and each pixel adds independent Gaussian noise with per-band
/// standard deviation `difficulty * min_sep / sqrt(bands)`, where `min_sep`
/// is the smallest distance between two class means. The ratio of mean
/// separation to expected noise norm is therefore `1 / difficulty`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub bands: usize,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub difficulty: f64,
    pub sites_per_class: usize,
}

impl SynthConfig {
    pub fn new(classes: usize, bands: usize, rows: usize, cols: usize, seed: u64, difficulty: f64) -> Self {
        SynthConfig {
            classes,
            bands,
            rows,
            cols,
            seed,
            difficulty,
            sites_per_class: 2,
        }
    }
}

/// Class means, one row of `bands` values per class.
pub(crate) fn class_means(rng: &mut ChaCha8Rng, classes: usize, bands: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| (0..bands).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

fn min_separation(means: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

pub fn synth_scene(cfg: &SynthConfig) -> Result<(RasterCube, LabelRaster)> {
    if cfg.classes < 2 || cfg.classes > 255 {
        return Err(Error::Argument(format!("synthetic scenes need 2..=255 classes, got {}", cfg.classes)));
    }
    if cfg.bands == 0 || cfg.rows == 0 || cfg.cols == 0 || cfg.sites_per_class == 0 {
        return Err(Error::Argument("synthetic scene extents must be positive".into()));
    }
    if !(cfg.difficulty >= 0.0 && cfg.difficulty.is_finite()) {
        return Err(Error::Argument(format!("difficulty {} must be finite and >= 0", cfg.difficulty)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = class_means(&mut rng, cfg.classes, cfg.bands);
    let sigma = cfg.difficulty * min_separation(&means) / (cfg.bands as f64).sqrt();

    let n_sites = cfg.classes * cfg.sites_per_class;
    let sites: Vec<(f64, f64)> = (0..n_sites)
        .map(|_| (rng.random::<f64>() * cfg.rows as f64, rng.random::<f64>() * cfg.cols as f64))
        .collect();

    let mut labels = Vec::with_capacity(cfg.rows * cfg.cols);
    let mut data = Vec::with_capacity(cfg.rows * cfg.cols * cfg.bands);
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut nearest = 0;
            let mut best = f64::INFINITY;
            for (i, &(sy, sx)) in sites.iter().enumerate() {
                let d = (sy - y) * (sy - y) + (sx - x) * (sx - x);
                if d < best {
                    best = d;
                    nearest = i;
                }
            }
            let class = nearest % cfg.classes;
            labels.push(class as u8 + 1);
            for &m in &means[class] {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push((m + sigma * z) as f32);
            }
        }
    }
    Ok((
        RasterCube::new(cfg.rows, cfg.cols, cfg.bands, data, Interleave::Bip)?,
        LabelRaster::new(cfg.rows, cfg.cols, labels)?,
    ))
}
