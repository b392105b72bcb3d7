//! Hyperspectral cubes, ground-truth maps, normalisation, splits and patches.

mod envi;
mod patches;
mod split;
mod synth;

use std::collections::BTreeMap;

pub use envi::{
    decode_cube, decode_pgm, encode_cube, encode_pgm, header_path_for, load_cube, open_cube, open_labels,
    parse_band_list, parse_palette, raw_path_for, render_palette, save_cube, save_labels_pgm, DataType,
    EnviHeader,
};
pub(crate) use patches::validate_patch;
pub use patches::{extract_patches, fill_patch, mirror_index, PatchSet};
pub use split::{read_split, stratified_split, write_split, ClassSplit, Split};
pub use synth::{synth_scene, SynthConfig};

use crate::error::{Error, Result};

/// Source storage order of a raster. Cubes are always held band-last.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interleave {
    Bsq,
    Bil,
    Bip,
}

/// Image cube, `rows x cols x bands`, band-last.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterCube {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub data: Vec<f32>,
    pub interleave: Interleave,
}

impl RasterCube {
    pub fn new(rows: usize, cols: usize, bands: usize, data: Vec<f32>, interleave: Interleave) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::Argument("cube extents must be positive".into()));
        }
        if data.len() != rows * cols * bands {
            return Err(Error::Argument(format!(
                "cube data has {} values, {rows}x{cols}x{bands} needs {}",
                data.len(),
                rows * cols * bands
            )));
        }
        Ok(RasterCube {
            rows,
            cols,
            bands,
            data,
            interleave,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[(row * self.cols + col) * self.bands + band]
    }

    /// All bands of one pixel.
    #[inline]
    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.cols + col) * self.bands;
        &self.data[start..start + self.bands]
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }
}

/// Per-pixel class labels; 0 is background, 1..=K are classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRaster {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<u8>,
}

impl LabelRaster {
    pub fn new(rows: usize, cols: usize, labels: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || labels.len() != rows * cols {
            return Err(Error::Argument(format!(
                "label map of {} values does not fit {rows}x{cols}",
                labels.len()
            )));
        }
        Ok(LabelRaster { rows, cols, labels })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.cols + col]
    }

    /// Largest label present.
    pub fn classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    /// Labelled pixel count per class, index 0 is background.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes() + 1];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub fn check_matches(&self, cube: &RasterCube) -> Result<()> {
        if (self.rows, self.cols) != (cube.rows, cube.cols) {
            return Err(Error::Argument(format!(
                "label map is {}x{} but cube is {}x{}",
                self.rows, self.cols, cube.rows, cube.cols
            )));
        }
        Ok(())
    }
}

/// Class index to display name and colour.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Palette {
    pub entries: BTreeMap<u8, (String, [u8; 3])>,
}

impl Palette {
    /// Evenly spaced hues, background black.
    pub fn generated(classes: usize) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(0, ("background".to_string(), [0, 0, 0]));
        for k in 1..=classes.min(255) {
            let h = (k - 1) as f64 / classes as f64 * 6.0;
            let x = 1.0 - ((h % 2.0) - 1.0).abs();
            let (r, g, b) = match h as u32 {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            let c = |v: f64| (40.0 + v * 215.0).round() as u8;
            entries.insert(k as u8, (format!("class {k}"), [c(r), c(g), c(b)]));
        }
        Palette { entries }
    }

    pub fn color(&self, label: u8) -> [u8; 3] {
        self.entries.get(&label).map(|e| e.1).unwrap_or([0, 0, 0])
    }
}

/// Standard deviations below this are clamped so constant bands map to 0.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-band statistics fitted on the training pixels only.
#[derive(Clone, Debug, PartialEq)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean and population standard deviation per band over `pixels`
/// (linear indices `row * cols + col`).
pub fn normalize_fit(cube: &RasterCube, pixels: &[usize]) -> Result<BandStats> {
    if pixels.is_empty() {
        return Err(Error::Argument("cannot fit normalisation on zero pixels".into()));
    }
    let c = cube.bands;
    let mut mean = vec![0.0; c];
    let mut m2 = vec![0.0; c];
    for (n, &p) in pixels.iter().enumerate() {
        if p >= cube.pixels() {
            return Err(Error::Index {
                what: "pixel",
                index: p,
                bound: cube.pixels(),
            });
        }
        let s = &cube.data[p * c..(p + 1) * c];
        let k = (n + 1) as f64;
        for b in 0..c {
            let v = s[b] as f64;
            let d = v - mean[b];
            mean[b] += d / k;
            m2[b] += d * (v - mean[b]);
        }
    }
    let n = pixels.len() as f64;
    let std = m2.iter().map(|&v| (v / n).sqrt().max(STD_FLOOR)).collect();
    Ok(BandStats { mean, std })
}

pub fn normalize_apply(cube: &RasterCube, stats: &BandStats) -> Result<RasterCube> {
    if stats.mean.len() != cube.bands || stats.std.len() != cube.bands {
        return Err(Error::Argument(format!(
            "statistics cover {} bands, cube has {}",
            stats.mean.len(),
            cube.bands
        )));
    }
    let c = cube.bands;
    let data = cube
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let b = i % c;
            ((v as f64 - stats.mean[b]) / stats.std[b]) as f32
        })
        .collect();
    RasterCube::new(cube.rows, cube.cols, c, data, cube.interleave)
}

impl BandStats {
    /// `mean:std` pairs separated by commas, lossless for f64.
    pub fn render(&self) -> String {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| format!("{m:?}:{s:?}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for item in text.split(',').filter(|s| !s.is_empty()) {
            let bad = || Error::Format(format!("bad band statistic {item:?}"));
            let (m, s) = item.split_once(':').ok_or_else(bad)?;
            mean.push(m.parse().map_err(|_| bad())?);
            std.push(s.parse().map_err(|_| bad())?);
        }
        Ok(BandStats { mean, std })
    }
}
