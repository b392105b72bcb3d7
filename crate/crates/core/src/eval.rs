//! Confusion matrices, accuracy and kappa, whole-image classification,
//! map rendering and map comparison.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodata::{fill_patch, LabelRaster, Palette, RasterCube};
use crate::tensor::{Real, Tensor};
use crate::zoo::Model;

/// `K x K` counts; rows are reference classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Argument("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix {
            classes: k,
            counts: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    /// Correct fraction per reference class; `None` for absent classes.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|i| {
                let n = self.row_sum(i);
                (n > 0).then(|| self.get(i, i) as f64 / n as f64)
            })
            .collect()
    }
}

/// Tallies labelled reference pixels (label 0 is skipped) against the
/// predictions. Labels are 1-based; `classes` fixes the matrix size.
pub fn confusion(reference: &[u8], predicted: &[u8], classes: usize) -> Result<ConfusionMatrix> {
    if reference.len() != predicted.len() {
        return Err(Error::Argument(format!(
            "reference has {} pixels, prediction {}",
            reference.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix {
        classes,
        counts: vec![0; classes * classes],
    };
    for (&r, &p) in reference.iter().zip(predicted) {
        if r == 0 {
            continue;
        }
        let (r, p) = (r as usize, p as usize);
        if r > classes || p == 0 || p > classes {
            return Err(Error::Argument(format!("label pair ({r}, {p}) outside 1..={classes}")));
        }
        cm.counts[(r - 1) * classes + p - 1] += 1;
    }
    if cm.total() == 0 {
        return Err(Error::Argument("no labelled pixels to compare".into()));
    }
    Ok(cm)
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("empty confusion matrix".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Cohen's kappa. A matrix whose chance agreement is 1 yields 0.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("empty confusion matrix".into()));
    }
    let n = total as f64;
    let po = cm.trace() as f64 / n;
    let pe: f64 = (0..cm.classes)
        .map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    if (1.0 - pe).abs() < 1e-15 {
        log::warn!("kappa undefined: chance agreement is 1; reporting 0");
        return Ok(0.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

fn check_model_input<T: Real>(model: &Model<T>, cube: &RasterCube, patch: usize, batch: usize) -> Result<()> {
    if cube.bands != model.arch().bands() {
        return Err(Error::dim("classify", &[cube.bands], &[model.arch().bands()]));
    }
    if patch != model.arch().patch() {
        return Err(Error::Argument(format!(
            "patch {patch} differs from the model's {}",
            model.arch().patch()
        )));
    }
    if batch == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    crate::geodata::validate_patch(cube, patch)
}

fn predict_pixels<T: Real>(model: &Model<T>, cube: &RasterCube, pixels: &[usize], patch: usize) -> Result<Vec<u8>> {
    let s = patch * patch * cube.bands;
    let mut data = vec![T::zero(); pixels.len() * s];
    for (n, &p) in pixels.iter().enumerate() {
        fill_patch(cube, p / cube.cols, p % cube.cols, patch, &mut data[n * s..(n + 1) * s]);
    }
    let x = Tensor::new(&[pixels.len(), patch, patch, cube.bands], data)?;
    Ok(model.predict(&x)?.into_iter().map(|k| k as u8 + 1).collect())
}

/// Labels (1-based) for the listed pixels, computed in batches, in parallel
/// across batches; output order follows `pixels`.
pub fn classify_pixels<T: Real>(
    model: &Model<T>,
    cube: &RasterCube,
    pixels: &[usize],
    patch: usize,
    batch: usize,
) -> Result<Vec<u8>> {
    check_model_input(model, cube, patch, batch)?;
    if let Some(&bad) = pixels.iter().find(|&&p| p >= cube.pixels()) {
        return Err(Error::Index {
            what: "pixel",
            index: bad,
            bound: cube.pixels(),
        });
    }
    let chunks: Vec<Vec<u8>> = pixels
        .par_chunks(batch)
        .map(|chunk| predict_pixels(model, cube, chunk, patch))
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Classifies every pixel through its mirror-padded patch. Rows are
/// processed in parallel and merged in row order.
pub fn classify_image<T: Real>(model: &Model<T>, cube: &RasterCube, patch: usize, batch: usize) -> Result<LabelRaster> {
    check_model_input(model, cube, patch, batch)?;
    let rows: Vec<Vec<u8>> = (0..cube.rows)
        .into_par_iter()
        .map(|r| {
            let pixels: Vec<usize> = (r * cube.cols..(r + 1) * cube.cols).collect();
            let mut out = Vec::with_capacity(cube.cols);
            for chunk in pixels.chunks(batch) {
                out.extend(predict_pixels(model, cube, chunk, patch)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    LabelRaster::new(cube.rows, cube.cols, rows.concat())
}

/// Binary PPM of a label map. Label 0 falls back to black when the
/// palette has no entry for it; any other missing label is an error.
pub fn render_ppm(labels: &LabelRaster, palette: &Palette) -> Result<Vec<u8>> {
    let mut present = [false; 256];
    for &l in &labels.labels {
        present[l as usize] = true;
    }
    for (l, _) in present.iter().enumerate().filter(|(_, &p)| p).skip_while(|(l, _)| *l == 0) {
        if !palette.entries.contains_key(&(l as u8)) {
            return Err(Error::Argument(format!("palette has no entry for class {l}")));
        }
    }
    let mut out = format!("P6\n{} {}\n255\n", labels.cols, labels.rows).into_bytes();
    out.reserve(labels.labels.len() * 3);
    for &l in &labels.labels {
        out.extend_from_slice(&palette.color(l));
    }
    Ok(out)
}

/// Where two maps disagree and how much area each assigns to each class.
#[derive(Clone, Debug, PartialEq)]
pub struct MapDiff {
    pub rows: usize,
    pub cols: usize,
    /// True where the maps differ, only inside the compared extent.
    pub mask: Vec<bool>,
    /// Pixel counts per label value (index 0..=255) inside the compared extent.
    pub area_a: Vec<usize>,
    pub area_b: Vec<usize>,
    pub compared: usize,
    pub disagreeing: usize,
}

impl MapDiff {
    pub fn percent(&self) -> f64 {
        if self.compared == 0 {
            0.0
        } else {
            100.0 * self.disagreeing as f64 / self.compared as f64
        }
    }

    /// `class,area_a,area_b,delta` for every label that occurs in either map.
    pub fn area_csv(&self, palette: Option<&Palette>) -> String {
        let mut out = String::from("class,name,area_a,area_b,delta\n");
        for l in 0..self.area_a.len() {
            let (a, b) = (self.area_a[l], self.area_b[l]);
            if a == 0 && b == 0 {
                continue;
            }
            let name = palette
                .and_then(|p| p.entries.get(&(l as u8)))
                .map(|e| e.0.clone())
                .unwrap_or_default();
            let _ = writeln!(out, "{l},{name},{a},{b},{}", b as i64 - a as i64);
        }
        out
    }

    /// White where the maps disagree, black elsewhere.
    pub fn mask_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        for &m in &self.mask {
            out.extend_from_slice(if m { &[255, 255, 255] } else { &[0, 0, 0] });
        }
        out
    }
}

/// Compares two maps. With a reference map and `full_extent == false`,
/// only pixels the reference labels are compared.
pub fn diff_maps(a: &LabelRaster, b: &LabelRaster, reference: Option<&LabelRaster>, full_extent: bool) -> Result<MapDiff> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::Argument(format!(
            "maps differ in size: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    if let Some(r) = reference {
        if (r.rows, r.cols) != (a.rows, a.cols) {
            return Err(Error::Argument("reference map size differs from the compared maps".into()));
        }
    }
    let mut diff = MapDiff {
        rows: a.rows,
        cols: a.cols,
        mask: vec![false; a.labels.len()],
        area_a: vec![0; 256],
        area_b: vec![0; 256],
        compared: 0,
        disagreeing: 0,
    };
    for i in 0..a.labels.len() {
        let inside = full_extent || reference.is_none_or(|r| r.labels[i] != 0);
        if !inside {
            continue;
        }
        let (la, lb) = (a.labels[i], b.labels[i]);
        diff.compared += 1;
        diff.area_a[la as usize] += 1;
        diff.area_b[lb as usize] += 1;
        if la != lb {
            diff.mask[i] = true;
            diff.disagreeing += 1;
        }
    }
    Ok(diff)
}

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub dataset: String,
    pub patch: usize,
    pub fraction: f64,
    pub seed: u64,
    pub overall_accuracy: f64,
    pub kappa: f64,
    pub per_class: Vec<Option<f64>>,
}

impl Metrics {
    pub fn from_confusion(dataset: &str, patch: usize, fraction: f64, seed: u64, cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Metrics {
            dataset: dataset.to_string(),
            patch,
            fraction,
            seed,
            overall_accuracy: overall_accuracy(cm)?,
            kappa: cohen_kappa(cm)?,
            per_class: cm.per_class_accuracy(),
        })
    }

    pub fn csv_header(classes: usize) -> String {
        let mut h = String::from("dataset,patch,fraction,seed,oa,kappa");
        for k in 1..=classes {
            let _ = write!(h, ",class_{k}");
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{},{},{:.6},{:.6}",
            self.dataset, self.patch, self.fraction, self.seed, self.overall_accuracy, self.kappa
        );
        for a in &self.per_class {
            match a {
                Some(v) => {
                    let _ = write!(row, ",{v:.6}");
                }
                None => row.push(','),
            }
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked() -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&[vec![50, 10], vec![5, 35]]).unwrap()
    }

    #[test]
    fn worked_example() {
        let cm = worked();
        assert!((overall_accuracy(&cm).unwrap() - 0.85).abs() < 1e-12);
        // p_e = (60*55 + 40*45) / 100^2 = 0.51
        let expected = (0.85 - 0.51) / (1.0 - 0.51);
        assert!((cohen_kappa(&cm).unwrap() - expected).abs() < 1e-12);
        assert!((cohen_kappa(&cm).unwrap() - 0.6939).abs() < 1e-4);
    }

    #[test]
    fn diagonal_and_chance_level() {
        let diag = ConfusionMatrix::from_rows(&[vec![7, 0, 0], vec![0, 3, 0], vec![0, 0, 9]]).unwrap();
        assert_eq!(cohen_kappa(&diag).unwrap(), 1.0);
        let one_col = ConfusionMatrix::from_rows(&[vec![20, 0], vec![30, 0]]).unwrap();
        assert_eq!(cohen_kappa(&one_col).unwrap(), 0.0);
        let single = ConfusionMatrix::from_rows(&[vec![4, 0], vec![0, 0]]).unwrap();
        assert_eq!(cohen_kappa(&single).unwrap(), 0.0);
    }

    #[test]
    fn confusion_skips_background() {
        let cm = confusion(&[0, 1, 2, 2, 0], &[2, 1, 2, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![1, 0, 1, 1]);
        assert!(confusion(&[0, 0], &[1, 1], 2).is_err());
        assert!(confusion(&[1], &[1, 2], 2).is_err());
        assert!(confusion(&[1], &[3], 2).is_err());
    }

    #[test]
    fn diff_examples() {
        let a = LabelRaster::new(2, 2, vec![1, 2, 2, 1]).unwrap();
        let d = diff_maps(&a, &a, None, false).unwrap();
        assert_eq!(d.percent(), 0.0);
        assert_eq!(d.area_a, d.area_b);
        let mut b = a.clone();
        b.labels[3] = 2;
        let d = diff_maps(&a, &b, None, false).unwrap();
        assert_eq!(d.disagreeing, 1);
        assert!((d.percent() - 25.0).abs() < 1e-12);
        let reference = LabelRaster::new(2, 2, vec![1, 1, 1, 0]).unwrap();
        assert_eq!(diff_maps(&a, &b, Some(&reference), false).unwrap().disagreeing, 0);
        assert_eq!(diff_maps(&a, &b, Some(&reference), true).unwrap().disagreeing, 1);
    }

    #[test]
    fn ppm_needs_palette_entries() {
        let l = LabelRaster::new(1, 3, vec![0, 1, 2]).unwrap();
        let mut p = Palette::default();
        p.entries.insert(1, ("a".into(), [1, 2, 3]));
        assert!(render_ppm(&l, &p).is_err());
        p.entries.insert(2, ("b".into(), [4, 5, 6]));
        let img = render_ppm(&l, &p).unwrap();
        assert!(img.ends_with(&[0, 0, 0, 1, 2, 3, 4, 5, 6]));
        assert!(img.starts_with(b"P6\n3 1\n255\n"));
    }

    #[test]
    fn metrics_row_layout() {
        let m = Metrics::from_confusion("synthetic", 7, 0.1, 42, &worked()).unwrap();
        assert_eq!(Metrics::csv_header(2), "dataset,patch,fraction,seed,oa,kappa,class_1,class_2");
        assert!(m.csv_row().starts_with("synthetic,7,0.1,42,0.850000,"));
    }
}
