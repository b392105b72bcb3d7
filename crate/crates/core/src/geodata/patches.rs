use super::{LabelRaster, RasterCube};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Reflects an out-of-range coordinate back inside `0..n` without repeating
/// the edge: `-1 -> 1`, `n -> n - 2`. Valid for offsets up to `n - 1`.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

fn check_patch(cube: &RasterCube, patch: usize) -> Result<()> {
    if patch == 0 || patch.is_multiple_of(2) {
        return Err(Error::Argument(format!("patch size {patch} must be odd and positive")));
    }
    let limit = 2 * cube.rows.min(cube.cols) - 1;
    if patch > limit {
        return Err(Error::Argument(format!(
            "patch size {patch} too large for a {}x{} image (max {limit})",
            cube.rows, cube.cols
        )));
    }
    Ok(())
}

/// Writes the `patch x patch x bands` neighbourhood of `(row, col)` into `out`.
pub fn fill_patch<T: Real>(cube: &RasterCube, row: usize, col: usize, patch: usize, out: &mut [T]) {
    let h = (patch / 2) as isize;
    let c = cube.bands;
    debug_assert_eq!(out.len(), patch * patch * c);
    for i in 0..patch {
        let r = mirror_index(row as isize - h + i as isize, cube.rows);
        for j in 0..patch {
            let cc = mirror_index(col as isize - h + j as isize, cube.cols);
            let src = cube.spectrum(r, cc);
            let dst = &mut out[(i * patch + j) * c..(i * patch + j + 1) * c];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::lit(s as f64);
            }
        }
    }
}

/// Patches centred on labelled pixels, with zero-based class targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub patch: usize,
    pub bands: usize,
    /// `[n, patch, patch, bands]`, row-major.
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub pixels: Vec<usize>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn stride(&self) -> usize {
        self.patch * self.patch * self.bands
    }

    /// One patch as `[patch, patch, bands]` values.
    pub fn sample(&self, i: usize) -> &[f32] {
        &self.data[i * self.stride()..(i + 1) * self.stride()]
    }

    /// Stacks the selected patches into a model input.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let s = self.stride();
        let mut data = Vec::with_capacity(idx.len() * s);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Index {
                    what: "patch",
                    index: i,
                    bound: self.len(),
                });
            }
            data.extend(self.sample(i).iter().map(|&v| T::lit(v as f64)));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(&[idx.len(), self.patch, self.patch, self.bands], data)?, labels))
    }
}

/// Extracts mirror-padded patches around the given pixels, which must all
/// be labelled.
pub fn extract_patches(cube: &RasterCube, gt: &LabelRaster, pixels: &[usize], patch: usize) -> Result<PatchSet> {
    gt.check_matches(cube)?;
    check_patch(cube, patch)?;
    let s = patch * patch * cube.bands;
    let mut data = vec![0f32; pixels.len() * s];
    let mut labels = Vec::with_capacity(pixels.len());
    for (n, &p) in pixels.iter().enumerate() {
        if p >= cube.pixels() {
            return Err(Error::Index {
                what: "pixel",
                index: p,
                bound: cube.pixels(),
            });
        }
        let label = gt.labels[p];
        if label == 0 {
            return Err(Error::Argument(format!("pixel {p} is unlabelled")));
        }
        fill_patch(cube, p / cube.cols, p % cube.cols, patch, &mut data[n * s..(n + 1) * s]);
        labels.push(label as usize - 1);
    }
    Ok(PatchSet {
        patch,
        bands: cube.bands,
        data,
        labels,
        pixels: pixels.to_vec(),
    })
}

pub(crate) fn validate_patch(cube: &RasterCube, patch: usize) -> Result<()> {
    check_patch(cube, patch)
}
