use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabelRaster;
use crate::error::{Error, Result};

/// Pixels of one class, as linear indices `row * cols + col`, both sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSplit {
    pub class: u8,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub fraction: f64,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub classes: Vec<ClassSplit>,
}

impl Split {
    pub fn train_pixels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.classes.iter().flat_map(|c| c.train.iter().copied()).collect();
        v.sort_unstable();
        v
    }

    pub fn test_pixels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.classes.iter().flat_map(|c| c.test.iter().copied()).collect();
        v.sort_unstable();
        v
    }
}

fn class_seed(seed: u64, class: u8) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-class random split of the labelled pixels. Each class contributes
/// `max(1, round(fraction * n))` training pixels; background is never used.
pub fn stratified_split(labels: &LabelRaster, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("training fraction {fraction} outside (0, 1)")));
    }
    let k = labels.classes();
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
    for (i, &l) in labels.labels.iter().enumerate() {
        if l != 0 {
            per_class[l as usize].push(i);
        }
    }
    let mut classes = Vec::new();
    for (class, mut pixels) in per_class.into_iter().enumerate().skip(1) {
        if pixels.is_empty() {
            continue;
        }
        let class = class as u8;
        let n = pixels.len();
        let n_train = ((fraction * n as f64).round() as usize).clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(class_seed(seed, class));
        pixels.shuffle(&mut rng);
        let mut train = pixels[..n_train].to_vec();
        let mut test = pixels[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        classes.push(ClassSplit { class, train, test });
    }
    if classes.is_empty() {
        return Err(Error::Data("label map has no labelled pixels".into()));
    }
    Ok(Split {
        fraction,
        seed,
        rows: labels.rows,
        cols: labels.cols,
        classes,
    })
}

/// CSV with a comment preamble:
///
/// ```text
/// # fraction=0.1 seed=42 rows=145 cols=145
/// pixel,class,set
/// 17,1,train
/// ```
pub fn write_split(split: &Split) -> String {
    let mut out = format!(
        "# fraction={:?} seed={} rows={} cols={}\npixel,class,set\n",
        split.fraction, split.seed, split.rows, split.cols
    );
    for c in &split.classes {
        for &p in &c.train {
            let _ = writeln!(out, "{p},{},train", c.class);
        }
        for &p in &c.test {
            let _ = writeln!(out, "{p},{},test", c.class);
        }
    }
    out
}

pub fn read_split(text: &str) -> Result<Split> {
    let mut lines = text.lines();
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| Error::Format("split file lacks its preamble".into()))?;
    let mut fraction = None;
    let mut seed = None;
    let mut rows = None;
    let mut cols = None;
    for kv in meta.split_whitespace() {
        let bad = || Error::Format(format!("bad split preamble field {kv:?}"));
        let (k, v) = kv.split_once('=').ok_or_else(bad)?;
        match k {
            "fraction" => fraction = Some(v.parse::<f64>().map_err(|_| bad())?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
            "rows" => rows = Some(v.parse::<usize>().map_err(|_| bad())?),
            "cols" => cols = Some(v.parse::<usize>().map_err(|_| bad())?),
            _ => {}
        }
    }
    let missing = |k: &str| Error::Format(format!("split preamble lacks {k}"));
    let (rows, cols) = (rows.ok_or_else(|| missing("rows"))?, cols.ok_or_else(|| missing("cols"))?);
    if lines.next().map(str::trim) != Some("pixel,class,set") {
        return Err(Error::Format("split file lacks its column header".into()));
    }
    let mut classes: Vec<ClassSplit> = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let bad = || Error::Format(format!("bad split row {line:?}"));
        let mut it = line.split(',');
        let pixel: usize = it.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let class: u8 = it.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let set = it.next().map(str::trim).ok_or_else(bad)?;
        if pixel >= rows * cols || class == 0 {
            return Err(bad());
        }
        let idx = match classes.iter().position(|c| c.class == class) {
            Some(i) => i,
            None => {
                classes.push(ClassSplit {
                    class,
                    train: Vec::new(),
                    test: Vec::new(),
                });
                classes.len() - 1
            }
        };
        match set {
            "train" => classes[idx].train.push(pixel),
            "test" => classes[idx].test.push(pixel),
            _ => return Err(bad()),
        }
    }
    classes.sort_by_key(|c| c.class);
    for c in &mut classes {
        c.train.sort_unstable();
        c.test.sort_unstable();
    }
    Ok(Split {
        fraction: fraction.ok_or_else(|| missing("fraction"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        rows,
        cols,
        classes,
    })
}
