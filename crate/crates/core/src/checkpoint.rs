//! Binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       4 bytes   "IRX1"
//! version     u32       1
//! bands       u64
//! classes     u64
//! patch       u64
//! precision   u64       32 or 64
//! header_len  u64
//! header      UTF-8     key=value lines (architecture, constants, normalisation)
//! n_tensors   u64
//! per tensor: name_len u64, name bytes, rank u64, rank x u64 extents,
//!             values in the declared precision
//! ```
//!
//! Only weights and batch-norm running statistics are stored; optimizer
//! state is not.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{BN_EPS, BN_MOMENTUM};
use crate::tensor::{Precision, Real, Tensor, MAX_RANK};
use crate::zoo::{self, Arch, Model};

pub const MAGIC: [u8; 4] = *b"IRX1";
pub const VERSION: u32 = 1;

/// Free-form metadata saved next to the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Header {
    pub entries: BTreeMap<String, String>,
}

impl Header {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad checkpoint header line {line:?}")))?;
            entries.insert(k.to_string(), v.to_string());
        }
        Ok(Header { entries })
    }
}

pub fn encode<T: Real>(model: &Model<T>, extra: &Header) -> Vec<u8> {
    let arch = model.arch();
    let mut header = extra.clone();
    header.set("arch", arch);
    header.set("bn_eps", BN_EPS);
    header.set("bn_momentum", BN_MOMENTUM);

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [arch.bands() as u64, arch.classes() as u64, arch.patch() as u64, T::PRECISION.bits()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let text = header.render();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u64).to_le_bytes());
        for &e in p.value.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.put_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Truncated(what.to_string()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// A length field that must fit in the remaining bytes.
    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        if v > (self.buf.len() - self.pos) as u64 {
            return Err(Error::Truncated(format!("{what} ({v} exceeds remaining bytes)")));
        }
        Ok(v as usize)
    }
}

/// What a checkpoint says about itself before any model is built.
#[derive(Clone, Debug)]
pub struct Preamble {
    pub arch: Arch,
    pub precision: Precision,
    pub header: Header,
}

fn read_preamble<'a>(bytes: &'a [u8]) -> Result<(Preamble, Reader<'a>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let bands = r.u64("bands")? as usize;
    let classes = r.u64("classes")? as usize;
    let patch = r.u64("patch")? as usize;
    let bits = r.u64("precision")?;
    let precision = Precision::from_bits(bits).ok_or_else(|| Error::Format(format!("unknown precision {bits}")))?;
    let hlen = r.len("header length")?;
    let text = std::str::from_utf8(r.take(hlen, "header")?)
        .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    let header = Header::parse(text)?;
    let arch: Arch = header
        .get("arch")
        .ok_or_else(|| Error::Format("checkpoint header lacks arch".into()))?
        .parse()?;
    if (arch.bands(), arch.classes(), arch.patch()) != (bands, classes, patch) {
        return Err(Error::Format(format!(
            "metadata ({bands}, {classes}, {patch}) disagrees with architecture {arch}"
        )));
    }
    Ok((Preamble { arch, precision, header }, r))
}

pub fn peek(bytes: &[u8]) -> Result<Preamble> {
    read_preamble(bytes).map(|(p, _)| p)
}

/// Rebuilds the model described by the header and fills in every tensor.
/// Nothing is returned unless the whole file parses.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(Model<T>, Header)> {
    let (pre, mut r) = read_preamble(bytes)?;
    if pre.precision != T::PRECISION {
        return Err(Error::Format(format!(
            "checkpoint stores {} values, requested {}",
            pre.precision,
            T::PRECISION
        )));
    }
    let mut model: Model<T> = zoo::build(&pre.arch, 0)?;
    let width = (T::PRECISION.bits() / 8) as usize;
    let count = r.u64("tensor count")? as usize;
    let expected = model.params().len();
    if count != expected {
        return Err(Error::Format(format!("checkpoint has {count} tensors, model expects {expected}")));
    }
    let mut loaded = Vec::with_capacity(count);
    for i in 0..count {
        let nlen = r.len("tensor name length")?;
        let name = std::str::from_utf8(r.take(nlen, "tensor name")?)
            .map_err(|_| Error::Format(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u64("tensor rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("tensor extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::Format(format!("tensor {name} extents overflow")))?;
        let bytes_needed = numel
            .checked_mul(width)
            .ok_or_else(|| Error::Format(format!("tensor {name} extents overflow")))?;
        let raw = r.take(bytes_needed, &format!("tensor {name} values"))?;
        let data = raw.chunks_exact(width).map(T::get_le).collect();
        loaded.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after tensor table", bytes.len() - r.pos)));
    }
    for (p, (name, value)) in model.params_mut().into_iter().zip(loaded) {
        if p.name != name || p.value.shape() != value.shape() {
            return Err(Error::Format(format!(
                "tensor {name} {:?} does not match model slot {} {:?}",
                value.shape(),
                p.name,
                p.value.shape()
            )));
        }
        p.value = value;
    }
    Ok((model, pre.header))
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed save never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save<T: Real>(model: &Model<T>, extra: &Header, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model, extra))
}

pub fn load<T: Real>(path: &Path) -> Result<(Model<T>, Header)> {
    decode(&fs::read(path)?)
}
