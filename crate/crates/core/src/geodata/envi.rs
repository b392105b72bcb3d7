//! Plain-text header + raw binary rasters, PGM label maps and palette files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Interleave, LabelRaster, Palette, RasterCube};
use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataType {
    U8,
    I16,
    I32,
    F32,
    F64,
    U16,
    U32,
    I64,
    U64,
}

impl DataType {
    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            1 => DataType::U8,
            2 => DataType::I16,
            3 => DataType::I32,
            4 => DataType::F32,
            5 => DataType::F64,
            12 => DataType::U16,
            13 => DataType::U32,
            14 => DataType::I64,
            15 => DataType::U64,
            _ => return None,
        })
    }

    pub fn code(self) -> u32 {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::I32 => 3,
            DataType::F32 => 4,
            DataType::F64 => 5,
            DataType::U16 => 12,
            DataType::U32 => 13,
            DataType::I64 => 14,
            DataType::U64 => 15,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 | DataType::U16 => 2,
            DataType::I32 | DataType::U32 | DataType::F32 => 4,
            DataType::F64 | DataType::I64 | DataType::U64 => 8,
        }
    }

    fn decode(self, b: &[u8], big_endian: bool) -> f64 {
        macro_rules! read {
            ($t:ty) => {{
                let arr = b.try_into().unwrap();
                (if big_endian { <$t>::from_be_bytes(arr) } else { <$t>::from_le_bytes(arr) }) as f64
            }};
        }
        match self {
            DataType::U8 => b[0] as f64,
            DataType::I16 => read!(i16),
            DataType::I32 => read!(i32),
            DataType::F32 => read!(f32),
            DataType::F64 => read!(f64),
            DataType::U16 => read!(u16),
            DataType::U32 => read!(u32),
            DataType::I64 => read!(i64),
            DataType::U64 => read!(u64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnviHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub data_type: DataType,
    pub interleave: Interleave,
    pub big_endian: bool,
    pub header_offset: usize,
    /// Every key as written, lower-cased.
    pub fields: BTreeMap<String, String>,
}

impl EnviHeader {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(first) if first.trim() == "ENVI" => {}
            _ => return Err(Error::Format("header does not start with ENVI".into())),
        }
        let mut fields = BTreeMap::new();
        let mut pending: Option<(String, String)> = None;
        for line in lines {
            if let Some((key, mut value)) = pending.take() {
                value.push('\n');
                value.push_str(line);
                if line.contains('}') {
                    fields.insert(key, value);
                } else {
                    pending = Some((key, value));
                }
                continue;
            }
            let Some((k, v)) = line.split_once('=') else { continue };
            let key = k.trim().to_ascii_lowercase();
            let value = v.trim().to_string();
            if value.starts_with('{') && !value.contains('}') {
                pending = Some((key, value));
            } else {
                fields.insert(key, value);
            }
        }
        let num = |k: &str| -> Result<usize> {
            fields
                .get(k)
                .ok_or_else(|| Error::Format(format!("header missing {k:?}")))?
                .parse()
                .map_err(|_| Error::Format(format!("header field {k:?} is not an integer")))
        };
        let samples = num("samples")?;
        let lines = num("lines")?;
        let bands = num("bands")?;
        if samples == 0 || lines == 0 || bands == 0 {
            return Err(Error::Format("header declares an empty raster".into()));
        }
        let code = num("data type")? as u32;
        let data_type =
            DataType::from_code(code).ok_or_else(|| Error::Format(format!("unsupported data type {code}")))?;
        let interleave = match fields.get("interleave").map(|s| s.to_ascii_lowercase()) {
            Some(s) if s == "bsq" => Interleave::Bsq,
            Some(s) if s == "bil" => Interleave::Bil,
            Some(s) if s == "bip" => Interleave::Bip,
            other => return Err(Error::Format(format!("unsupported interleave {other:?}"))),
        };
        let big_endian = match fields.get("byte order").map(String::as_str) {
            None | Some("0") => false,
            Some("1") => true,
            Some(other) => return Err(Error::Format(format!("bad byte order {other:?}"))),
        };
        let header_offset = if fields.contains_key("header offset") { num("header offset")? } else { 0 };
        Ok(EnviHeader {
            samples,
            lines,
            bands,
            data_type,
            interleave,
            big_endian,
            header_offset,
            fields,
        })
    }

    pub fn render(&self) -> String {
        let il = match self.interleave {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
            Interleave::Bip => "bip",
        };
        format!(
            "ENVI\nsamples = {}\nlines = {}\nbands = {}\nheader offset = {}\nfile type = ENVI Standard\ndata type = {}\ninterleave = {}\nbyte order = {}\n",
            self.samples,
            self.lines,
            self.bands,
            self.header_offset,
            self.data_type.code(),
            il,
            u8::from(self.big_endian)
        )
    }

    pub fn expected_bytes(&self) -> usize {
        self.header_offset + self.samples * self.lines * self.bands * self.data_type.size()
    }
}

/// Finds the header that belongs to a raw file: `x.raw.hdr`, then `x.hdr`.
pub fn header_path_for(raw: &Path) -> PathBuf {
    let appended = PathBuf::from(format!("{}.hdr", raw.display()));
    if appended.exists() {
        appended
    } else {
        raw.with_extension("hdr")
    }
}

/// Finds the raw file that belongs to a header: `x` (for `x.hdr`), then
/// `x.raw`, `x.img`, `x.dat`, `x.bsq`, `x.bil`, `x.bip`.
pub fn raw_path_for(header: &Path) -> Result<PathBuf> {
    let stem = header.with_extension("");
    if stem.is_file() && stem != header {
        return Ok(stem);
    }
    for ext in ["raw", "img", "dat", "bsq", "bil", "bip"] {
        let p = header.with_extension(ext);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Argument(format!("no raw file found next to {}", header.display())))
}

/// Decodes a raw buffer into a band-last cube, dropping the listed
/// zero-based band indices.
pub fn decode_cube(header: &EnviHeader, raw: &[u8], drop_bands: &[usize]) -> Result<RasterCube> {
    if raw.len() != header.expected_bytes() {
        return Err(Error::Format(format!(
            "raw size {} bytes, header implies {} bytes",
            raw.len(),
            header.expected_bytes()
        )));
    }
    if let Some(&bad) = drop_bands.iter().find(|&&b| b >= header.bands) {
        return Err(Error::Argument(format!(
            "drop band {} out of range for {} bands",
            bad + 1,
            header.bands
        )));
    }
    let keep: Vec<usize> = (0..header.bands).filter(|b| !drop_bands.contains(b)).collect();
    if keep.is_empty() {
        return Err(Error::Argument("every band was dropped".into()));
    }
    let (rows, cols, bands) = (header.lines, header.samples, header.bands);
    let size = header.data_type.size();
    let body = &raw[header.header_offset..];
    let mut data = Vec::with_capacity(rows * cols * keep.len());
    for r in 0..rows {
        for c in 0..cols {
            for &b in &keep {
                let i = match header.interleave {
                    Interleave::Bsq => (b * rows + r) * cols + c,
                    Interleave::Bil => (r * bands + b) * cols + c,
                    Interleave::Bip => (r * cols + c) * bands + b,
                };
                data.push(header.data_type.decode(&body[i * size..(i + 1) * size], header.big_endian) as f32);
            }
        }
    }
    RasterCube::new(rows, cols, keep.len(), data, header.interleave)
}

pub fn load_cube(header_path: &Path, raw_path: &Path, drop_bands: &[usize]) -> Result<RasterCube> {
    let header = EnviHeader::parse(&fs::read_to_string(header_path)?)?;
    let raw = fs::read(raw_path)?;
    decode_cube(&header, &raw, drop_bands)
}

/// Encodes a cube as 32-bit little-endian floats in the given layout.
pub fn encode_cube(cube: &RasterCube, interleave: Interleave) -> (EnviHeader, Vec<u8>) {
    let (rows, cols, bands) = (cube.rows, cube.cols, cube.bands);
    let mut raw = vec![0u8; rows * cols * bands * 4];
    for r in 0..rows {
        for c in 0..cols {
            for b in 0..bands {
                let i = match interleave {
                    Interleave::Bsq => (b * rows + r) * cols + c,
                    Interleave::Bil => (r * bands + b) * cols + c,
                    Interleave::Bip => (r * cols + c) * bands + b,
                };
                raw[i * 4..i * 4 + 4].copy_from_slice(&cube.get(r, c, b).to_le_bytes());
            }
        }
    }
    let header = EnviHeader {
        samples: cols,
        lines: rows,
        bands,
        data_type: DataType::F32,
        interleave,
        big_endian: false,
        header_offset: 0,
        fields: BTreeMap::new(),
    };
    (header, raw)
}

/// Writes `<stem>.hdr` + `<stem>.raw` in the canonical band-last float layout.
pub fn save_cube(cube: &RasterCube, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let (header, raw) = encode_cube(cube, Interleave::Bip);
    let hdr = stem.with_extension("hdr");
    let rawp = stem.with_extension("raw");
    write_atomic(&rawp, &raw)?;
    write_atomic(&hdr, header.render().as_bytes())?;
    Ok((hdr, rawp))
}

/// Loads a cube given either its header or its raw file path.
pub fn open_cube(path: &Path, drop_bands: &[usize]) -> Result<RasterCube> {
    if path.extension().is_some_and(|e| e == "hdr") {
        load_cube(path, &raw_path_for(path)?, drop_bands)
    } else {
        load_cube(&header_path_for(path), path, drop_bands)
    }
}

// ---------------------------------------------------------------- labels

/// Binary PGM (P5) with 8-bit samples.
pub fn encode_pgm(labels: &LabelRaster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.cols, labels.rows).into_bytes();
    out.extend_from_slice(&labels.labels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelRaster> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("not a binary PGM (magic {:?})", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM field {s:?}")));
    let (cols, rows, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval > 255 {
        return Err(Error::Format("16-bit PGM label maps are not supported".into()));
    }
    pos += 1;
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != rows * cols {
        return Err(Error::Format(format!("PGM body {} bytes, expected {}", body.len(), rows * cols)));
    }
    LabelRaster::new(rows, cols, body.to_vec())
}

/// Reads a label map from a `.pgm` file or an 8-bit single-band raw raster.
pub fn open_labels(path: &Path) -> Result<LabelRaster> {
    if path.extension().is_some_and(|e| e == "pgm") {
        return decode_pgm(&fs::read(path)?);
    }
    let (hdr, raw) = if path.extension().is_some_and(|e| e == "hdr") {
        (path.to_path_buf(), raw_path_for(path)?)
    } else {
        (header_path_for(path), path.to_path_buf())
    };
    let header = EnviHeader::parse(&fs::read_to_string(&hdr)?)?;
    if header.bands != 1 || header.data_type != DataType::U8 {
        return Err(Error::Format("label rasters must be single-band 8-bit".into()));
    }
    let bytes = fs::read(raw)?;
    if bytes.len() != header.expected_bytes() {
        return Err(Error::Format("label raster size does not match its header".into()));
    }
    LabelRaster::new(header.lines, header.samples, bytes[header.header_offset..].to_vec())
}

pub fn save_labels_pgm(labels: &LabelRaster, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pgm(labels))
}

// ---------------------------------------------------------------- palette

pub fn parse_palette(text: &str) -> Result<Palette> {
    let mut entries = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Format(format!("bad palette line {line:?}"));
        if parts.len() != 5 {
            return Err(bad());
        }
        let idx: u8 = parts[0].parse().map_err(|_| bad())?;
        let rgb = [
            parts[2].parse().map_err(|_| bad())?,
            parts[3].parse().map_err(|_| bad())?,
            parts[4].parse().map_err(|_| bad())?,
        ];
        entries.insert(idx, (parts[1].to_string(), rgb));
    }
    Ok(Palette { entries })
}

pub fn render_palette(palette: &Palette) -> String {
    palette
        .entries
        .iter()
        .map(|(i, (name, [r, g, b]))| format!("{i},{name},{r},{g},{b}\n"))
        .collect()
}

/// Parses one-based inclusive band ranges such as `"1-5,196-207,285-320"`
/// into sorted zero-based indices.
pub fn parse_band_list(spec: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::Argument(format!("bad band range {part:?}"));
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim().parse::<usize>().map_err(|_| bad())?, b.trim().parse::<usize>().map_err(|_| bad())?),
            None => {
                let v = part.parse::<usize>().map_err(|_| bad())?;
                (v, v)
            }
        };
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        out.extend(lo - 1..hi);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(rows: usize, cols: usize, bands: usize) -> RasterCube {
        let data = (0..rows * cols * bands).map(|i| i as f32 * 0.5 - 3.0).collect();
        RasterCube::new(rows, cols, bands, data, Interleave::Bip).unwrap()
    }

    #[test]
    fn all_interleaves_decode_to_the_same_cube() {
        let c = cube(3, 4, 5);
        for il in [Interleave::Bsq, Interleave::Bil, Interleave::Bip] {
            let (h, raw) = encode_cube(&c, il);
            let parsed = EnviHeader::parse(&h.render()).unwrap();
            let back = decode_cube(&parsed, &raw, &[]).unwrap();
            assert_eq!(back.data, c.data, "{il:?}");
            assert_eq!(back.interleave, il);
        }
    }

    #[test]
    fn identity_load_keeps_values() {
        let c = cube(2, 2, 3);
        let (h, raw) = encode_cube(&c, Interleave::Bsq);
        assert_eq!(decode_cube(&h, &raw, &[]).unwrap().data, c.data);
    }

    #[test]
    fn band_dropping() {
        let header = EnviHeader {
            samples: 1,
            lines: 1,
            bands: 425,
            data_type: DataType::U8,
            interleave: Interleave::Bsq,
            big_endian: false,
            header_offset: 0,
            fields: BTreeMap::new(),
        };
        let raw: Vec<u8> = (0..425).map(|b| (b % 251) as u8).collect();
        let drop = parse_band_list("1-5,196-207,285-320").unwrap();
        assert_eq!(drop.len(), 5 + 12 + 36);
        let c = decode_cube(&header, &raw, &drop).unwrap();
        assert_eq!(c.bands, 372);
        assert_eq!(c.get(0, 0, 0), 5.0);
        assert!(decode_cube(&header, &raw, &[425]).is_err());
        assert!(matches!(decode_cube(&header, &raw[1..], &[]), Err(Error::Format(_))));
    }

    #[test]
    fn big_endian_int16() {
        let text = "ENVI\nsamples = 2\nlines = 1\nbands = 1\ndata type = 2\ninterleave = bsq\nbyte order = 1\n";
        let h = EnviHeader::parse(text).unwrap();
        let raw = [0xFF, 0xFE, 0x01, 0x00];
        assert_eq!(decode_cube(&h, &raw, &[]).unwrap().data, vec![-2.0, 256.0]);
    }

    #[test]
    fn header_with_brace_block() {
        let text = "ENVI\ndescription = {\n  a scene,\n  two lines}\nsamples = 3\nlines = 2\nbands = 1\n\
                    data type = 1\ninterleave = bip\n";
        let h = EnviHeader::parse(text).unwrap();
        assert_eq!((h.samples, h.lines), (3, 2));
        assert!(h.fields["description"].contains("two lines"));
    }

    #[test]
    fn pgm_round_trip_and_errors() {
        let l = LabelRaster::new(2, 3, vec![0, 1, 2, 3, 1, 0]).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&l)).unwrap(), l);
        let with_comment = b"P5\n# made by hand\n3 2\n255\n\x00\x01\x02\x03\x01\x00";
        assert_eq!(decode_pgm(with_comment).unwrap(), l);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n3 2\n255\n\x00").is_err());
    }

    #[test]
    fn palette_round_trip() {
        let p = parse_palette("1,wheat,255,200,0\n2,built up,128,128,128\n").unwrap();
        assert_eq!(p.entries[&2].0, "built up");
        assert_eq!(parse_palette(&render_palette(&p)).unwrap(), p);
        assert!(parse_palette("1,wheat,255,200").is_err());
    }

    #[test]
    fn band_list_parsing() {
        assert_eq!(parse_band_list("1-3, 7").unwrap(), vec![0, 1, 2, 6]);
        assert_eq!(parse_band_list("").unwrap(), Vec::<usize>::new());
        assert!(parse_band_list("0-2").is_err());
        assert!(parse_band_list("5-2").is_err());
    }
}
