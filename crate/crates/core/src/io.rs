//! File formats: TSV and `FVEC1` binary feature matrices, label tables and PGM images.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::feature::{FeatureMatrix, FeatureVector, PixelGrid};
use crate::scalar::Real;

pub const FVEC_MAGIC: &[u8] = b"FVEC1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Tsv,
    Binary,
}

impl FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(Self::Tsv),
            "binary" | "bin" => Ok(Self::Binary),
            _ => Err(Error::invalid(format!("unknown feature format `{s}`"))),
        }
    }
}

pub fn load_features<T: Real>(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix<T>> {
    let bytes = fs::read(path)?;
    match format {
        FeatureFormat::Tsv => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::malformed(format!("{}: not UTF-8", path.display())))?;
            parse_tsv(text)
        }
        FeatureFormat::Binary => decode_binary(&bytes),
    }
    .map_err(|e| match e {
        Error::MalformedFile(msg) => Error::MalformedFile(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_features<T: Real>(
    matrix: &FeatureMatrix<T>,
    path: &Path,
    format: FeatureFormat,
) -> Result<()> {
    let bytes = match format {
        FeatureFormat::Tsv => format_tsv(matrix)?.into_bytes(),
        FeatureFormat::Binary => encode_binary(matrix)?,
    };
    write_atomic(path, &bytes)
}

pub fn parse_tsv<T: Real>(text: &str) -> Result<FeatureMatrix<T>> {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        let values = fields
            .map(|f| parse_real::<T>(f).map_err(|e| Error::malformed(format!("line {}: {e}", lineno + 1))))
            .collect::<Result<Vec<T>>>()?;
        let row = FeatureVector::new(values)
            .map_err(|e| Error::malformed(format!("line {}: {e}", lineno + 1)))?;
        ids.push(id.to_string());
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::malformed("empty feature matrix"));
    }
    FeatureMatrix::new(ids, rows).map_err(|e| Error::malformed(e.to_string()))
}

pub fn format_tsv<T: Real>(matrix: &FeatureMatrix<T>) -> Result<String> {
    if matrix.is_empty() {
        return Err(Error::EmptyInput("refusing to write an empty feature matrix"));
    }
    let mut out = String::new();
    for (id, row) in matrix.iter() {
        out.push_str(id);
        for v in row.iter() {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn encode_binary<T: Real>(matrix: &FeatureMatrix<T>) -> Result<Vec<u8>> {
    if matrix.is_empty() {
        return Err(Error::EmptyInput("refusing to write an empty feature matrix"));
    }
    let mut out = Vec::with_capacity(FVEC_MAGIC.len() + 8 + 4 * matrix.len() * matrix.dim());
    out.extend_from_slice(FVEC_MAGIC);
    encode_block(matrix.rows(), &mut out)?;
    for id in matrix.ids() {
        out.extend_from_slice(id.as_bytes());
        out.push(b'\n');
    }
    Ok(out)
}

pub fn decode_binary<T: Real>(bytes: &[u8]) -> Result<FeatureMatrix<T>> {
    let rest = bytes
        .strip_prefix(FVEC_MAGIC)
        .ok_or_else(|| Error::malformed("bad magic"))?;
    let mut cursor = Cursor::new(rest);
    let rows = decode_block::<T>(&mut cursor)?;
    let tail = std::str::from_utf8(cursor.remaining())
        .map_err(|_| Error::malformed("ids are not UTF-8"))?;
    let ids: Vec<String> = tail.split_terminator('\n').map(str::to_string).collect();
    if ids.len() != rows.len() || !tail.ends_with('\n') {
        return Err(Error::malformed(format!(
            "expected {} newline-terminated ids, found {}",
            rows.len(),
            ids.len()
        )));
    }
    FeatureMatrix::new(ids, rows).map_err(|e| Error::malformed(e.to_string()))
}

/// `u32 n, u32 d`, then `n * d` little-endian `f32` values row-major.
pub(crate) fn encode_block<T: Real>(rows: &[FeatureVector<T>], out: &mut Vec<u8>) -> Result<()> {
    let n = u32::try_from(rows.len()).map_err(|_| Error::invalid("too many rows"))?;
    let d = rows.first().map_or(0, |r| r.dim());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for row in rows {
        row.check_dim(d)?;
        for &v in row.iter() {
            let f = v.as_f64() as f32;
            if !f.is_finite() {
                return Err(Error::invalid("value overflows f32"));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(())
}

pub(crate) fn decode_block<T: Real>(cursor: &mut Cursor<'_>) -> Result<Vec<FeatureVector<T>>> {
    let n = cursor.u32()? as usize;
    let d = cursor.u32()? as usize;
    if n == 0 {
        return Err(Error::malformed("empty feature matrix"));
    }
    if d == 0 {
        return Err(Error::malformed("zero dimension"));
    }
    let payload = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::malformed("size overflow"))?;
    let raw = cursor.take(payload)?;
    let rows = raw
        .chunks_exact(d * 4)
        .map(|chunk| {
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .map(|f| T::of(f as f64))
                .collect();
            FeatureVector::new(values).map_err(|e| Error::malformed(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows)
}

/// Little-endian reader over a byte slice; every short read is `MalformedFile`.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::malformed("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub(crate) fn remaining(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

pub(crate) fn parse_real<T: Real>(s: &str) -> Result<T> {
    let v: T = s
        .trim()
        .parse()
        .map_err(|_| Error::malformed(format!("bad number `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::malformed(format!("non-finite value `{s}`")));
    }
    Ok(v)
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// `id<TAB>label` lines. An id may repeat to carry several labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    entries: Vec<(String, Vec<String>)>,
    index: HashMap<String, usize>,
}

impl LabelTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = LabelTable::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, label) = line
                .split_once('\t')
                .filter(|(id, label)| !id.is_empty() && !label.is_empty() && !label.contains('\t'))
                .ok_or_else(|| Error::malformed(format!("line {}: expected id<TAB>label", lineno + 1)))?;
            table.insert(id, label);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::MalformedFile(msg) => Error::MalformedFile(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn insert(&mut self, id: &str, label: &str) {
        let slot = *self.index.entry(id.to_string()).or_insert_with(|| {
            self.entries.push((id.to_string(), Vec::new()));
            self.entries.len() - 1
        });
        let labels = &mut self.entries[slot].1;
        if !labels.iter().any(|l| l == label) {
            labels.push(label.to_string());
        }
    }

    pub fn labels(&self, id: &str) -> Option<&[String]> {
        self.index.get(id).map(|&i| self.entries[i].1.as_slice())
    }

    /// The unique label of `id`; errors if the id carries several.
    pub fn single(&self, id: &str) -> Result<&str> {
        match self.labels(id) {
            None => Err(Error::UnknownId(id.to_string())),
            Some([one]) => Ok(one),
            Some(_) => Err(Error::invalid(format!("id `{id}` has several labels"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(id, l)| (id.as_str(), l.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reads a binary (`P5`) or ASCII (`P2`) PGM image.
pub fn load_pgm(path: &Path) -> Result<PixelGrid> {
    let bytes = fs::read(path)?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::MalformedFile(msg) => Error::MalformedFile(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Width and height from a PGM header without decoding pixels.
pub fn pgm_size(path: &Path) -> Result<(u32, u32)> {
    let bytes = fs::read(path)?;
    let (_, w, h, _, _) = pgm_header(&bytes)?;
    Ok((w, h))
}

fn pgm_header(bytes: &[u8]) -> Result<(bool, u32, u32, u32, usize)> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
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
            return Err(Error::malformed("truncated PGM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or(""));
    }
    let binary = match tokens[0] {
        "P5" => true,
        "P2" => false,
        other => return Err(Error::malformed(format!("unsupported PGM magic `{other}`"))),
    };
    let num = |s: &str| -> Result<u32> {
        s.parse()
            .map_err(|_| Error::malformed(format!("bad PGM header field `{s}`")))
    };
    let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::malformed("invalid PGM dimensions"));
    }
    // single whitespace byte separates the header from binary data
    Ok((binary, w, h, maxval, pos + 1))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<PixelGrid> {
    let (binary, w, h, maxval, offset) = pgm_header(bytes)?;
    let n = w as usize * h as usize;
    let max = maxval as f64;
    let data: Vec<f64> = if binary {
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        let raw = bytes
            .get(offset..offset + need)
            .ok_or_else(|| Error::malformed("truncated PGM data"))?;
        if wide {
            raw.chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / max)
                .collect()
        } else {
            raw.iter().map(|&b| b as f64 / max).collect()
        }
    } else {
        let text = std::str::from_utf8(bytes.get(offset..).unwrap_or_default())
            .map_err(|_| Error::malformed("PGM data is not ASCII"))?;
        let values = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| {
                t.parse::<u32>()
                    .map(|v| v as f64 / max)
                    .map_err(|_| Error::malformed(format!("bad PGM sample `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != n {
            return Err(Error::malformed("truncated PGM data"));
        }
        values
    };
    if data.iter().any(|&v| v > 1.0) {
        return Err(Error::malformed("PGM sample exceeds maxval"));
    }
    PixelGrid::new(w, h, data)
}

/// Encodes an 8-bit binary PGM.
pub fn encode_pgm(image: &PixelGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| (v * 255.0).round() as u8));
    out
}
