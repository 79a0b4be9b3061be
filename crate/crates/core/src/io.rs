//! File formats: OTPC v1 point tables, the CSV interop variant, and label
//! files.
//!
//! OTPC v1 layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size         field
//! 0       4            magic "OTPC" (0x4F 0x54 0x50 0x43)
//! 4       2            version u16 = 1
//! 6       2            dim u16
//! 8       8            count u64
//! 16      8*count*dim  points, row-major f64
//! ...     8*count      weights f64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const OTPC_MAGIC: [u8; 4] = *b"OTPC";
pub const OTPC_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

/// A weighted table of points, not yet validated as a transport target.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTable {
    pub dim: usize,
    /// Row-major, `count * dim` values.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PointTable {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > u16::MAX as usize {
            return Err(Error::Cloud(format!("dimension {dim} out of range 1..=65535")));
        }
        if !points.len().is_multiple_of(dim) || points.len() / dim != weights.len() {
            return Err(Error::Cloud(format!(
                "{} values and {} weights do not form rows of dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        Ok(Self { dim, points, weights })
    }

    /// Rows with equal weights `1 / count`.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        let count = points.len().checked_div(dim).unwrap_or(0);
        let w = if count == 0 { 0.0 } else { 1.0 / count as f64 };
        Self::new(dim, points, vec![w; count])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Shape {
                expected: dim,
                got: rows[bad].len(),
            });
        }
        Self::uniform(dim, rows.concat())
    }

    pub fn count(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn to_otpc_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (self.points.len() + self.weights.len()));
        buf.extend_from_slice(&OTPC_MAGIC);
        buf.extend_from_slice(&OTPC_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u16).to_le_bytes());
        buf.extend_from_slice(&(self.count() as u64).to_le_bytes());
        for v in self.points.iter().chain(&self.weights) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_otpc_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(path, "truncated OTPC header"));
        }
        if bytes[..4] != OTPC_MAGIC {
            return Err(Error::format(path, "bad magic, expected \"OTPC\""));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != OTPC_VERSION {
            return Err(Error::format(path, format!("unsupported OTPC version {version}")));
        }
        let dim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice"));
        let count = usize::try_from(count).map_err(|_| Error::format(path, "count overflows usize"))?;
        let expected = count
            .checked_mul(dim + 1)
            .and_then(|v| v.checked_mul(8))
            .and_then(|v| v.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::format(path, "count overflows"))?;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("expected {expected} bytes for {count} x {dim}, found {}", bytes.len()),
            ));
        }
        let mut values = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let points: Vec<f64> = values.by_ref().take(count * dim).collect();
        let weights: Vec<f64> = values.collect();
        Self::new(dim, points, weights).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Parses the CSV variant: a `dim=<d>,count=<n>` header, then one point
    /// per line with an optional trailing weight column. Without weights the
    /// rows are weighted uniformly.
    pub fn from_csv_str(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::format(path, "empty CSV"))?;
        let mut dim = None;
        let mut count = None;
        for field in header.split(',') {
            let (key, val) = field
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("bad header field {field:?}")))?;
            let val: usize = val
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("bad header value {val:?}")))?;
            match key.trim() {
                "dim" => dim = Some(val),
                "count" => count = Some(val),
                other => return Err(Error::format(path, format!("unknown header key {other:?}"))),
            }
        }
        let (dim, count) = match (dim, count) {
            (Some(d), Some(c)) => (d, c),
            _ => return Err(Error::format(path, "header must be dim=<d>,count=<n>")),
        };
        let mut points = Vec::with_capacity(dim * count);
        let mut weights = Vec::with_capacity(count);
        let mut weighted = None;
        for (lineno, line) in lines.enumerate() {
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("row {lineno}: {e}")))?;
            let has_weight = match vals.len() {
                n if n == dim => false,
                n if n == dim + 1 => true,
                n => {
                    return Err(Error::format(
                        path,
                        format!("row {lineno}: {n} columns, expected {dim} or {}", dim + 1),
                    ))
                }
            };
            if *weighted.get_or_insert(has_weight) != has_weight {
                return Err(Error::format(path, format!("row {lineno}: weight column used inconsistently")));
            }
            points.extend_from_slice(&vals[..dim]);
            if has_weight {
                weights.push(vals[dim]);
            }
        }
        let rows = points.len() / dim.max(1);
        if rows != count {
            return Err(Error::format(path, format!("header says {count} rows, found {rows}")));
        }
        if weighted == Some(true) {
            Self::new(dim, points, weights)
        } else {
            Self::uniform(dim, points)
        }
        .map_err(|e| Error::format(path, e.to_string()))
    }

    /// Reads OTPC, or the CSV variant when the file does not start with the
    /// OTPC magic.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(&OTPC_MAGIC) {
            Self::from_otpc_bytes(&bytes, path)
        } else {
            let text = std::str::from_utf8(&bytes).map_err(|_| Error::format(path, "neither OTPC nor UTF-8 CSV"))?;
            Self::from_csv_str(text, path)
        }
    }

    pub fn write_otpc(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), &self.to_otpc_bytes())
    }
}

/// Reads a label file: optional `label` header, then one class index per line.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && *l != "label")
        .enumerate()
        .map(|(i, l)| {
            l.parse::<usize>()
                .map_err(|_| Error::format(path, format!("row {i}: bad label {l:?}")))
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut s = String::from("label\n");
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    write_bytes(path.as_ref(), s.as_bytes())
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
