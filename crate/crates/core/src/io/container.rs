//! Little-endian binary matrix container shared by point clouds, feature
//! files and field parameters.
//!
//! Layout: `b"MTRX"`, `u32` element width (4 = f32, 8 = f64), `u64` rows,
//! `u64` columns, then the row-major payload.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MTRX";
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Dense row-major matrix as stored on disk. Values are held as `f64`;
/// f32 payloads widen exactly, so read → write is bitwise lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub rows: usize,
    pub cols: usize,
    pub precision: Precision,
    pub values: Vec<f64>,
}

impl RawMatrix {
    pub fn new(rows: usize, cols: usize, precision: Precision, values: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(values.len()) {
            return Err(Error::Shape(format!("{rows}×{cols} matrix given {} values", values.len())));
        }
        Ok(RawMatrix { rows, cols, precision, values })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * self.precision.width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.precision.width() as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.values {
            match self.precision {
                Precision::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }

    /// Decodes a container; `origin` only labels diagnostics.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let err = |msg: String| Error::parse(origin, msg);
        if bytes.len() < HEADER_LEN {
            return Err(err(format!("header truncated: {} of {HEADER_LEN} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(err(format!("bad magic {:?} at offset 0", &bytes[..4])));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let precision = match u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) {
            4 => Precision::F32,
            8 => Precision::F64,
            w => return Err(err(format!("unsupported element width {w} at offset 4"))),
        };
        let (rows, cols) = (u64_at(8), u64_at(16));
        let count = rows
            .checked_mul(cols)
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| err(format!("dimensions {rows}×{cols} overflow")))?;
        let need = count
            .checked_mul(precision.width())
            .ok_or_else(|| err(format!("dimensions {rows}×{cols} overflow")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != need {
            let w = precision.width();
            let whole = payload.len() / w;
            return Err(err(format!(
                "count mismatch: header declares {rows}×{cols} values ({need} bytes) but payload has {} bytes; \
                 data ends at offset {} (value {whole}, row {})",
                payload.len(),
                HEADER_LEN + payload.len(),
                if cols > 0 { whole as u64 / cols } else { 0 }
            )));
        }
        let values: Vec<f64> = match precision {
            Precision::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64).collect(),
            Precision::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect(),
        };
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(err(format!(
                "non-finite value at row {}, column {} (offset {})",
                i / cols as usize,
                i % cols as usize,
                HEADER_LEN + i * precision.width()
            )));
        }
        Ok(RawMatrix { rows: rows as usize, cols: cols as usize, precision, values })
    }
}

pub fn write_matrix(path: impl AsRef<Path>, m: &RawMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, m.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<RawMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RawMatrix::from_bytes(&bytes, path)
}
