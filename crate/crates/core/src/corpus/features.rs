//! Image feature tables: `VCFEAT1` binary files or JSON lines.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"VCFEAT1";

/// Row-major single-precision feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

fn malformed(offset: usize, reason: impl Into<String>) -> Error {
    Error::MalformedFeatures { offset, reason: reason.into() }
}

impl FeatureTable {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::LengthMismatch { left: rows * dim, right: data.len() });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(malformed(0, format!("non-finite value in row {}", i / dim.max(1))));
        }
        Ok(FeatureTable { rows, dim, data })
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data[i * self.dim..(i + 1) * self.dim].iter().map(|&x| x as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(15 + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 15 || &bytes[..7] != MAGIC {
            return Err(malformed(0, "missing VCFEAT1 header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (rows, dim) = (u32_at(7), u32_at(11));
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| malformed(7, "header sizes overflow"))?;
        let body = &bytes[15..];
        if body.len() != expected {
            let offset = 15 + body.len().min(expected);
            return Err(malformed(offset, format!("expected {} data bytes, found {}", expected, body.len())));
        }
        let mut data = Vec::with_capacity(rows * dim);
        for (k, chunk) in body.chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return Err(malformed(15 + 4 * k, "non-finite value"));
            }
            data.push(x);
        }
        Ok(FeatureTable { rows, dim, data })
    }

    /// One JSON array per non-blank line.
    pub fn from_json_lines(text: &str) -> Result<Self> {
        let mut data = Vec::new();
        let (mut rows, mut dim) = (0, None);
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len();
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f32> = serde_json::from_str(line).map_err(|e| malformed(start, e.to_string()))?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(malformed(start, format!("row has {} values, expected {}", row.len(), d)));
                }
                _ => {}
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(malformed(start, "non-finite value"));
            }
            data.extend(row);
            rows += 1;
        }
        Ok(FeatureTable { rows, dim: dim.unwrap_or(0), data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(MAGIC) {
            return Self::from_bytes(&bytes);
        }
        let text = std::str::from_utf8(&bytes).map_err(|e| malformed(e.valid_up_to(), "not UTF-8 JSON lines"))?;
        Self::from_json_lines(text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}
