use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{DataError, Result};

pub const SEMB_MAGIC: &[u8; 4] = b"SEMB";
pub const SEMB_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Per-layer embeddings for `n_items` items, stored item-major, then layer, then dim.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    pub n_items: usize,
    pub n_layers: usize,
    pub dim: usize,
    values: Vec<f32>,
}

impl EmbeddingTensor {
    pub fn new(n_items: usize, n_layers: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        let expected = n_items
            .checked_mul(n_layers)
            .and_then(|x| x.checked_mul(dim))
            .ok_or_else(|| DataError::Validation("tensor shape overflows".into()))?;
        if values.len() != expected {
            return Err(DataError::Validation(format!(
                "tensor {n_items}x{n_layers}x{dim} needs {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Validation(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(EmbeddingTensor {
            n_items,
            n_layers,
            dim,
            values,
        })
    }

    /// Wraps an `N × D` matrix as a single-layer tensor.
    pub fn from_matrix(m: &crate::Matrix) -> Result<Self> {
        let (n, d) = m.dim();
        Self::new(n, 1, d, m.iter().copied().collect())
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn layer(&self, item: usize, layer: usize) -> &[f32] {
        let start = (item * self.n_layers + layer) * self.dim;
        &self.values[start..start + self.dim]
    }
}

pub fn write_semb(tensor: &EmbeddingTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if tensor.values.iter().any(|v| !v.is_finite()) {
        return Err(DataError::Validation("refusing to write non-finite values".into()));
    }
    let dims = [tensor.n_items, tensor.n_layers, tensor.dim];
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(SEMB_MAGIC);
    header.extend_from_slice(&SEMB_VERSION.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d)
            .map_err(|_| DataError::Validation(format!("dimension {d} exceeds u32")))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    let file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&header).map_err(|e| DataError::io(path, e))?;
    for v in &tensor.values {
        w.write_all(&v.to_le_bytes())
            .map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))?;
    Ok(())
}

pub fn read_semb(path: impl AsRef<Path>) -> Result<EmbeddingTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != SEMB_MAGIC {
        return Err(DataError::format(path, "bad magic, expected SEMB"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Corrupt {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != SEMB_VERSION {
        return Err(DataError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: SEMB_VERSION,
        });
    }
    let (n, l, d) = (word(2) as u64, word(3) as u64, word(4) as u64);
    let expected = HEADER_LEN as u64 + 4 * n * l * d;
    if bytes.len() as u64 != expected {
        return Err(DataError::Corrupt {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingTensor::new(n as usize, l as usize, d as usize, values)
}
