//! On-disk formats and dataset assembly.
//!
//! * `.semb`: binary `N × L × D` little-endian `f32` embedding tensor.
//! * manifest: JSON description of the items behind each tensor row.
//! * `.vec`: textual n-gram vector table.

mod manifest;
mod semb;
mod vec_table;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::Matrix;

pub use manifest::{read_manifest, write_manifest, DatasetManifest, Items, PosiItem, SpanItem, Task};
pub use semb::{read_semb, write_semb, EmbeddingTensor, SEMB_MAGIC, SEMB_VERSION};
pub use vec_table::{read_vec_table, write_vec_table, MorphTable};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("unsupported version {found} in {path} (expected {expected})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("corrupt payload in {path}: expected {expected} bytes, found {found}")]
    Corrupt {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("alignment error: tensor has {rows} rows but manifest describes {items}")]
    Alignment { rows: usize, items: usize },
    #[error("unsupported task {0:?} for this operation")]
    UnsupportedTask(Task),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: &Path, msg: impl Into<String>) -> Self {
        DataError::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Which layers to average. `All` means every layer in the tensor.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerSubset {
    #[default]
    All,
    Only(BTreeSet<usize>),
}

impl LayerSubset {
    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        LayerSubset::Only(indices.into_iter().collect())
    }

    pub fn resolve(&self, n_layers: usize) -> Result<Vec<usize>> {
        match self {
            LayerSubset::All => {
                if n_layers == 0 {
                    return Err(DataError::Argument("tensor has no layers".into()));
                }
                Ok((0..n_layers).collect())
            }
            LayerSubset::Only(set) => {
                if set.is_empty() {
                    return Err(DataError::Argument("empty layer subset".into()));
                }
                if let Some(&bad) = set.iter().find(|&&l| l >= n_layers) {
                    return Err(DataError::Argument(format!(
                        "layer {bad} out of range for a {n_layers}-layer tensor"
                    )));
                }
                Ok(set.iter().copied().collect())
            }
        }
    }
}

impl std::str::FromStr for LayerSubset {
    type Err = DataError;

    /// `all`, or comma-separated indices and inclusive ranges such as `0-3,8`.
    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("all") {
            return Ok(LayerSubset::All);
        }
        let bad = || DataError::Argument(format!("cannot parse layer subset {text:?}"));
        let mut set = BTreeSet::new();
        for part in text.split(',').map(str::trim) {
            match part.split_once('-') {
                Some((a, b)) => {
                    let a: usize = a.trim().parse().map_err(|_| bad())?;
                    let b: usize = b.trim().parse().map_err(|_| bad())?;
                    if a > b {
                        return Err(bad());
                    }
                    set.extend(a..=b);
                }
                None => {
                    set.insert(part.parse().map_err(|_| bad())?);
                }
            }
        }
        Ok(LayerSubset::Only(set))
    }
}

impl std::fmt::Display for LayerSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let set = match self {
            LayerSubset::All => return f.write_str("all"),
            LayerSubset::Only(set) => set,
        };
        let v: Vec<usize> = set.iter().copied().collect();
        let mut parts = Vec::new();
        let mut i = 0;
        while i < v.len() {
            let mut j = i;
            while j + 1 < v.len() && v[j + 1] == v[j] + 1 {
                j += 1;
            }
            parts.push(if i == j { v[i].to_string() } else { format!("{}-{}", v[i], v[j]) });
            i = j + 1;
        }
        f.write_str(&parts.join(","))
    }
}

impl serde::Serialize for LayerSubset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for LayerSubset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Averages the selected layers of every item into an `N × D` matrix.
pub fn pool_layers(tensor: &EmbeddingTensor, subset: &LayerSubset) -> Result<Matrix> {
    let layers = subset.resolve(tensor.n_layers)?;
    let (n, d) = (tensor.n_items, tensor.dim);
    let mut out = Array2::<f32>::zeros((n, d));
    let denom = layers.len() as f64;
    crate::parallel::for_each_row_mut(&mut out, |i, mut row| {
        // f64 accumulation keeps the result independent of subset order.
        let mut acc = vec![0f64; d];
        for &l in &layers {
            for (a, &v) in acc.iter_mut().zip(tensor.layer(i, l)) {
                *a += v as f64;
            }
        }
        for (r, a) in row.iter_mut().zip(acc) {
            *r = (a / denom) as f32;
        }
    });
    Ok(out)
}

/// Pooled embedding matrix paired with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub matrix: Matrix,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn new(matrix: Matrix, manifest: DatasetManifest) -> Result<Self> {
        let items = manifest.row_count();
        if matrix.nrows() != items {
            return Err(DataError::Alignment {
                rows: matrix.nrows(),
                items,
            });
        }
        Ok(Dataset { matrix, manifest })
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn task(&self) -> Task {
        self.manifest.task
    }
}

/// Reads a tensor and manifest, pools the requested layers and checks alignment.
pub fn load_dataset(
    semb_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
    layers: &LayerSubset,
) -> Result<Dataset> {
    let tensor = read_semb(semb_path)?;
    let manifest = read_manifest(manifest_path)?;
    if tensor.n_items != manifest.row_count() {
        return Err(DataError::Alignment {
            rows: tensor.n_items,
            items: manifest.row_count(),
        });
    }
    let matrix = pool_layers(&tensor, layers)?;
    Dataset::new(matrix, manifest)
}
