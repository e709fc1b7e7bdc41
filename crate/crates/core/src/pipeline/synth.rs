use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dataio::{write_manifest, write_semb, DatasetManifest, EmbeddingTensor, PosiItem};
use crate::net::{derive_seed, RngState};
use crate::Matrix;

const TOKENS_PER_SENTENCE: usize = 20;
const SAMPLE_TAG: u64 = 0x5a;

/// Gaussian clusters in a low-dimensional latent space, mapped linearly into
/// the ambient space with isotropic noise added.
///
/// Cluster means have unit expected norm and the mixing map roughly
/// preserves norms, so rows are O(1) whatever the dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub k: usize,
    pub n: usize,
    pub latent_dim: usize,
    pub ambient_dim: usize,
    /// Standard deviation of the ambient noise, per coordinate.
    pub noise: f32,
    /// Expected within-cluster radius in latent space.
    pub spread: f32,
    /// Ratio between the largest and smallest within-cluster standard
    /// deviation across latent axes; `1` gives spherical clusters.
    pub anisotropy: f32,
    /// Fixes the means and the mixing map.
    pub seed: u64,
    /// Fixes which points are drawn; defaults to `seed`.
    pub sample_seed: Option<u64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            k: 5,
            n: 2000,
            latent_dim: 10,
            ambient_dim: 50,
            noise: 0.1,
            spread: 0.2,
            anisotropy: 1.0,
            seed: 0,
            sample_seed: None,
        }
    }
}

/// The fixed generative parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub means: Matrix,
    pub mixing: Matrix,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.k == 0 || self.latent_dim == 0 || self.ambient_dim == 0 {
            return bad("k, latent_dim and ambient_dim must be positive");
        }
        if self.k > self.n {
            return bad("k must not exceed n");
        }
        if !(self.noise >= 0.0) || !(self.spread >= 0.0) {
            return bad("noise and spread must be non-negative");
        }
        if !(self.anisotropy >= 1.0) {
            return bad("anisotropy must be at least 1");
        }
        Ok(())
    }

    pub fn generator(&self) -> Generator {
        let mut rng = RngState::new(self.seed);
        let mean_sd = 1.0 / (self.latent_dim as f32).sqrt();
        let mix_sd = 1.0 / (self.ambient_dim as f32).sqrt();
        let means = gaussian((self.k, self.latent_dim), mean_sd, &mut rng);
        let mixing = gaussian((self.latent_dim, self.ambient_dim), mix_sd, &mut rng);
        Generator { means, mixing }
    }

    /// Samples `n` points; labels are balanced and shuffled.
    pub fn sample(&self) -> Result<(Matrix, Vec<usize>), PipelineError> {
        self.validate()?;
        let gen = self.generator();
        let mut rng = RngState::new(derive_seed(self.sample_seed.unwrap_or(self.seed), SAMPLE_TAG));
        let mut labels: Vec<usize> = (0..self.n).map(|i| i % self.k).collect();
        rng.shuffle(&mut labels);
        let mut latent = gaussian((self.n, self.latent_dim), 1.0, &mut rng);
        let axis_sd = self.axis_sd();
        for mut row in latent.rows_mut() {
            row *= &axis_sd;
        }
        for (mut row, &c) in latent.rows_mut().into_iter().zip(&labels) {
            row += &gen.means.row(c);
        }
        let mut x = latent.dot(&gen.mixing);
        x += &gaussian((self.n, self.ambient_dim), self.noise, &mut rng);
        Ok((x, labels))
    }

    /// Per-axis within-cluster standard deviations, log-spaced and scaled
    /// so that the expected radius equals `spread`.
    fn axis_sd(&self) -> ndarray::Array1<f32> {
        let l = self.latent_dim;
        let raw = ndarray::Array1::from_shape_fn(l, |i| {
            let t = if l > 1 { i as f32 / (l - 1) as f32 } else { 0.0 };
            self.anisotropy.powf(t)
        });
        let rms = (raw.mapv(|v| v * v).sum() / l as f32).sqrt();
        raw * (self.spread / (rms * (l as f32).sqrt()))
    }

    pub fn manifest(&self, labels: &[usize]) -> DatasetManifest {
        let label_set = (0..self.k).map(|c| format!("C{c}")).collect();
        let items = labels
            .iter()
            .enumerate()
            .map(|(i, &c)| PosiItem {
                sent: i / TOKENS_PER_SENTENCE,
                tok: i % TOKENS_PER_SENTENCE,
                surface: format!("w{i}"),
                gold: Some(format!("C{c}")),
            })
            .collect();
        DatasetManifest::posi(label_set, items).expect("generated manifest is valid")
    }

    /// Writes `<stem>.semb` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), PipelineError> {
        let (x, labels) = self.sample()?;
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let semb = dir.join(format!("{stem}.semb"));
        let manifest = dir.join(format!("{stem}.json"));
        write_semb(&EmbeddingTensor::from_matrix(&x)?, &semb)?;
        write_manifest(&self.manifest(&labels), &manifest)?;
        Ok((semb, manifest))
    }
}

fn gaussian(shape: (usize, usize), sd: f32, rng: &mut RngState) -> Matrix {
    Array2::from_shape_fn(shape, |_| {
        let z: f32 = StandardNormal.sample(rng.inner());
        z * sd
    })
}
