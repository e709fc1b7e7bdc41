use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dataio::LayerSubset;
use crate::dec::{HyperParams, DEFAULT_RESTARTS};
use crate::feats::{default_excluded_labels, SpanMode};
use crate::sae::{AutoencoderSpec, ContextMode, ContextSpec, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Input files and the layers to average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub semb: PathBuf,
    pub manifest: PathBuf,
    #[serde(default)]
    pub layers: LayerSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphConfig {
    pub vec: PathBuf,
    #[serde(default = "default_order")]
    pub order: usize,
}

fn default_order() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpanConfig {
    pub mode: SpanMode,
    /// Train only on the spans that are also evaluated.
    pub train_filtered: bool,
    pub excluded_labels: BTreeSet<String>,
}

impl Default for SpanConfig {
    fn default() -> Self {
        SpanConfig {
            mode: SpanMode::EndpointsConcat,
            train_filtered: true,
            excluded_labels: default_excluded_labels(),
        }
    }
}

/// Clustering-stage settings. `m` defaults to the size of the label set;
/// `cluster_epochs`, when given, replaces `iterations`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub m: Option<usize>,
    pub nu: f32,
    pub lambda: f32,
    pub iterations: Option<usize>,
    pub cluster_epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub target_update_interval: usize,
    pub kmeans_restarts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        ClusterConfig {
            m: None,
            nu: hp.nu,
            lambda: hp.lambda,
            iterations: None,
            cluster_epochs: None,
            batch_size: hp.batch_size,
            learning_rate: hp.learning_rate,
            momentum: hp.momentum,
            target_update_interval: hp.target_update_interval,
            kmeans_restarts: DEFAULT_RESTARTS,
        }
    }
}

impl ClusterConfig {
    /// Resolves defaults against the data: `labels` is the label-set size,
    /// `n` the number of training items.
    pub fn hyper_params(&self, labels: usize, n: usize, seed: u64) -> Result<HyperParams, PipelineError> {
        let m = match self.m {
            Some(m) => m,
            None if labels >= 2 => labels,
            None => {
                return Err(PipelineError::Config(
                    "cluster.m is required when the manifest has fewer than two labels".into(),
                ))
            }
        };
        let mut hp = HyperParams {
            m,
            nu: self.nu,
            lambda: self.lambda,
            iterations: self.iterations.unwrap_or(HyperParams::default().iterations),
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            target_update_interval: self.target_update_interval,
            kmeans_restarts: self.kmeans_restarts,
            seed,
        };
        if let Some(epochs) = self.cluster_epochs {
            hp.iterations = hp.iterations_for_epochs(n, epochs);
        }
        hp.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(hp)
    }
}

/// Value lists for `ablate`, one per axis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub layers: Vec<LayerSubset>,
    pub ngram_order: Vec<usize>,
    pub span_mode: Vec<SpanMode>,
    pub context_mode: Vec<ContextMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub data: DataConfig,
    #[serde(default)]
    pub morph: Option<MorphConfig>,
    #[serde(default)]
    pub spans: SpanConfig,
    #[serde(default)]
    pub context: ContextSpec,
    #[serde(default)]
    pub autoencoder: AutoencoderSpec,
    #[serde(default)]
    pub pretrain: TrainConfig,
    #[serde(default)]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub ablation: AblationConfig,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

impl RunConfig {
    pub fn new(semb: impl Into<PathBuf>, manifest: impl Into<PathBuf>) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            data: DataConfig {
                semb: semb.into(),
                manifest: manifest.into(),
                layers: LayerSubset::All,
            },
            morph: None,
            spans: SpanConfig::default(),
            context: ContextSpec::default(),
            autoencoder: AutoencoderSpec::default(),
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::default(),
            cluster: ClusterConfig::default(),
            seeds: default_seeds(),
            out: None,
            ablation: AblationConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.semb);
        fix(&mut self.data.manifest);
        if let Some(m) = &mut self.morph {
            fix(&mut m.vec);
        }
        if let Some(o) = &mut self.out {
            fix(o);
        }
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} unsupported (expected {CONFIG_VERSION})", self.version));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        let unique: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if unique.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if let Some(m) = &self.morph {
            if m.order == 0 {
                return bad("morph.order must be at least 1".into());
            }
        }
        if self.context.mode == ContextMode::Cbow {
            if self.context.width == 0 {
                return bad("context.width must be at least 1".into());
            }
            if self.autoencoder.tied {
                return bad("tied weights cannot be combined with CBoW context".into());
            }
        }
        let probe = AutoencoderSpec { input_dim: 1, ..self.autoencoder.clone() };
        probe.validate().map_err(|e| PipelineError::Config(format!("autoencoder: {e}")))?;
        self.pretrain.validate().map_err(|e| PipelineError::Config(format!("pretrain: {e}")))?;
        self.finetune.validate().map_err(|e| PipelineError::Config(format!("finetune: {e}")))?;
        if self.cluster.iterations.is_some() && self.cluster.cluster_epochs.is_some() {
            return bad("cluster.iterations and cluster.cluster_epochs are mutually exclusive".into());
        }
        let m = self.cluster.m.unwrap_or(2);
        self.cluster.hyper_params(m, m, 0)?;
        Ok(())
    }
}
