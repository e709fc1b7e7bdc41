use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Axis;

use super::{PipelineError, RunConfig};
use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::dataio::{
    load_dataset, pool_layers, read_manifest, read_semb, read_vec_table, write_semb,
    DatasetManifest, EmbeddingTensor, LayerSubset, Task,
};
use crate::dec::{dec_fit, predict_hard, transfer_apply, ClusterModel, Telemetry};
use crate::eval::{contingency, m1_accuracy, mapped_f1, EvalReport, MappingMode, RunReport};
use crate::feats::{augment_tokens, filter_spans, span_features, FeatureSpec, Morph};
use crate::net::derive_seed;
use crate::sae::{
    build_cbow_pairs, finetune_end2end, pretrain_layerwise, AutoencoderSpec, ContextMode,
    TrainingPairs,
};
use crate::Matrix;

type Result<T> = std::result::Result<T, PipelineError>;

const PRETRAIN_TAG: u64 = 1;
const FINETUNE_TAG: u64 = 2;
const CLUSTER_TAG: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Also write per-epoch autoencoder loss curves.
    pub trace: bool,
}

/// Model inputs derived from a config, shared by every seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub task: Task,
    pub label_set: Vec<String>,
    pub pairs: TrainingPairs,
    pub train_gold: Option<Vec<usize>>,
    /// Rows to predict when they differ from the training inputs.
    pub eval_inputs: Option<Matrix>,
    /// Manifest item index of every evaluated row.
    pub eval_items: Vec<usize>,
    pub eval_gold: Option<Vec<usize>>,
}

impl Prepared {
    pub fn eval_matrix(&self) -> &Matrix {
        self.eval_inputs.as_ref().unwrap_or(&self.pairs.inputs)
    }
}

fn pick(gold: &Option<Vec<usize>>, rows: &[usize]) -> Option<Vec<usize>> {
    gold.as_ref().map(|g| rows.iter().map(|&i| g[i]).collect())
}

/// Loads the data and builds training pairs and evaluation rows.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let mut ds = load_dataset(&cfg.data.semb, &cfg.data.manifest, &cfg.data.layers)?;
    let task = ds.task();
    let gold = ds.manifest.gold_ids();
    let label_set = ds.manifest.label_set.clone();
    match task {
        Task::Posi => {
            if let Some(m) = &cfg.morph {
                let table = read_vec_table(&m.vec)?;
                let spec = FeatureSpec {
                    morph: Morph::Ngram { order: m.order, table: &table },
                    span_mode: cfg.spans.mode,
                };
                let (augmented, oov) = augment_tokens(&ds, &spec)?;
                log::info!("morphology: {oov} of {} tokens out of vocabulary", augmented.len());
                ds = augmented;
            }
            let pairs = match cfg.context.mode {
                ContextMode::Plain => TrainingPairs::plain(ds.matrix.clone()),
                ContextMode::Cbow => build_cbow_pairs(&ds, cfg.context.width)?,
            };
            let items: Vec<usize> = (0..ds.len()).collect();
            Ok(Prepared {
                task,
                label_set,
                pairs,
                train_gold: gold.clone(),
                eval_inputs: None,
                eval_items: items,
                eval_gold: gold,
            })
        }
        Task::Colab => {
            if cfg.morph.is_some() {
                return Err(PipelineError::Config("morphology features apply to token data only".into()));
            }
            if cfg.context.mode == ContextMode::Cbow {
                return Err(PipelineError::Config("CBoW context applies to token data only".into()));
            }
            let kept = filter_spans(&ds.manifest, &cfg.spans.excluded_labels);
            if kept.is_empty() {
                return Err(PipelineError::Input("no spans left after filtering".into()));
            }
            let eval_rows = span_features(&ds, &kept, cfg.spans.mode)?;
            let (pairs, train_gold, eval_inputs) = if cfg.spans.train_filtered {
                (TrainingPairs::plain(eval_rows), pick(&gold, &kept), None)
            } else {
                let all: Vec<usize> = (0..ds.manifest.item_count()).collect();
                let train = span_features(&ds, &all, cfg.spans.mode)?;
                (TrainingPairs::plain(train), gold.clone(), Some(eval_rows))
            };
            Ok(Prepared {
                task,
                label_set,
                pairs,
                train_gold,
                eval_inputs,
                eval_gold: pick(&gold, &kept),
                eval_items: kept,
            })
        }
    }
}

/// M1 and both mapped F1 scores of one labelling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub m1: f64,
    pub f1_one_to_one: f64,
    pub f1_many_to_one: f64,
}

pub fn score(pred: &[usize], gold: &[usize]) -> Result<Scores> {
    Ok(Scores {
        m1: m1_accuracy(&contingency(pred, gold, 0, 0)?)?,
        f1_one_to_one: mapped_f1(pred, gold, MappingMode::OneToOne)?.f1,
        f1_many_to_one: mapped_f1(pred, gold, MappingMode::ManyToOne)?.f1,
    })
}

fn run_report(seed: u64, pred: &[usize], gold: Option<&[usize]>, trace: Vec<(usize, f64)>) -> Result<RunReport> {
    let scores = gold.map(|g| score(pred, g)).transpose()?;
    let mut report = RunReport {
        seed,
        n_items: pred.len(),
        m1_last: scores.map(|s| s.m1),
        m1_oracle: None,
        oracle_iteration: None,
        f1_one_to_one: scores.map(|s| s.f1_one_to_one),
        f1_many_to_one: scores.map(|s| s.f1_many_to_one),
        m1_trace: if scores.is_some() { trace } else { Vec::new() },
    };
    report.select_oracle();
    Ok(report)
}

/// Everything one seed produces.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub report: RunReport,
    pub model: ClusterModel,
    pub predictions: Vec<usize>,
    pub telemetry: Telemetry,
    /// CSV loss curves: one per pretraining level, then finetuning.
    pub loss_traces: Vec<(String, String)>,
}

/// Pretraining, finetuning, clustering and scoring for one seed.
pub fn run_seed(prep: &Prepared, cfg: &RunConfig, seed: u64) -> Result<SeedOutcome> {
    let width = prep.pairs.inputs.ncols();
    if cfg.autoencoder.input_dim != 0 && cfg.autoencoder.input_dim != width {
        return Err(PipelineError::Input(format!(
            "autoencoder.input_dim is {} but the features are {width} wide",
            cfg.autoencoder.input_dim
        )));
    }
    let spec = AutoencoderSpec { input_dim: width, ..cfg.autoencoder.clone() };
    let pre_cfg = crate::sae::TrainConfig { seed: derive_seed(seed, PRETRAIN_TAG), ..cfg.pretrain };
    let fine_cfg = crate::sae::TrainConfig { seed: derive_seed(seed, FINETUNE_TAG), ..cfg.finetune };
    let (stack, pre_traces) = pretrain_layerwise(&spec, &prep.pairs, &pre_cfg)?;
    let (stack, fine_trace) = finetune_end2end(&stack, &prep.pairs, &fine_cfg, spec.corrupt_rate)?;

    let hp = cfg.cluster.hyper_params(prep.label_set.len(), prep.pairs.len(), derive_seed(seed, CLUSTER_TAG))?;
    let mut telemetry = Telemetry::default();
    let model = dec_fit(&stack, &prep.pairs, prep.train_gold.as_deref(), &hp, &mut telemetry)?;
    let (predictions, _) = predict_hard(&model, prep.eval_matrix().view())?;

    let mut trace: Vec<(usize, f64)> = telemetry
        .records
        .iter()
        .filter_map(|r| r.m1.map(|m| (r.iteration, m)))
        .collect();
    if let Some(gold) = &prep.eval_gold {
        trace.push((hp.iterations, score(&predictions, gold)?.m1));
    }
    let report = run_report(seed, &predictions, prep.eval_gold.as_deref(), trace)?;

    let mut loss_traces: Vec<(String, String)> = pre_traces
        .iter()
        .enumerate()
        .map(|(k, t)| (format!("pretrain-{k}.csv"), t.to_csv()))
        .collect();
    loss_traces.push(("finetune.csv".into(), fine_trace.to_csv()));
    Ok(SeedOutcome { report, model, predictions, telemetry, loss_traces })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| PipelineError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| PipelineError::io(path, e))
}

/// `item,cluster` rows; `item` indexes the manifest.
pub fn write_predictions(path: &Path, items: &[usize], clusters: &[usize]) -> Result<()> {
    let mut out = String::from("item,cluster\n");
    for (i, c) in items.iter().zip(clusters) {
        writeln!(out, "{i},{c}").unwrap();
    }
    write_file(path, out)
}

pub fn read_predictions(path: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("item,cluster") {
        return Err(PipelineError::Input(format!("{}: expected header item,cluster", path.display())));
    }
    let mut items = Vec::new();
    let mut clusters = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        let (i, c) = parsed.ok_or_else(|| {
            PipelineError::Input(format!("{}: bad row {}: {line:?}", path.display(), n + 2))
        })?;
        items.push(i);
        clusters.push(c);
    }
    Ok((items, clusters))
}

fn write_seed_outputs(dir: &Path, prep: &Prepared, outcome: &SeedOutcome, trace: bool) -> Result<()> {
    create_dir(dir)?;
    write_checkpoint(&Checkpoint::from_model(&outcome.model), dir.join("model.sdec"))?;
    write_file(&dir.join("telemetry.csv"), outcome.telemetry.to_csv())?;
    write_predictions(&dir.join("predictions.csv"), &prep.eval_items, &outcome.predictions)?;
    if trace {
        for (name, csv) in &outcome.loss_traces {
            write_file(&dir.join(name), csv)?;
        }
    }
    Ok(())
}

/// Runs every seed (in parallel when enabled), writes per-seed artifacts
/// under `out/seed-<n>/` and the aggregated `out/report.json`.
pub fn run_pipeline(cfg: &RunConfig, opts: &RunOptions) -> Result<EvalReport> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let outcomes = crate::parallel::map_range(cfg.seeds.len(), |i| run_seed(&prep, cfg, cfg.seeds[i]));
    create_dir(&opts.out)?;
    let mut runs = Vec::with_capacity(outcomes.len());
    for (outcome, &seed) in outcomes.into_iter().zip(&cfg.seeds) {
        let outcome = outcome?;
        write_seed_outputs(&opts.out.join(format!("seed-{seed}")), &prep, &outcome, opts.trace)?;
        runs.push(outcome.report);
    }
    let report = EvalReport::from_runs(prep.task, runs);
    write_file(&opts.out.join("report.json"), report.to_json())?;
    Ok(report)
}

/// Report for one foreign dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub name: String,
    pub report: EvalReport,
}

/// Applies a saved model to other datasets, featurised as `cfg` says.
/// Writes `transfer-<name>.json` per dataset.
pub fn run_transfer(
    cfg: &RunConfig,
    model_path: &Path,
    datasets: &[(PathBuf, PathBuf)],
    out: &Path,
) -> Result<Vec<TransferReport>> {
    let model = read_checkpoint(model_path)?.into_model(cfg.cluster.nu)?;
    create_dir(out)?;
    let mut used = BTreeMap::<String, usize>::new();
    let mut reports = Vec::new();
    for (semb, manifest) in datasets {
        let mut local = cfg.clone();
        local.data.semb = semb.clone();
        local.data.manifest = manifest.clone();
        let prep = prepare(&local)?;
        let (pred, _) = transfer_apply(&model, prep.eval_matrix().view())?;
        let mut report = EvalReport::from_runs(prep.task, vec![run_report(0, &pred, prep.eval_gold.as_deref(), Vec::new())?]);
        report.oracle_available = false;
        let stem = manifest
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into());
        let count = used.entry(stem.clone()).or_insert(0);
        *count += 1;
        let name = if *count == 1 { stem } else { format!("{stem}-{count}") };
        write_file(&out.join(format!("transfer-{name}.json")), report.to_json())?;
        reports.push(TransferReport { name, report });
    }
    Ok(reports)
}

/// Scores a saved `item,cluster` prediction file against a manifest.
pub fn run_eval(predictions: &Path, manifest_path: &Path) -> Result<EvalReport> {
    let manifest: DatasetManifest = read_manifest(manifest_path)?;
    let (items, clusters) = read_predictions(predictions)?;
    let gold = manifest
        .gold_ids()
        .ok_or_else(|| PipelineError::Input(format!("{} has no gold labels", manifest_path.display())))?;
    if let Some(&bad) = items.iter().find(|&&i| i >= gold.len()) {
        return Err(PipelineError::Input(format!("prediction for item {bad} beyond the manifest")));
    }
    let picked: Vec<usize> = items.iter().map(|&i| gold[i]).collect();
    let mut report = EvalReport::from_runs(manifest.task, vec![run_report(0, &clusters, Some(&picked), Vec::new())?]);
    report.oracle_available = false;
    Ok(report)
}

/// Averages the chosen layers of a tensor and writes a one-layer tensor.
pub fn run_pool(input: &Path, layers: &LayerSubset, output: &Path) -> Result<(usize, usize)> {
    let tensor = read_semb(input)?;
    let pooled = pool_layers(&tensor, layers)?;
    write_semb(&EmbeddingTensor::from_matrix(&pooled)?, output)?;
    Ok((pooled.len_of(Axis(0)), pooled.len_of(Axis(1))))
}
