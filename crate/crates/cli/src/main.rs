//! `syncat`: induce syntactic categories by clustering contextual embeddings.
//!
//! Reports go to stdout; logs and errors go to stderr. Exit codes: 2 for
//! configuration errors, 3 for data errors, 4 when training diverges.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use syncat::dataio::LayerSubset;
use syncat::eval::EvalReport;
use syncat::pipeline::{
    run_ablation, run_eval, run_pipeline, run_pool, run_transfer, AblationAxis, PipelineError,
    RunConfig, RunOptions, SynthSpec,
};

#[derive(Debug, Parser)]
#[command(name = "syncat", version, about = "Deep embedded clustering for syntactic category induction")]
struct Cli {
    /// JSON run configuration (synth: a generator spec).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Replace the configured seed list with this single seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write per-epoch autoencoder loss curves.
    #[arg(long, global = true)]
    trace: bool,
    /// Print an aligned text table instead of JSON.
    #[arg(long, global = true)]
    table: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and evaluate one model per seed.
    Pipeline,
    /// Apply a saved model to other datasets.
    Transfer(TransferArgs),
    /// Write a synthetic labelled dataset.
    Synth(SynthArgs),
    /// Rerun the pipeline along one axis and compare.
    Ablate(AblateArgs),
    /// Score a saved predictions file.
    Eval(EvalArgs),
    /// Average layers of an embedding tensor into a one-layer tensor.
    Pool(PoolArgs),
}

#[derive(Debug, Args)]
struct TransferArgs {
    /// Checkpoint written by `pipeline`.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// A foreign dataset; repeat for several.
    #[arg(long, num_args = 2, value_names = ["SEMB", "MANIFEST"], required = true)]
    dataset: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    ambient_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f32>,
    #[arg(long)]
    spread: Option<f32>,
    #[arg(long)]
    anisotropy: Option<f32>,
    /// Draw different points from the same generator.
    #[arg(long)]
    sample_seed: Option<u64>,
    /// File stem for the `.semb` and manifest.
    #[arg(long, default_value = "synth")]
    name: String,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// One of layers, ngram_order, span_mode, context_mode.
    #[arg(long)]
    axis: String,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// `item,cluster` CSV.
    #[arg(long, value_name = "PATH")]
    predictions: PathBuf,
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct PoolArgs {
    #[arg(long, value_name = "PATH")]
    semb: PathBuf,
    /// `all` or indices and ranges such as `0-3,8`.
    #[arg(long, default_value = "all")]
    layers: String,
    #[arg(long, value_name = "PATH")]
    output: PathBuf,
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| PipelineError::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<(), PipelineError> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let body = if text.ends_with('\n') { text.to_string() } else { format!("{text}\n") };
    match out.write_all(body.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(PipelineError::Input(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn emit_report(cli: &Cli, report: &EvalReport) -> Result<(), PipelineError> {
    if cli.table {
        emit(&report.render_table())
    } else {
        emit(&report.to_json())
    }
}

fn synth_spec(cli: &Cli, args: &SynthArgs) -> Result<SynthSpec, PipelineError> {
    let mut spec = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        }
        None => SynthSpec::default(),
    };
    let set = |dst: &mut usize, v: Option<usize>| *dst = v.unwrap_or(*dst);
    set(&mut spec.k, args.k);
    set(&mut spec.n, args.n);
    set(&mut spec.latent_dim, args.latent_dim);
    set(&mut spec.ambient_dim, args.ambient_dim);
    spec.noise = args.noise.unwrap_or(spec.noise);
    spec.spread = args.spread.unwrap_or(spec.spread);
    spec.anisotropy = args.anisotropy.unwrap_or(spec.anisotropy);
    spec.seed = cli.seed.unwrap_or(spec.seed);
    spec.sample_seed = args.sample_seed.or(spec.sample_seed);
    spec.validate()?;
    Ok(spec)
}

fn paths_json(pairs: &[(&str, &Path)]) -> String {
    let map: serde_json::Map<String, serde_json::Value> = pairs
        .iter()
        .map(|(k, p)| (k.to_string(), p.display().to_string().into()))
        .collect();
    serde_json::to_string_pretty(&map).expect("paths serialise")
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Pipeline => {
            let cfg = load_config(cli)?;
            let opts = RunOptions { out: out_dir(cli, Some(&cfg)), trace: cli.trace };
            let report = run_pipeline(&cfg, &opts)?;
            log::info!("wrote {}", opts.out.join("report.json").display());
            emit_report(cli, &report)?;
        }
        Command::Transfer(args) => {
            let cfg = match &cli.config {
                Some(_) => load_config(cli)?,
                None => RunConfig::new("", ""),
            };
            let datasets: Vec<(PathBuf, PathBuf)> =
                args.dataset.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
            let reports = run_transfer(&cfg, &args.model, &datasets, &out_dir(cli, Some(&cfg)))?;
            if cli.table {
                let text: String = reports
                    .iter()
                    .map(|t| format!("== {}\n{}", t.name, t.report.render_table()))
                    .collect();
                emit(&text)?;
            } else {
                let all: serde_json::Map<String, serde_json::Value> = reports
                    .iter()
                    .map(|t| (t.name.clone(), serde_json::to_value(&t.report).expect("report serialises")))
                    .collect();
                emit(&serde_json::to_string_pretty(&all).expect("reports serialise"))?;
            }
        }
        Command::Synth(args) => {
            let spec = synth_spec(cli, args)?;
            let dir = out_dir(cli, None);
            let (semb, manifest) = spec.write(&dir, &args.name)?;
            emit(&paths_json(&[("semb", &semb), ("manifest", &manifest)]))?;
        }
        Command::Ablate(args) => {
            let axis: AblationAxis = args.axis.parse()?;
            let cfg = load_config(cli)?;
            let opts = RunOptions { out: out_dir(cli, Some(&cfg)), trace: cli.trace };
            let table = run_ablation(&cfg, axis, &opts)?;
            emit(&if cli.table { table.render() } else { table.to_json() })?;
        }
        Command::Eval(args) => {
            let report = run_eval(&args.predictions, &args.manifest)?;
            emit_report(cli, &report)?;
        }
        Command::Pool(args) => {
            let layers: LayerSubset = args.layers.parse().map_err(|e| PipelineError::Config(format!("{e}")))?;
            let (n, d) = run_pool(&args.semb, &layers, &args.output)?;
            emit(&serde_json::json!({ "output": args.output.display().to_string(), "n_items": n, "dim": d }).to_string())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
