use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use fbpick::io::{read_gather, read_json, write_json, Split, Variant};
use fbpick::losses::LossKind;
use fbpick::picking::PickMethod;
use fbpick::pipeline::{self, ExperimentSpec, Model, PickIndex, RecordFilter, TrainConfig};
use fbpick::synth::{generate_dataset, DatasetConfig};
use fbpick::Error;

/// First-arrival picking for seismic shot gathers.
#[derive(Parser)]
#[command(name = "fbpick", version)]
struct Cli {
    /// Default dataset directory.
    #[arg(long, env = "FBPICK_DATA_ROOT", default_value = "data", global = true)]
    data_root: PathBuf,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Train a segmentation model.
    Train(TrainArgs),
    /// Predict masks and probability maps.
    Predict(PredictArgs),
    /// Turn predicted masks into pick lines.
    Pick(PickArgs),
    /// Score predictions and picks against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the full comparison grid.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory (defaults to the data root).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the full-size preset instead of the desk-scale one.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test_per_variant: Option<usize>,
    #[arg(long)]
    time_steps: Option<usize>,
    #[arg(long)]
    receivers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// cross_entropy or lovasz.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    crop_width: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    desk_scale: bool,
    /// Write the per-epoch log here as JSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Dataset to read gathers from (defaults to the data root).
    #[arg(long, conflicts_with = "gathers")]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    variant: Option<VariantArg>,
    /// Individual FBG1 gather files instead of a dataset.
    #[arg(long, num_args = 0..)]
    gathers: Option<Vec<PathBuf>>,
    /// Sample interval for `--gathers`.
    #[arg(long, default_value_t = 8.0)]
    sample_rate_ms: f64,
}

#[derive(Args)]
struct PickArgs {
    /// Directory written by `predict`.
    #[arg(long)]
    predictions: PathBuf,
    /// fpp or npp.
    #[arg(long)]
    method: PickMethod,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    picks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Loss label for the text table.
    #[arg(long, default_value = "model")]
    loss_label: String,
    #[arg(long, default_value = "synthetic data")]
    column: String,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Experiment JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "desk_scale")]
    full_scale: bool,
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum VariantArg {
    Clean,
    Disconnected,
    Noisy,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Clean => Variant::Clean,
            VariantArg::Disconnected => Variant::Disconnected,
            VariantArg::Noisy => Variant::Noisy,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Config(_))));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&cli.data_root, a),
        Command::Train(a) => train(&cli.data_root, a),
        Command::Predict(a) => predict(&cli.data_root, a),
        Command::Pick(a) => {
            let index = pipeline::pick_dir(&a.predictions, a.method, &a.out)?;
            for id in &index.empty_masks {
                warn!("mask {id} has no signal pixels; its pick line is all invalid");
            }
            println!(
                "picked {} masks with {} into {}",
                index.ids.len(),
                a.method.label(),
                a.out.display()
            );
            Ok(())
        }
        Command::Evaluate(a) => {
            let dataset = a.dataset.unwrap_or(cli.data_root);
            let index: PickIndex = read_json(&a.picks.join(pipeline::PICKS_INDEX))?;
            let picker = index.method.label();
            let report = pipeline::evaluate_dirs(
                &dataset,
                &a.predictions,
                &a.picks,
                (&a.loss_label, picker, &a.column),
                &a.out,
            )?;
            print!("{}", report.text_table(&a.loss_label, picker, &a.column));
            Ok(())
        }
        Command::Reproduce(a) => reproduce(a),
    }
}

fn generate(data_root: &Path, a: GenerateArgs) -> anyhow::Result<()> {
    let mut cfg = match (&a.config, a.full_scale) {
        (Some(p), _) => read_json(p)?,
        (None, true) => DatasetConfig::full_scale(),
        (None, false) => DatasetConfig::desk_scale(),
    };
    if let Some(v) = a.train {
        cfg.train = v;
    }
    if let Some(v) = a.val {
        cfg.val = v;
    }
    if let Some(v) = a.test_per_variant {
        cfg.test_per_variant = v;
    }
    if let Some(v) = a.time_steps {
        cfg.time_steps = v;
    }
    if let Some(v) = a.receivers {
        cfg.receivers = v;
    }
    let out = a.out.unwrap_or_else(|| data_root.to_path_buf());
    let manifest = generate_dataset(&cfg, &out, a.seed)?;
    println!(
        "wrote {} records to {}",
        manifest.records.len(),
        out.display()
    );
    Ok(())
}

fn train(data_root: &Path, a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p).with_context(|| format!("reading {}", p.display()))?,
        None => TrainConfig {
            dataset: data_root.to_path_buf(),
            ..TrainConfig::default()
        },
    };
    cfg.desk_scale |= a.desk_scale;
    let mut cfg = cfg.resolve();
    if let Some(v) = a.dataset {
        cfg.dataset = v;
    }
    if let Some(v) = a.checkpoint {
        cfg.checkpoint = v;
    }
    if let Some(v) = a.loss {
        cfg.loss_kind = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.crop_width {
        cfg.crop_width = v;
    }
    if let Some(v) = a.base_channels {
        cfg.model.base_channels = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    info!("training with {}", serde_json::to_string(&cfg)?);
    let report = pipeline::train(&cfg)?;
    if let Some(log) = a.log {
        write_json(&log, &report)?;
    }
    println!(
        "best validation accuracy {:.4} at epoch {}; checkpoint {}",
        report.best_val_accuracy,
        report.best_epoch,
        report.checkpoint.display()
    );
    Ok(())
}

fn predict(data_root: &Path, a: PredictArgs) -> anyhow::Result<()> {
    let model = Model::load(&a.checkpoint, None)?;
    let index = match a.gathers {
        Some(paths) => {
            let items = paths
                .iter()
                .map(|p| {
                    let id = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "gather".into());
                    Ok((id, read_gather(p, a.sample_rate_ms)?))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            pipeline::predict_to_dir(&model, &items, a.sample_rate_ms, &a.out)?
        }
        None => {
            let dataset = a.dataset.unwrap_or_else(|| data_root.to_path_buf());
            let filter = RecordFilter {
                split: a.split.into(),
                variant: a.variant.map(Into::into),
            };
            pipeline::predict_dataset(&model, &dataset, filter, &a.out)?
        }
    };
    println!(
        "predicted {} gathers into {}",
        index.ids.len(),
        a.out.display()
    );
    Ok(())
}

fn reproduce(a: ReproduceArgs) -> anyhow::Result<()> {
    let mut spec: ExperimentSpec = match &a.config {
        Some(p) => read_json(p)?,
        None if a.full_scale => ExperimentSpec::full_scale("reproduce", 0),
        None => ExperimentSpec::default(),
    };
    if a.full_scale {
        spec.desk_scale = false;
    }
    if a.desk_scale {
        spec.desk_scale = true;
    }
    if let Some(v) = a.out {
        spec.output = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if a.epochs.is_some() {
        spec.epochs = a.epochs;
    }
    let result = pipeline::reproduce(&spec)?;
    print!("{}", result.render_table(&spec));
    let failed = result.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        anyhow::bail!(
            "{failed} of {} cells failed; see {}",
            result.cells.len(),
            result.table_path.display()
        );
    }
    Ok(())
}
