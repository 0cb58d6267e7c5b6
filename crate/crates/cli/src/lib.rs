//! `rpred` command-line front end.

pub mod config;
pub mod export;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rpred_core::checkpoint::ModelCheckpoint;
use rpred_core::config::RunConfig;
use rpred_core::dataset::{
    ingest_csv, read_scenarios, write_dataset, write_scenarios, ColumnMap, IngestOptions, SCHEMA_VERSION,
};
use rpred_core::model::Model;
use rpred_core::synthgen::{generate_split, GeneratorConfig};
use rpred_core::training::{train, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::{layered, to_toml, Profile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] rpred_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 validation, 3 I/O, 4 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => e.exit_code(),
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "rpred", version, about = "Two-stage trajectory prediction with proposal refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML file whose sections (`synthgen`, `model`, `training`, `metrics`) override the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Default values before the config file is applied.
    #[arg(long, value_enum, default_value = "full")]
    pub profile: Profile,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/val/test splits.
    GenData(GenDataArgs),
    /// Train both stages end to end.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Export world-frame predictions for plotting.
    Predict(PredictArgs),
    /// Convert track and scene CSV files into a scenario file.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Total scenarios, split 80/10/10.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub past_steps: Option<usize>,
    #[arg(long)]
    pub future_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding `train.jsonl` and `val.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    /// Continue from a checkpoint; its configuration is the base layer.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total epochs (a resumed run trains until this count).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Embedding size.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub modes: Option<usize>,
    /// Train the proposal stage alone.
    #[arg(long)]
    pub no_refiner: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// `train`, `val` or `test`.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Mode budgets to report, e.g. `1,6`.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scenario JSON-lines file.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// Header names, e.g. `scenario_id=scene,agent_id=track,timestep=t`.
    #[arg(long, default_value = "")]
    pub col_map: String,
    #[arg(long)]
    pub past_steps: Option<usize>,
    #[arg(long)]
    pub future_steps: Option<usize>,
}

/// Dataset summary written next to the generated splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u64,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub generator: GeneratorConfig,
}

fn resolve(common: &Common, base: Option<RunConfig>) -> CliResult<RunConfig> {
    let base = base.unwrap_or_else(|| common.profile.defaults());
    let mut cfg = layered(&base, common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> CliResult<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn gen_data(args: &GenDataArgs) -> CliResult<Manifest> {
    let mut cfg = resolve(&args.common, None)?;
    let g = &mut cfg.synthgen;
    if let Some(n) = args.n {
        g.n_scenarios = n;
    }
    if let Some(s) = args.noise_sigma {
        g.noise_sigma = s;
    }
    if let Some(t) = args.past_steps {
        g.past_steps = t;
    }
    if let Some(f) = args.future_steps {
        g.future_steps = f;
    }
    let generator = cfg.generator();
    let split = generate_split(&generator)?;
    let dir = out_dir(&args.common, "data")?;
    write_dataset(&split, &dir)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        train: split.train.len(),
        val: split.val.len(),
        test: split.test.len(),
        generator,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&dir.join("manifest.json"), &(json + "\n"))?;
    Ok(manifest)
}

fn split_path(data: &Path, split: &str) -> CliResult<PathBuf> {
    if !rpred_core::dataset::SPLIT_NAMES.contains(&split) {
        return Err(CliError::Config(format!("unknown split `{split}`, expected train, val or test")));
    }
    Ok(data.join(format!("{split}.jsonl")))
}

pub fn train_cmd(args: &TrainArgs) -> CliResult<PathBuf> {
    let resumed = args.resume.as_deref().map(ModelCheckpoint::load).transpose()?;
    let mut cfg = resolve(&args.common, resumed.as_ref().map(|c| c.config.clone()))?;
    let t = &mut cfg.training;
    if let Some(e) = args.epochs {
        t.epochs = e;
    }
    if let Some(b) = args.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = args.lr {
        t.lr = lr;
    }
    if let Some(d) = args.d {
        cfg.model.proposer.d = d;
    }
    if let Some(m) = args.modes {
        cfg.model.proposer.modes = m;
    }
    if args.no_refiner {
        cfg.model.refiner.enabled = false;
    }
    let train_set = read_scenarios(&split_path(&args.data, "train")?)?;
    let val_set = read_scenarios(&split_path(&args.data, "val")?)?;
    if let Some(s) = train_set.first() {
        // the dataset decides the horizon lengths
        cfg.model.past_steps = s.past_len();
        cfg.synthgen.past_steps = s.past_len();
        if let Some(f) = s.future_len() {
            cfg.model.future_steps = f;
            cfg.synthgen.future_steps = f;
        }
    }
    let trainer = match resumed {
        Some(ckpt) => Trainer::resume(&cfg, ckpt)?,
        None => Trainer::new(&cfg)?,
    };
    let dir = out_dir(&args.common, "run")?;
    write_text(&dir.join("config.toml"), &to_toml(&cfg)?)?;
    let outcome = train(trainer, &train_set, &val_set, Some(&dir.join("metrics.csv")))?;
    for r in &outcome.records {
        eprintln!("{}", r.csv_line());
    }
    outcome.best.save(&dir.join("best.ckpt"))?;
    outcome.last.save(&dir.join("last.ckpt"))?;
    Ok(dir)
}

pub fn eval_cmd(args: &EvalArgs) -> CliResult<(rpred_core::metrics::EvalReport, PathBuf)> {
    let ckpt = ModelCheckpoint::load(&args.checkpoint)?;
    let mut metrics = ckpt.config.metrics.clone();
    if let Some(ks) = &args.ks {
        metrics.ks = ks.clone();
    }
    let model = Model::new(&ckpt.config.model)?;
    let split = read_scenarios(&split_path(&args.data, &args.split)?)?;
    let report = rpred_core::metrics::evaluate(&model, &ckpt.params, &split, &metrics)?;
    let dir = out_dir(&args.common, ".")?;
    let path = dir.join(format!("eval_{}.json", args.split));
    write_text(&path, &(report.to_json() + "\n"))?;
    Ok((report, path))
}

pub fn predict_cmd(args: &PredictArgs) -> CliResult<PathBuf> {
    let ckpt = ModelCheckpoint::load(&args.checkpoint)?;
    let model = Model::new(&ckpt.config.model)?;
    let scenarios = read_scenarios(&args.input)?;
    let dir = out_dir(&args.common, ".")?;
    let path = dir.join("predictions.jsonl");
    let mut w = BufWriter::new(File::create(&path)?);
    for s in &scenarios {
        let e = export::export_scenario(&model, &ckpt.params, s)?;
        let line = serde_json::to_string(&e).map_err(|e| CliError::Config(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(path)
}

pub fn ingest_cmd(args: &IngestArgs) -> CliResult<(PathBuf, rpred_core::dataset::IngestReport)> {
    let cfg = resolve(&args.common, None)?;
    let map = ColumnMap::parse(&args.col_map)?;
    let opts = IngestOptions {
        past_steps: args.past_steps.unwrap_or(cfg.model.past_steps),
        future_steps: args.future_steps.unwrap_or(cfg.model.future_steps),
    };
    let report = ingest_csv(&args.tracks, &args.scene, &map, opts)?;
    let dir = out_dir(&args.common, ".")?;
    let path = dir.join("scenarios.jsonl");
    write_scenarios(&path, &report.scenarios)?;
    Ok((path, report))
}

/// Runs one command, printing human-readable output.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => {
            let m = gen_data(&a)?;
            println!("wrote {} train, {} val, {} test scenarios (seed {})", m.train, m.val, m.test, m.seed);
        }
        Command::Train(a) => {
            let dir = train_cmd(&a)?;
            println!("checkpoints in {}", dir.display());
        }
        Command::Eval(a) => {
            let (report, path) = eval_cmd(&a)?;
            println!("{report}");
            println!("json: {}", path.display());
        }
        Command::Predict(a) => {
            let path = predict_cmd(&a)?;
            println!("predictions: {}", path.display());
        }
        Command::Ingest(a) => {
            let (path, report) = ingest_cmd(&a)?;
            for d in &report.diagnostics {
                eprintln!("{d}");
            }
            println!(
                "{} scenarios, {} agents dropped -> {}",
                report.scenarios.len(),
                report.dropped_agents,
                path.display()
            );
        }
    }
    Ok(())
}
