use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

use quirky_core::data::Dataset;
use quirky_core::eval::{Experiment, ReportFormat, MAX_EVAL, MAX_TRAIN, PGR_EPSILON};
use quirky_core::numerics::CovarianceVariant;
use quirky_core::probes::{Method, SignMode, LOGR_L2};
use quirky_core::store::LabelSet;

/// Probe quirky-model activations for knowledge the output hides.
///
/// Layers are numbered from 1 in every flag and output file; the store keeps
/// them 0-indexed on disk. Relative paths are resolved against
/// `$QUIRKY_DATA_ROOT` when it is set.
#[derive(Debug, Parser)]
#[command(name = "quirky", version, propagate_version = true)]
pub struct Cli {
    /// TOML file of flag defaults; top-level keys apply to every command, a
    /// `[command-name]` table to one. Command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (0: one per core). Output never depends on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or ingest a quirky dataset as persona-rendered JSONL.
    GenData(GenDataArgs),
    /// Sample the planted-direction world into an activation store.
    GenWorld(GenWorldArgs),
    /// Train probes per (method, layer) and save them as JSON.
    TrainProbes(TrainProbesArgs),
    /// Run transfer experiments and write layerwise, summary and PGR tables.
    Transfer(TransferArgs),
    /// Pick each method's earliest informative layer from in-distribution AUROC.
    LayerSelect(LayerSelectArgs),
    /// Fit Mahalanobis detectors on probe log-odds and score Bob-hard vs Alice-hard.
    Anomaly(AnomalyArgs),
    /// Reflect world states about probe hyperplanes and count output flips.
    Intervene(InterveneArgs),
    /// Collect transfer reports under a directory into PGR grids.
    Report(ReportArgs),
    /// Write the flag reference.
    #[command(hide = true)]
    Docs(DocsArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::GenWorld(_) => "gen-world",
            Command::TrainProbes(_) => "train-probes",
            Command::Transfer(_) => "transfer",
            Command::LayerSelect(_) => "layer-select",
            Command::Anomaly(_) => "anomaly",
            Command::Intervene(_) => "intervene",
            Command::Report(_) => "report",
            Command::Docs(_) => "docs",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub dataset: Dataset,
    /// Examples to generate (arithmetic datasets).
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// CSV or JSONL source records (non-arithmetic datasets).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Statement template overriding the dataset's own.
    #[arg(long)]
    pub template: Option<String>,
    /// Positive-word list, one word per line (sentiment).
    #[arg(long)]
    pub word_list: Option<PathBuf>,
    /// Largest operand (arithmetic datasets).
    #[arg(long)]
    pub operand_max: Option<i64>,
    #[arg(long, default_value_t = 0.5)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.25)]
    pub val_frac: f64,
    #[arg(long, default_value = "runs/data")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenWorldArgs {
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Hidden width.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub char_strength: Option<f64>,
    #[arg(long)]
    pub out_strength: Option<f64>,
    #[arg(long)]
    pub label_correlation: Option<f64>,
    /// Switch off Bob's mechanism (the anomaly null world).
    #[arg(long)]
    pub ablate: bool,
    #[arg(long, default_value = "runs/world")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainProbesArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [Method::Logr])]
    pub methods: Vec<Method>,
    /// Layers to train on (default: all).
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    /// Training slice: all, A, B, AE, AH, BE, BH, E or H.
    #[arg(long, default_value = "AE")]
    pub slice: String,
    #[arg(long, default_value = "alice")]
    pub labels: LabelSet,
    #[arg(long, default_value_t = MAX_TRAIN)]
    pub max_train: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "platt")]
    pub sign_mode: SignMode,
    #[arg(long, default_value_t = 10)]
    pub ccs_restarts: usize,
    #[arg(long, default_value_t = LOGR_L2)]
    pub l2: f64,
    #[arg(long, default_value = "runs/probes")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TransferArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [Experiment::AeToBh])]
    pub experiments: Vec<Experiment>,
    #[arg(long, value_delimiter = ',', default_values_t = Method::ALL)]
    pub methods: Vec<Method>,
    /// Layers to evaluate (default: all).
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "platt")]
    pub sign_mode: SignMode,
    #[arg(long, default_value_t = 10)]
    pub ccs_restarts: usize,
    #[arg(long, default_value_t = LOGR_L2)]
    pub l2: f64,
    #[arg(long, default_value_t = MAX_TRAIN)]
    pub max_train: usize,
    #[arg(long, default_value_t = MAX_EVAL)]
    pub max_eval: usize,
    #[arg(long, default_value_t = PGR_EPSILON)]
    pub pgr_epsilon: f64,
    #[arg(long, default_value = "runs/transfer")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LayerSelectArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [Method::Logr])]
    pub methods: Vec<Method>,
    #[arg(long, default_value = "AE")]
    pub slice: String,
    #[arg(long, default_value = "alice")]
    pub labels: LabelSet,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "platt")]
    pub sign_mode: SignMode,
    #[arg(long, default_value_t = 10)]
    pub ccs_restarts: usize,
    #[arg(long, default_value_t = MAX_TRAIN)]
    pub max_train: usize,
    #[arg(long, default_value = "runs/layers")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnomalyArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [Method::Logr])]
    pub methods: Vec<Method>,
    /// `full` or `diag_subtracted`.
    #[arg(long, default_value = "full")]
    pub variant: CovarianceVariant,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = MAX_TRAIN)]
    pub max_train: usize,
    #[arg(long, default_value = "runs/anomaly")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InterveneArgs {
    /// Output directory of `gen-world` (reads its world.json).
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [Method::DiffMeans, Method::Logr, Method::Lda, Method::Random])]
    pub methods: Vec<Method>,
    /// Layers to intervene at (default: the final layer).
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    pub n_eval: usize,
    /// Examples drawn from the world for training and evaluation.
    #[arg(long, default_value_t = 4000)]
    pub world_n: usize,
    #[arg(long, default_value_t = MAX_TRAIN)]
    pub max_train: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "runs/intervene")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Directory searched recursively for transfer_*.json.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `markdown` or `csv`.
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
    /// Write the report and a run record here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = PGR_EPSILON)]
    pub pgr_epsilon: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct DocsArgs {
    #[arg(long, default_value = "docs/cli.md")]
    pub out: PathBuf,
}
