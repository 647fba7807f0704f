//! `graspreason` command line: dataset building, training, evaluation,
//! prediction and report rendering.
//!
//! Exit codes: 0 success, 2 configuration or usage, 3 data, 4 runtime.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use graspreason_core::dataset::DatasetError;
use graspreason_model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let msg = e.to_string();
        match e {
            ModelError::Config(_) => CliError::Config(msg),
            ModelError::Dataset(DatasetError::Config(_)) => CliError::Config(msg),
            ModelError::Dataset(_) | ModelError::Io { .. } | ModelError::Checkpoint(_) | ModelError::Domain(_) => CliError::Data(msg),
            _ => CliError::Runtime(msg),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        ModelError::from(e).into()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "graspreason", version, about = "Reasoning-driven grasp detection on a desk-scale pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, import or extend instruction datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the reasoning model and the configured baselines.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run one instruction on one image and draw the grasps.
    Predict(PredictArgs),
    /// Render the table of one or more finished evaluations.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Generate the synthetic tabletop dataset.
    Build(BuildArgs),
    /// Index a GraspNet-style directory tree.
    ImportGraspnet(ImportArgs),
    /// Write implicit instructions for one target.
    GenInstructions(GenArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Only the synthetic generator exists; the flag is accepted for clarity.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long)]
    pub no_depth: bool,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub root: PathBuf,
    /// `realsense` or `kinect`.
    #[arg(long, default_value = "realsense")]
    pub camera: String,
    /// Where the scene index is written; defaults to `--root`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Object description with its function keywords, e.g. "a knife used to cut food".
    #[arg(long)]
    pub description: String,
    /// Part descriptions, repeatable.
    #[arg(long = "part")]
    pub parts: Vec<String>,
    /// Name the generated instructions must not contain.
    #[arg(long)]
    pub target: String,
    /// OpenAI-compatible chat endpoint; the key is read from GRASPREASON_LLM_API_KEY.
    #[arg(long, conflicts_with = "templates_only")]
    pub llm_endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4o-mini")]
    pub llm_model: String,
    #[arg(long)]
    pub templates_only: bool,
    /// Output JSON-lines file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Key-value configuration file (`model.*`, `train.*`, `baselines`, `seed`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A checkpoint directory, or a training output holding `model/`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3")]
    pub k: Vec<usize>,
    /// `test` or `train`.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 0.9)]
    pub split_fraction: f64,
    #[command(flatten)]
    pub grounder: GrounderArgs,
    /// Also draw every prediction into `out/annotated/`.
    #[arg(long)]
    pub annotate: bool,
}

/// Only used with a detector checkpoint, which runs as the modular pipeline.
#[derive(Debug, Args, Clone)]
pub struct GrounderArgs {
    /// `oracle` (annotated boxes) or `http`.
    #[arg(long, default_value = "oracle")]
    pub grounder: String,
    #[arg(long)]
    pub grounder_endpoint: Option<String>,
    #[arg(long, default_value = "gpt-4o-mini")]
    pub grounder_model: String,
    /// Prompt template with `{instruction}`, `{width}` and `{height}`.
    #[arg(long)]
    pub prompt_template: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub instruction: String,
    /// Annotated PNG; a JSON file with the same stem holds the prediction.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Target box `x0,y0,x1,y1` for the oracle grounder (detector checkpoints).
    #[arg(long, value_delimiter = ',')]
    pub bbox: Option<Vec<f64>>,
    #[arg(long, default_value_t = 4)]
    pub upscale: u32,
    #[command(flatten)]
    pub grounder: GrounderArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation output directories.
    #[arg(required = true)]
    pub eval: Vec<PathBuf>,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, argv: &[std::ffi::OsString]) -> CliResult<()> {
    let command_line: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match cli.command {
        Command::Dataset(DatasetCommand::Build(a)) => commands::dataset_build(&a, &command_line),
        Command::Dataset(DatasetCommand::ImportGraspnet(a)) => commands::import_graspnet(&a, &command_line),
        Command::Dataset(DatasetCommand::GenInstructions(a)) => commands::gen_instructions(&a),
        Command::Train(a) => commands::train(&a, &command_line),
        Command::Eval(a) => commands::eval(&a, &command_line),
        Command::Predict(a) => commands::predict(&a, &command_line),
        Command::Report(a) => commands::report(&a),
    }
}
