//! `uiforge`: forge caption corpora from app interaction traces, report
//! dataset statistics, and score model outputs.

mod config;
mod eval;
mod forge;
mod stats;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::ProviderKind;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing inputs, unmet command dependency. Exit 1.
    Config(String),
    /// Malformed input files. Exit 2.
    Schema(String),
    /// Provider failure beyond retries. Exit 3.
    Provider(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Provider(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Schema(m) | CliError::Provider(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "uiforge",
    version,
    about = "Forge UI caption corpora from app interaction traces and score models on them"
)]
struct Cli {
    /// Worker threads for parallel pipeline stages (0 = library default).
    /// Outputs are identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build one of the corpus sample sets from canonical traces
    Forge {
        #[command(subcommand)]
        set: ForgeCommand,
    },
    /// Dataset statistics over forged sample files
    Stats(StatsArgs),
    /// Score model outputs
    Eval {
        #[command(subcommand)]
        task: EvalCommand,
    },
}

#[derive(Clone, Copy)]
pub enum ForgeSet {
    Elements,
    Lists,
    Prompts,
    Captions,
    Foresight,
}

#[derive(Subcommand)]
enum ForgeCommand {
    /// Element captions: one record per filtered, deduplicated element
    Elements(ForgeArgs),
    /// Element-list captions: comma-joined element captions per screen
    Lists(ForgeArgs),
    /// Unique screen-summary prompts (no provider calls)
    Prompts(ForgeArgs),
    /// Screen captions fetched from the provider and fanned out per screen
    Captions(ForgeArgs),
    /// Foresight triplets (requires forged screen captions)
    Foresight(ForgeArgs),
}

#[derive(Args)]
pub struct ForgeArgs {
    /// Trace root directory (or a single *.trace.json file)
    #[arg(long)]
    traces: PathBuf,
    /// Output directory for sample files and the run manifest
    #[arg(long)]
    out: PathBuf,
    /// TOML configuration file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Minimum per-dataset caption frequency
    #[arg(long)]
    min_freq: Option<u64>,
    /// Maximum bbox dilation steps during action matching
    #[arg(long)]
    enlarge_steps: Option<u32>,
    /// Dilation per step as a fraction of each screen dimension
    #[arg(long)]
    enlarge_pct: Option<f64>,
    /// Top banner height as a fraction of image height
    #[arg(long)]
    banner_pct: Option<f64>,
    /// Caption provider backend
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    /// Caption fixture file (prompt_key -> caption JSON) for offline runs
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Skip the color-block screenshot check (recorded in the manifest)
    #[arg(long)]
    skip_color_check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Live,
    Fixture,
}

#[derive(Args)]
pub struct StatsArgs {
    /// Directory holding forged sample files
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Consensus captioning score against references
    Cider(EvalCiderArgs),
    /// F1/accuracy of generated tappability answers
    Tappability(EvalTapArgs),
    /// Selection accuracy of grounding-as-generation
    Grounding(EvalGroundingArgs),
    /// Cross-entropy loss over a logits file
    Loss(EvalLossArgs),
}

#[derive(Args)]
pub struct EvalCiderArgs {
    /// JSONL of {"id", "text"}
    #[arg(long)]
    candidates: PathBuf,
    /// JSONL of {"id", "texts": [...]}
    #[arg(long)]
    references: PathBuf,
    /// Use the length-penalty variant instead of plain
    #[arg(long)]
    cider_d: bool,
    /// Highest n-gram order
    #[arg(long, default_value_t = 4)]
    max_n: usize,
    /// Output directory for metrics.json
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvalTapArgs {
    /// JSONL of {"id", "text"} generated answers
    #[arg(long)]
    predictions: PathBuf,
    /// JSONL of {"id", "class": "tappable"|"not_tappable"}
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvalGroundingArgs {
    /// JSONL of grounding instances
    #[arg(long)]
    instances: PathBuf,
    /// Similarity used to pick the closest generated command
    #[arg(long, default_value = "token_f1")]
    similarity: String,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvalLossArgs {
    /// JSONL of {"sample_id", "steps": [[...]], "target_ids": [...]}
    #[arg(long)]
    logits: PathBuf,
    /// Objective tag recorded in the reports
    #[arg(long, default_value = "xe")]
    objective: String,
    /// Mean-reduce the per-sample total instead of summing
    #[arg(long)]
    mean: bool,
    /// Include per-step gradients in loss_reports.jsonl
    #[arg(long)]
    grads: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size worker pool: {e}")))?;
    }
    match cli.command {
        Command::Forge { set } => {
            let (set, args) = match set {
                ForgeCommand::Elements(a) => (ForgeSet::Elements, a),
                ForgeCommand::Lists(a) => (ForgeSet::Lists, a),
                ForgeCommand::Prompts(a) => (ForgeSet::Prompts, a),
                ForgeCommand::Captions(a) => (ForgeSet::Captions, a),
                ForgeCommand::Foresight(a) => (ForgeSet::Foresight, a),
            };
            forge::run(set, &args)
        }
        Command::Stats(args) => stats::run(&args),
        Command::Eval { task } => match task {
            EvalCommand::Cider(args) => eval::run_cider(&args),
            EvalCommand::Tappability(args) => eval::run_tappability(&args),
            EvalCommand::Grounding(args) => eval::run_grounding(&args),
            EvalCommand::Loss(args) => eval::run_loss(&args),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<ProviderArg> for ProviderKind {
    fn from(p: ProviderArg) -> Self {
        match p {
            ProviderArg::Live => ProviderKind::Live,
            ProviderArg::Fixture => ProviderKind::Fixture,
        }
    }
}
