//! The `corgi` command line: thin adapters from arguments to library calls.

pub mod client;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use corgi_core::backbone::BackboneKind;
use corgi_core::eval::perplexity::PerplexityMode;
use corgi_core::traj::Split;

use config::GlobalFlags;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "corgi", version, about = "Natural-language corrections from trajectory pairs")]
pub struct Cli {
    /// Base seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML run config; flags given here take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest environment data and annotations into a dataset directory.
    Prepare(PrepareArgs),
    /// Add three paraphrases per human train correction.
    Augment(AugmentArgs),
    /// Train the trajectory encoder against a frozen backbone.
    Train(TrainArgs),
    /// Perplexity of ground-truth corrections.
    EvalPpl(EvalPplArgs),
    /// Similarity of generated corrections to the references.
    EvalSim(EvalSimArgs),
    /// One correction for a (student, expert) pair file.
    Generate(GenerateArgs),
    /// Roll out the steering expert and scripted students.
    SimulateSteering(SimulateArgs),
    /// Run the teaching service.
    Serve(ServeArgs),
    /// Render evaluation records as a table.
    Report(ReportArgs),
    /// Build a small pretrained backbone snapshot.
    Snapshot(SnapshotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Backbone snapshot directory.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub backbone: Option<BackboneKind>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Stroke archive with a manifest.json.
    #[arg(long)]
    pub drawing: Option<PathBuf>,
    /// Clip directory with a clips.json.
    #[arg(long)]
    pub movement: Option<PathBuf>,
    /// Output of simulate-steering.
    #[arg(long)]
    pub steering: Option<PathBuf>,
    /// JSON lines of {student_id, correction}.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Move this fraction of train pairs to a validation split.
    #[arg(long)]
    pub valid_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Response cache, appended to as responses arrive.
    #[arg(long)]
    pub cache: PathBuf,
    /// Use cached responses only.
    #[arg(long)]
    pub offline: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub n_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalPplArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value = "standard")]
    pub mode: PerplexityMode,
    /// Method label written into the records.
    #[arg(long, default_value = "corgi")]
    pub method: String,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalSimArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// corgi, random, nearest_neighbors, permute_student or echo.
    #[arg(long, default_value = "corgi")]
    pub method: String,
    /// exact or backbone.
    #[arg(long, default_value = "exact")]
    pub embedder: String,
    /// Also write per-pair scores here.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON object {"student": trajectory, "expert": trajectory}.
    #[arg(long)]
    pub pair: PathBuf,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Steering TOML; overrides the run config's `steering`.
    #[arg(long)]
    pub steering_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Stroke archive providing the stimuli.
    #[arg(long)]
    pub strokes: PathBuf,
    /// Event store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<std::net::SocketAddr>,
    /// Dataset directory whose human train drawing annotations feed the random condition.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// JSON lines of preference items.
    #[arg(long)]
    pub preference_items: Option<PathBuf>,
    /// Build everything, print a summary and exit without listening.
    #[arg(long)]
    pub check: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation record files; several files are treated as one seed each.
    pub inputs: Vec<PathBuf>,
    /// Coach event store to summarize learning gains from.
    #[arg(long)]
    pub coach_store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SnapshotArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Pretraining text, one phrase per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
}

/// Parses `argv` and runs the command, writing results to `out`. Returns the exit code.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = match Cli::try_parse_from(argv) {
        Ok(cli) => run(cli, out),
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => Err(CliError::Usage(e.to_string())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(text) => {
                    let _ = write!(err, "{text}");
                }
                CliError::Runtime(inner) => {
                    let _ = writeln!(err, "error: {inner:#}");
                }
                CliError::Validation(_) => {
                    let _ = writeln!(err, "error: {e}");
                }
            }
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> error::Result<()> {
    let flags = GlobalFlags { seed: cli.seed, config: cli.config };
    let cfg = config::RunConfig::resolve(&flags)?;
    match cli.command {
        Command::Prepare(a) => commands::prepare(&cfg, &a, out),
        Command::Augment(a) => commands::augment(&cfg, &a, out),
        Command::Train(a) => commands::train(&cfg, &a, out),
        Command::EvalPpl(a) => commands::eval_ppl(&cfg, &a, out),
        Command::EvalSim(a) => commands::eval_sim(&cfg, &a, out),
        Command::Generate(a) => commands::generate(&cfg, &a, out),
        Command::SimulateSteering(a) => commands::simulate_steering(&cfg, &a, out),
        Command::Serve(a) => commands::serve(&cfg, &a, out),
        Command::Report(a) => commands::report(&cfg, &a, out),
        Command::Snapshot(a) => commands::snapshot(&cfg, &a, out),
    }
}
