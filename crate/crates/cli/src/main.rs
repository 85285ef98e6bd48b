//! `dialparse`: preprocess corpora, run the incremental parser, score and
//! ablate its output, and render reports.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dialparse::corpus::{CorpusFormat, Split};
use dialparse::engine::ContextMode;
use dialparse::preprocess::Profile;
use tracing_subscriber::EnvFilter;

use crate::config::FileConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dialparse", version, about = "Incremental discourse parsing for multiparty dialogue")]
struct Cli {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Log more (repeat for debug output). `RUST_LOG` takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a corpus to the canonical format and apply a profile's
    /// preprocessing stages.
    Preprocess(PreprocessArgs),
    /// Print unit and multi-parent counts for preprocessed corpora.
    Stats(StatsArgs),
    /// Run the incremental parser over a corpus.
    Parse(ParseArgs),
    /// Score predictions against gold structure.
    Eval(EvalArgs),
    /// Produce edited inputs for an ablation, optionally re-running them.
    Ablate(AblateArgs),
    /// Render saved evaluation reports and statistics as text tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, default_value = "canonical", value_parser = parse_from_str::<CorpusFormat>)]
    pub format: CorpusFormat,
    #[arg(long, value_parser = parse_from_str::<Profile>)]
    pub profile: Profile,
    /// Taxonomy for formats without a header (`msdc`, `stac`, `molweni`).
    #[arg(long)]
    pub taxonomy: Option<String>,
    #[arg(long, default_value = "test", value_parser = parse_from_str::<Split>)]
    pub split: Split,
    /// Corpus name for formats without a header.
    #[arg(long)]
    pub name: Option<String>,
    /// Prune isolated EEUs before compressing runs.
    #[arg(long)]
    pub prune_first: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Old-to-new unit index pairs per dialogue.
    #[arg(long)]
    pub remap: Option<PathBuf>,
    /// Every dropped annotation, one JSON line each.
    #[arg(long)]
    pub discards: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Canonical corpora, one table column each.
    #[arg(long = "in", value_name = "PATH", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Show published counts for this corpus alongside.
    #[arg(long)]
    pub reference: Option<String>,
    /// Also write the counts as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Noisy,
    Remote,
}

#[derive(Debug, Args)]
pub struct BackendFlags {
    #[arg(long)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub p_drop: Option<f64>,
    #[arg(long)]
    pub p_relabel: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EngineFlags {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub max_new_tokens: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Dialogues parsed concurrently.
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextAblation {
    Rand,
    Null,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Step log: every sample, raw output and rejection.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_parser = parse_from_str::<ContextMode>)]
    pub mode: Option<ContextMode>,
    /// Rewrite every step's context before it is shown to the backend.
    #[arg(long)]
    pub ablation: Option<ContextAblation>,
    #[command(flatten)]
    pub backend: BackendFlags,
    #[command(flatten)]
    pub engine: EngineFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Canonical gold corpus.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predictions file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Largest scored attachment distance, or `none`.
    #[arg(long, value_parser = parse_cutoff)]
    pub cutoff: Option<Cutoff>,
    /// `label:max_distance`, repeatable; labels by code or name.
    #[arg(long)]
    pub breakdown: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Show published scores for this corpus alongside.
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cutoff(pub Option<usize>);

fn parse_cutoff(s: &str) -> Result<Cutoff, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(Cutoff(None));
    }
    s.parse().map(|c| Cutoff(Some(c))).map_err(|_| format!("expected a distance or `none`, got {s:?}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    Rand,
    Null,
    Qap,
    CorrTriangle,
    NarrPass2,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub kind: AblationKind,
    /// Step log or samples file (all kinds except narr-pass2).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Predictions file (qap, corr-triangle, narr-pass2).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Canonical gold corpus (qap, corr-triangle, narr-pass2, oracle re-runs).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Taxonomy for `rand` when no gold corpus is given.
    #[arg(long)]
    pub taxonomy: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Run the configured backend on the edited samples and write a step log.
    #[arg(long)]
    pub rerun: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendFlags,
    #[command(flatten)]
    pub engine: EngineFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report written by `eval --out`.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Counts written by `stats --out`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<String>,
}

fn parse_from_str<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr<Err = String>,
{
    s.parse()
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Preprocess(args) => commands::preprocess(&args),
        Command::Stats(args) => commands::stats(&args),
        Command::Parse(args) => commands::parse(&args, &file),
        Command::Eval(args) => commands::eval(&args, &file),
        Command::Ablate(args) => commands::ablate(&args, &file),
        Command::Report(args) => commands::report(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let err = error::config(first);
            eprintln!("{}", err.to_json_line());
            return err.exit_code();
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
