//! `subscope` — discover, evaluate, interpret and mitigate biased subgroups
//! from exported embeddings.

mod commands;
mod error;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "subscope", version, about = "Supervised subgroup discovery over exported embeddings")]
struct Cli {
    /// Worker threads for per-class work (outputs do not depend on it).
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a planted-subgroup dataset from a JSON spec.
    Synth(SynthArgs),
    /// Fit one PLS or PCA basis per class.
    Decompose(DecomposeArgs),
    /// Assign pseudo-subgroups and flag the worst ones per class.
    Identify(IdentifyArgs),
    /// Match discovered directions to reference subgroup embeddings.
    Match(MatchArgs),
    /// Retrieve corpus captions around one discovered direction.
    Retrieve(RetrieveArgs),
    /// Select pool samples scoring highest on biased subgroups.
    Filter(FilterArgs),
    /// Train a classifier with or without group-robust objectives.
    Mitigate(MitigateArgs),
    /// Summarise a pipeline run as markdown.
    Report(ReportArgs),
}

#[derive(Debug, Args, serde::Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the reference embeddings (class prompts and subgroups).
    #[arg(long)]
    pub refs_out: Option<PathBuf>,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "pls")]
    pub method: subscope_core::decompose::Method,
    /// Components per class (default: the dataset's subgroup count).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub normalize_embeddings: bool,
    /// Z-score supervision columns per class before fitting.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub standardize: bool,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
#[serde(untagged)]
pub enum KArg {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for KArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(KArg::Auto);
        }
        s.parse().map(KArg::Fixed).map_err(|_| format!("expected `auto` or a count, got {s:?}"))
    }
}

impl KArg {
    pub fn get(self) -> Option<usize> {
        match self {
            KArg::Auto => None,
            KArg::Fixed(k) => Some(k),
        }
    }
}

#[derive(Debug, Args, serde::Serialize)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub basis: PathBuf,
    /// Biased subgroups per class; `auto` means half the components.
    #[arg(long, default_value = "auto")]
    pub k: KArg,
    #[arg(long)]
    pub report: PathBuf,
    /// Pseudo-labels of the training rows, for `mitigate --labels`.
    #[arg(long)]
    pub assign_out: Option<PathBuf>,
    /// Soft-label temperature, relative to the basis' score scale.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct MatchArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// With --data, also score biased-subgroup detection against the
    /// ground-truth subgroups' validation accuracy.
    #[arg(long, requires = "data")]
    pub report: Option<PathBuf>,
    #[arg(long, requires = "report")]
    pub data: Option<PathBuf>,
    /// Solve by enumerating all permutations instead of the Hungarian method.
    #[arg(long)]
    pub brute_force: bool,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub basis: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub class: u32,
    #[arg(long)]
    pub component: usize,
    #[arg(long, default_value_t = 16)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Reference file providing the class-prompt embedding; without it the
    /// class centre of the basis is used.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub query_scale: f64,
    /// Query the opposite pole of the direction.
    #[arg(long)]
    pub negate: bool,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub basis: PathBuf,
    /// Bias report from `identify`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, serde::Serialize)]
pub struct MitigateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Pseudo-labels from `identify --assign-out` (all methods but erm).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Pool selection from `filter`, appended to the training set (erm only).
    #[arg(long)]
    pub augment: Option<PathBuf>,
    #[arg(long, default_value = "erm")]
    pub method: subscope_core::mitigate::TrainMethod,
    #[arg(long, default_value_t = 1.0)]
    pub eta_q: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Group loss estimate for soft_gdro: conditional or joint.
    #[arg(long, default_value = "conditional", value_parser = parse_estimate)]
    pub estimate: subscope_core::mitigate::GroupLossEstimate,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub normalize_embeddings: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_estimate(s: &str) -> Result<subscope_core::mitigate::GroupLossEstimate, String> {
    use subscope_core::mitigate::GroupLossEstimate::*;
    match s {
        "conditional" => Ok(Conditional),
        "joint" => Ok(Joint),
        _ => Err(format!("expected conditional or joint, got {s:?}")),
    }
}

#[derive(Debug, Args, serde::Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub basis: PathBuf,
    /// Bias report from `identify`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long = "match", value_name = "MATCH")]
    pub match_result: Option<PathBuf>,
    /// Metrics files from `mitigate`; repeat for several methods.
    #[arg(long)]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs as usize).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => commands::synth(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Identify(a) => commands::identify(&a),
        Command::Match(a) => commands::matching(&a),
        Command::Retrieve(a) => commands::retrieve(&a),
        Command::Filter(a) => commands::filter(&a),
        Command::Mitigate(a) => commands::mitigate(&a),
        Command::Report(a) => commands::report(&a),
    }
}
