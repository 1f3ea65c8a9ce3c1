//! `blunt`: run adversary experiments, check linearizability, and tabulate
//! reports.

mod check;
mod config;
mod report;
mod run;
mod tree;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "blunt",
    version,
    about = "Strong-adversary simulator for preamble-iterated objects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte Carlo experiment, a replay, or an exact search.
    Run(RunArgs),
    /// Same as `run --adversary search`.
    Search(RunArgs),
    /// Check histories or execution trees read from JSON lines.
    Check(CheckArgs),
    /// Tabulate one or more JSON reports.
    Report(ReportArgs),
    /// Enumerate an execution tree and write it as JSON lines.
    Tree(TreeArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectArg {
    Atomic,
    Abd,
    AbdK,
    Snapshot,
    Va,
    Il,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryArg {
    Crafted,
    Search,
    Random,
    First,
    File,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BadArg {
    /// The weakener's looping condition on process 2's reads.
    Weakener,
    /// Nothing is bad; useful for plain executions.
    None,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// `weakener` or a path to a program in the text format.
    #[arg(long, default_value = "weakener")]
    pub program: String,
    #[arg(long, value_enum, default_value = "atomic")]
    pub object: ObjectArg,
    /// Preamble iterations; required for `abd-k`, optional for other kinds.
    #[arg(long)]
    pub k: Option<i64>,
    /// Expected process count (also the ABD replica count).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum, default_value = "random")]
    pub adversary: AdversaryArg,
    /// Monte Carlo trials; defaults to 0 for search and 1000 otherwise.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Master seed; the BLUNT_SEED environment variable takes precedence.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub step_budget: u64,
    #[arg(long, default_value_t = 100_000_000)]
    pub search_budget: u64,
    #[arg(long, value_enum, default_value = "weakener")]
    pub bad: BadArg,
    /// Replay one execution on this fixed tape (comma-separated values).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub tape: Option<Vec<i64>>,
    /// JSON array of directives, for `--adversary file`.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-trial outcomes as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write each trial's execution as `trial-<i>.jsonl` in this directory.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Skip the atomic baseline and bound searches.
    #[arg(long)]
    pub no_bound: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum CheckMode {
    Lin,
    Strong,
    Tail,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PreambleArg {
    /// Each implementation's declared effect-free preambles.
    Declared,
    /// Empty preambles (tail strong reduces to strong).
    Initial,
    /// Whole methods as preambles (tail strong reduces to linearizability).
    Full,
}

#[derive(Args, Debug, Clone)]
pub struct CheckArgs {
    #[arg(long, value_enum)]
    pub mode: CheckMode,
    /// JSON-lines files: execution steps or execution-tree nodes.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Object kind, which selects the sequential specification and preambles.
    #[arg(long, value_enum, default_value = "abd")]
    pub object: ObjectArg,
    /// Initial value as JSON (`null` is ⊥), either for every object or as
    /// `NAME=VALUE`; may be repeated.
    #[arg(long = "init", default_value = "null")]
    pub init: Vec<String>,
    #[arg(long, value_enum, default_value = "declared")]
    pub preamble: PreambleArg,
    /// Write verdict records here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum WorkloadArg {
    /// Writers of 0 and 1 and a reader that reads twice, on one register.
    Race,
}

#[derive(Args, Debug, Clone)]
pub struct TreeArgs {
    #[arg(long, value_enum, default_value = "race")]
    pub workload: WorkloadArg,
    #[arg(long, value_enum, default_value = "abd")]
    pub object: ObjectArg,
    #[arg(long)]
    pub k: Option<i64>,
    /// Branching depth in scheduling moves.
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    /// Start from the schedule after which the first read and the 0-writer
    /// can still be ordered either way.
    #[arg(long)]
    pub race_prefix: bool,
    /// Leave leaves where the depth cap cut them instead of running them to
    /// quiescence.
    #[arg(long)]
    pub no_complete: bool,
    #[arg(long, default_value_t = 2_000_000)]
    pub max_nodes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run::cmd_run(a).map(|_| true),
        Command::Search(mut a) => {
            a.adversary = AdversaryArg::Search;
            run::cmd_run(a).map(|_| true)
        }
        Command::Check(a) => check::cmd_check(a),
        Command::Report(a) => report::cmd_report(a).map(|_| true),
        Command::Tree(a) => tree::cmd_tree(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
