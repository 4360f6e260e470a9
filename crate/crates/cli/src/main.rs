//! Command-line front end for the distinct-context pipeline: sample a corpus,
//! collapse it to a table, analyze the induced geometry, solve for the
//! reference decoders, run training or the norm-constrained path, and check
//! a finished run's artifacts.
//!
//! Every command resolves its parameters as preset < config file < flags,
//! echoes the resolved configuration as one JSON line on stdout, and writes a
//! `.meta.json` sidecar next to each artifact with the same configuration
//! plus content hashes of the inputs. Failures print a structured JSON error
//! on stderr and exit nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;


#[derive(Parser)]
#[command(name = "ntp-bias", version, disable_help_subcommand = true)]
#[command(about = "Distinct-context next-token pipeline: generate, aggregate, analyze, solve, train, regpath, report")]
struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic corpus and its ground-truth table.
    Generate(GenerateArgs),
    /// Collapse a corpus into a distinct-context table.
    Aggregate(AggregateArgs),
    /// Decide compatibility and separability for a table.
    Analyze(AnalyzeArgs),
    /// Solve for the anchored fit and the max-margin separator.
    Solve(SolveArgs),
    /// Run a training loop and record a metrics trace.
    Train(TrainArgs),
    /// Trace minimizers over a grid of growing norm budgets.
    Regpath(RegpathArgs),
    /// Check a finished run's artifacts and emit a verdict.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Named parameter bundle: m50 or d2.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON file whose keys mirror the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub contexts: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub vocab: Option<u32>,
    /// Support size per context.
    #[arg(long)]
    pub support: Option<usize>,
    /// Number of sampled sequences.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "corpus.json")]
    pub corpus_out: PathBuf,
    /// Ground-truth table the sampler drew from.
    #[arg(long, default_value = "table.json")]
    pub table_out: PathBuf,
}

#[derive(Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Named parameter bundle: m50 or d2.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON file whose keys mirror the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding dimension for hash-seeded embeddings.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Seed for hash-seeded embeddings.
    #[arg(long)]
    pub embed_seed: Option<u64>,
    /// Reuse the embeddings stored in an existing table instead.
    #[arg(long, conflicts_with_all = ["dim", "embed_seed"])]
    pub embeddings_from: Option<PathBuf>,
    /// Build one sub-table per prefix length instead of full contexts only.
    #[arg(long)]
    pub autoregressive: bool,
    #[arg(long, default_value = "table.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// JSON file whose keys mirror the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Relative residual tolerance for the anchored fit.
    #[arg(long)]
    pub ls_tol: Option<f64>,
    /// Relative duality-gap tolerance for the margin solver.
    #[arg(long)]
    pub svm_tol: Option<f64>,
    /// Margin solver budget in coordinate updates.
    #[arg(long)]
    pub svm_budget: Option<usize>,
    #[arg(long, default_value = "analysis.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// JSON file whose keys mirror the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ls_tol: Option<f64>,
    #[arg(long)]
    pub svm_tol: Option<f64>,
    #[arg(long)]
    pub svm_budget: Option<usize>,
    /// Anchored-fit decoder output.
    #[arg(long, default_value = "wstar.json")]
    pub wstar_out: PathBuf,
    /// Max-margin solution output.
    #[arg(long, default_value = "svm.json")]
    pub svm_out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Named parameter bundle: m50 or d2.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON file whose keys mirror the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// gd, ngd, or adam.
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub record_every: Option<usize>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Seeded Gaussian init instead of zero init.
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Skip the step-size safety bound.
    #[arg(long)]
    pub allow_large_eta: bool,
    /// Skip reference solutions; alignment columns become NaN.
    #[arg(long)]
    pub no_refs: bool,
    /// Margin solver budget when computing references.
    #[arg(long)]
    pub svm_budget: Option<usize>,
    #[arg(long, default_value = "trace.csv")]
    pub trace_out: PathBuf,
    /// Optional final-decoder dump.
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RegpathArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// JSON file whose keys mirror the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated norm budgets; default 2,4,...,256.
    #[arg(long)]
    pub radii: Option<String>,
    #[arg(long)]
    pub inner_tol: Option<f64>,
    /// Projected-gradient budget per radius.
    #[arg(long)]
    pub inner_budget: Option<usize>,
    /// Skip reference solutions; alignment columns become NaN.
    #[arg(long)]
    pub no_refs: bool,
    /// Margin solver budget when computing references.
    #[arg(long)]
    pub svm_budget: Option<usize>,
    #[arg(long, default_value = "regpath.csv")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    /// Optional norm-budget path to check as well.
    #[arg(long)]
    pub regpath: Option<PathBuf>,
    /// Optional max-margin solution to check as well.
    #[arg(long)]
    pub svm: Option<PathBuf>,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Plot-ready trace curve with log-scale helper columns.
    #[arg(long, default_value = "report_curve.csv")]
    pub curve_out: PathBuf,
    /// Plot-ready path curve, written when --regpath is given.
    #[arg(long, default_value = "report_path.csv")]
    pub path_out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate(a) => commands::cmd_generate(a),
        Cmd::Aggregate(a) => commands::cmd_aggregate(a),
        Cmd::Analyze(a) => commands::cmd_analyze(a),
        Cmd::Solve(a) => commands::cmd_solve(a),
        Cmd::Train(a) => commands::cmd_train(a),
        Cmd::Regpath(a) => commands::cmd_regpath(a),
        Cmd::Report(a) => commands::cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
