mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use output::Format;

/// Small-sample behaviour of confusion-matrix metrics.
///
/// Probabilities and matrices are comma-separated in TP,FN,FP,TN order.
#[derive(Debug, Parser)]
#[command(name = "cmx", version, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Output format [default: json for match and cps, csv otherwise]
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Write data here instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Only report errors on stderr
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,

    /// Log progress and diagnostics on stderr
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List every confusion matrix with a given total
    Enumerate(EnumerateArgs),
    /// Count matrices on which a metric is undefined
    Holes(HolesArgs),
    /// Where an observed score falls under a reference distribution
    Match(MatchArgs),
    /// Smooth a confusion matrix toward a reference group
    Cps(CpsArgs),
    /// Score distribution of a metric at a fixed sample size
    Dist(DistArgs),
    /// Run a downsampling study from a JSON config
    Study(StudyArgs),
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    /// Total count
    #[arg(long)]
    pub n: u64,

    /// Print only the number of matrices
    #[arg(long)]
    pub count_only: bool,

    /// Refuse to list more than this many matrices
    #[arg(long, default_value_t = 2_000_000)]
    pub max_rows: u128,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("size").required(true).args(["n", "range"])))]
pub struct HolesArgs {
    /// Metric name, or `all`
    #[arg(long)]
    pub metric: String,

    /// Total count (first group for two-group metrics)
    #[arg(long)]
    pub n: Option<u64>,

    /// Inclusive range of totals, e.g. 3..40
    #[arg(long, value_name = "START..END")]
    pub range: Option<String>,

    /// Second group size for two-group metrics [default: same as first]
    #[arg(long)]
    pub n2: Option<u64>,

    /// Largest total that is enumerated; beyond it only closed forms are shown
    #[arg(long, default_value_t = 60)]
    pub cap: u64,

    /// Largest number of matrix pairs enumerated for two-group metrics
    #[arg(long, default_value_t = 50_000_000)]
    pub pair_cap: u128,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("observed").required(true).args(["score", "cm"])))]
pub struct MatchArgs {
    /// A binomial metric, a joint-ratio metric, or mb
    #[arg(long)]
    pub metric: String,

    /// Target group size (taken from --cm when that is given)
    #[arg(long, required_unless_present = "cm")]
    pub n: Option<u64>,

    /// Observed score
    #[arg(long, allow_negative_numbers = true)]
    pub score: Option<f64>,

    /// Observed counts TP,FN,FP,TN
    #[arg(long, value_name = "TP,FN,FP,TN")]
    pub cm: Option<String>,

    /// Reference cell probabilities (or counts, which are normalized)
    #[arg(long = "ref", value_name = "P_TP,P_FN,P_FP,P_TN")]
    pub reference: String,

    /// exact, normal, beta or auto
    #[arg(long, default_value = "auto")]
    pub method: String,

    /// Use the normal approximation even where np or nq is below 5
    #[arg(long)]
    pub force: bool,

    /// Pseudo-count for the beta approximation
    #[arg(long, default_value_t = 1.0)]
    pub pseudo: f64,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("prior").required(true).args(["reference", "total"])))]
pub struct CpsArgs {
    /// Group counts TP,FN,FP,TN
    #[arg(long, value_name = "TP,FN,FP,TN")]
    pub cm: String,

    /// Reference probabilities or counts
    #[arg(long = "ref", value_name = "TP,FN,FP,TN")]
    pub reference: Option<String>,

    /// Population counts; the reference is this minus --cm
    #[arg(long, value_name = "TP,FN,FP,TN")]
    pub total: Option<String>,

    /// Smoothing strength
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,

    /// Report these metrics before and after smoothing (comma-separated, or `all`)
    #[arg(long)]
    pub metrics: Option<String>,
}

#[derive(Debug, Args)]
pub struct DistArgs {
    /// One-group metric
    #[arg(long)]
    pub metric: String,

    /// Sample size
    #[arg(long)]
    pub n: u64,

    /// Cell probabilities [default: uniform]
    #[arg(long, value_name = "P_TP,P_FN,P_FP,P_TN")]
    pub p: Option<String>,

    /// Monte Carlo replicates; exact enumeration when omitted
    #[arg(long)]
    pub replicates: Option<u64>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Largest n for exact enumeration
    #[arg(long, default_value_t = 60)]
    pub cap: u64,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Study config (JSON)
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,

    /// Override the config's seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Override the config's replicate count
    #[arg(long)]
    pub replicates: Option<u64>,

    /// Worker threads [default: CMX_THREADS, else all cores]
    #[arg(long)]
    pub threads: Option<usize>,
}

fn init_logging(g: &GlobalOpts) {
    let level = if g.quiet {
        log::LevelFilter::Error
    } else if g.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(&cli.global);
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
