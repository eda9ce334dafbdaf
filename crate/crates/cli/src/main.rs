//! `percept`: command-line front end for the perceptual-code pipeline.
//!
//! Exit codes: 0 on success, 1 on a domain error (one `error: ...` line on
//! stderr), 2 on a usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use percept_core::config::{
    DEFAULT_BINS, DEFAULT_COMPONENTS, DEFAULT_K, DEFAULT_MAX_ITERS, DEFAULT_Q, DEFAULT_TOLERANCE,
};
use percept_core::{IntervalMode, WeightTransform};

#[derive(Parser)]
#[command(name = "percept", version, about = "Perceptual codes for example-based explanations")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PERCEPT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a file is a well-formed pipeline artifact.
    Validate { file: PathBuf },
    /// Print an artifact's kind, version and embedded config.
    Info { file: PathBuf },
    /// Per-neuron histograms of an activation dump.
    Hist {
        dump: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-neuron mixtures and mark relevant components.
    Fit(FitArgs),
    /// Encode a dump with a class bank.
    Encode {
        dump: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `variance` or `k_sigma(K)`.
        #[arg(long, default_value_t = IntervalMode::Variance)]
        interval_mode: IntervalMode,
        /// Class predicted for the dump; must match the bank's class.
        #[arg(long)]
        predicted: Option<String>,
    },
    /// Atlas operations.
    #[command(subcommand)]
    Atlas(AtlasCommand),
    /// Nearest atlas entries for one encoded sample.
    Query {
        atlas: PathBuf,
        /// `codes.pccode:sample_id`
        #[arg(long)]
        code: String,
        #[command(flatten)]
        search: SearchArgs,
        /// Skip an atlas entry with the query's own sample id.
        #[arg(long)]
        exclude_self: bool,
    },
    /// Leave-one-out prediction-basis accuracy of test codes.
    Eval {
        atlas: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Sample metadata TSV supplying intra-class tags.
        #[arg(long)]
        meta: Option<PathBuf>,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        report: PathBuf,
    },
    /// 2-D PCA projection of the atlas codes.
    Project {
        atlas: PathBuf,
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Generate synthetic dumps and metadata from a TOML spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct FitArgs {
    /// Activation dump, or a histogram file from `percept hist`.
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
    components: usize,
    /// Ignored for histogram input.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_Q)]
    q: f64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum AtlasCommand {
    /// Combine code files of one class into an atlas.
    Build {
        #[arg(required = true)]
        codes: Vec<PathBuf>,
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SearchArgs {
    #[arg(short, long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Weight differing bits by atlas popularity.
    #[arg(long)]
    weighted: bool,
    /// `identity`, `inverse` or `log_inverse`.
    #[arg(long, default_value_t = WeightTransform::Identity)]
    weight_transform: WeightTransform,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace(['\n', '\r'], " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
