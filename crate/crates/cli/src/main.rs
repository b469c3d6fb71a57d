//! `nelaudit`: ingest corpora, draw static batches, estimate accuracy,
//! compare annotation cost against an SRS baseline, and run the service.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nelaudit_core::{DesignKind, Labeler};

/// Accuracy audits for entity-linking corpora.
#[derive(Debug, Parser)]
#[command(name = "nelaudit", version, about)]
pub struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a triple corpus and write a corpus bundle.
    Ingest {
        /// Corpus JSONL, one triple per line.
        #[arg(long)]
        corpus: PathBuf,
        /// Stratification scheme JSON; defaults to the GutBrainIE scheme.
        #[arg(long)]
        scheme: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus with chosen stratum shapes.
    Synth {
        /// `LABEL:TRIPLES:CLUSTERS`, once per stratum.
        #[arg(long = "stratum", required = true)]
        strata: Vec<String>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Corpus JSONL output.
        #[arg(long)]
        out: PathBuf,
        /// Also write the matching one-label-per-stratum scheme.
        #[arg(long)]
        scheme_out: Option<PathBuf>,
    },
    /// Draw a static batch sized by a synthetic-label simulation.
    Batch(BatchArgs),
    /// Estimate accuracy from a batch and its judgments.
    Estimate {
        #[arg(long)]
        batch: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
        /// Also print the per-stratum table.
        #[arg(long)]
        per_stratum: bool,
    },
    /// Compare the annotation order's cost with simulated SRS orders.
    SimulateSrs(SimulateArgs),
    /// Run the annotation service.
    Serve {
        /// Corpus bundle the service accepts batches for.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "NELAUDIT_DATA_DIR", default_value = ".nelaudit")]
        data_dir: PathBuf,
    },
    /// Talk to a running service.
    Session {
        #[arg(long, env = "NELAUDIT_SERVER", default_value = "http://127.0.0.1:8080")]
        server: String,
        #[command(subcommand)]
        command: SessionCommand,
    },
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Corpus bundle written by `ingest`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "stwcs")]
    pub design: DesignKind,
    /// Second-stage cap on triples per cluster.
    #[arg(long, default_value_t = nelaudit_core::sampling::DEFAULT_M)]
    pub m: usize,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// `alternating`, `bernoulli:P` or `constant:correct|incorrect`.
    #[arg(long, default_value = "alternating")]
    pub labeler: Labeler,
    /// Fully judged clusters required before the estimate can converge.
    #[arg(long, default_value_t = nelaudit_core::estimation::DEFAULT_MIN_CLUSTERS)]
    pub min_clusters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub judgments: PathBuf,
    #[arg(long)]
    pub batch: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub perms: usize,
    #[arg(long, default_value_t = 10_000)]
    pub boot: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Base seconds per triple; derived from the judgments when omitted.
    #[arg(long)]
    pub t_base: Option<f64>,
    /// Extra seconds per context switch; derived when omitted.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Drop observations longer than this when deriving timings.
    #[arg(long, default_value_t = nelaudit_core::cost::DEFAULT_OUTLIER_CAP_S)]
    pub outlier_cap: f64,
    /// Write raw per-permutation counts here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SessionCommand {
    /// Upload a batch and start a session.
    Create {
        #[arg(long)]
        batch: PathBuf,
        /// Seed the session with an earlier export.
        #[arg(long)]
        judgments: Option<PathBuf>,
    },
    /// List the service's sessions.
    List,
    /// Show one session's progress.
    Status { id: String },
    /// Print a session's current estimate.
    Estimate { id: String },
    /// Save a session's judgments to a file.
    Export {
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge a judgments file into a session.
    Import {
        id: String,
        #[arg(long)]
        judgments: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
