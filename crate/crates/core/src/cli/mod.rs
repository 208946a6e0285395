//! The `univar` command line.
//!
//! ```text
//! univar [--config FILE] [--seed N] [--out DIR] <command>
//!   build-corpus                    generate questions and collect QA pairs
//!   train  [--lambda] [--tau] [--batch-size]
//!   embed  [--corpus FILE]...       write the embedding store
//!   eval   [--k]                    kNN / linear-probe report
//!   map                             2D value map (CSV, JSON, SVG) and centroid distances
//!   transfer --reference STORE --subject ID --source ID --target ID STORE...
//!   selfcheck                       loss and gradient oracles
//! ```
//!
//! Exit status is 0 on success, 1 on a domain error and 2 on a usage error.
//! Every command except `selfcheck` writes `manifest-<command>.json` to the
//! output directory.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "univar", version, about = "Value embeddings for LLM answers")]
struct Cli {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; relative configured paths resolve against it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate questions and collect QA pairs from the configured clients.
    BuildCorpus,
    /// Train the encoder on the corpus's training pairs.
    Train(TrainArgs),
    /// Embed corpus QA pairs with a trained checkpoint.
    Embed(EmbedArgs),
    /// Value identification report from an embedding store.
    Eval(EvalArgs),
    /// Project an embedding store to 2D and export the value map.
    Map,
    /// Centroid distances of a subject to fixed source and target values.
    Transfer(TransferArgs),
    /// Run the analytic loss and gradient oracles.
    Selfcheck,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Maximum QA pairs per view.
    #[arg(long)]
    lambda: Option<usize>,
    /// InfoNCE temperature.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Corpus files to embed (default: the configured corpus).
    #[arg(long)]
    corpus: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// kNN neighbours.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct TransferArgs {
    /// Store whose centroids give the fixed source and target references.
    #[arg(long)]
    reference: PathBuf,
    /// Value id (llm@lang) whose centroid moves.
    #[arg(long)]
    subject: String,
    #[arg(long)]
    source: String,
    #[arg(long)]
    target: String,
    /// Step label of each checkpoint store (default 0, 1, ...).
    #[arg(long, value_delimiter = ',')]
    steps: Vec<usize>,
    /// One store per checkpoint, in training order.
    #[arg(required = true)]
    stores: Vec<PathBuf>,
}

/// Parses `argv` (program name first) and runs the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
