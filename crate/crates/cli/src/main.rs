//! `topiclabel`: corpus preparation, topic model training, simulated
//! annotation runs, metric evaluation and the annotation server.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 runtime error.

mod commands;
mod manifest;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use topiclabel::session::Condition;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Data(_) => 3,
            Self::Runtime(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Data(format!("{}: {e}", path.display()))
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        Self::Data(e.to_string())
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "topiclabel", version, about = "Topic-model-assisted document annotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus with major and sub labels.
    Synth(SynthArgs),
    /// Tokenize a corpus and write vocabulary, tf-idf and bag-of-words artifacts.
    Prepare(PrepareArgs),
    /// Train an LDA or sLDA topic model on a prepared corpus.
    Train(TrainArgs),
    /// Run the scripted-annotator benchmark and write metric curves.
    Simulate(SimulateArgs),
    /// Compare two label files; prints purity, ARI and ANMI as JSON.
    Eval(EvalArgs),
    /// Serve the annotation HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output corpus (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub docs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Corpus in JSON lines: {"id", "text", "major_label"?, "sub_label"?}.
    #[arg(long)]
    pub corpus: PathBuf,
    /// One stopword per line; a built-in English list when omitted.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub min_df: usize,
    /// Drop terms in more than this fraction of documents.
    #[arg(long, default_value_t = 0.5)]
    pub max_df: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Lda,
    Slda,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub prepared: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Lda)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 35)]
    pub k: usize,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// sLDA responses as CSV with a `doc_id,label` header.
    #[arg(long)]
    pub responses: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TopicArgs {
    /// Topic model written by `train`.
    #[arg(long, conflicts_with_all = ["theta", "keywords"])]
    pub model: Option<PathBuf>,
    /// External document-topic CSV (`doc_id,t0,...`).
    #[arg(long, requires = "keywords")]
    pub theta: Option<PathBuf>,
    /// JSON list of keyword lists, one per topic.
    #[arg(long, requires = "theta")]
    pub keywords: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub prepared: PathBuf,
    /// JSON simulation config; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_condition)]
    pub condition: Option<Condition>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Documents labeled per run.
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Topics for the LDA trained when no model is given.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub retrain_every: Option<usize>,
    #[command(flatten)]
    pub topics: TopicArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted labels, CSV with a `doc_id,label` header.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold labels in the same format.
    #[arg(long)]
    pub gold: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub prepared: PathBuf,
    #[command(flatten)]
    pub topics: TopicArgs,
    /// Open one session with this condition at startup.
    #[arg(long, value_parser = parse_condition)]
    pub condition: Option<Condition>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Persist sessions here and restore the ones already present.
    #[arg(long)]
    pub sessions: Option<PathBuf>,
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Prepare(a) => commands::prepare(&a),
        Command::Train(a) => commands::train(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Serve(a) => commands::serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
