//! Two-stage passage ranking pipeline: BM25 retrieval, neural re-ranking,
//! and ranking-quality evaluation, with every stage persisted to files.

mod commands;
mod manifest;
mod vocab_io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "rerank",
    version,
    about = "BM25 retrieval with neural re-ranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 inverted index from a passage collection.
    Index(IndexArgs),
    /// Retrieve top-k passages per query from an index.
    Search(SearchArgs),
    /// Train a cross-encoder re-ranker on first-stage candidates.
    Train(TrainArgs),
    /// Re-rank a first-stage run with a trained model.
    Rerank(RerankArgs),
    /// Score a run against relevance judgments.
    Eval(EvalArgs),
    /// Train one model per training-set size and chart held-out MRR@10.
    LearningCurve(CurveArgs),
    /// Generate a synthetic keyword-matching dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IndexArgs {
    /// Passage collection TSV (id<TAB>text).
    #[arg(long)]
    collection: PathBuf,
    /// Output index path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    k1: f64,
    #[arg(long, default_value_t = 0.4)]
    b: f64,
}

#[derive(Args)]
struct SearchArgs {
    /// Index built by the index command.
    #[arg(long)]
    index: PathBuf,
    /// Query TSV (id<TAB>text).
    #[arg(long)]
    queries: PathBuf,
    /// Output run file (TREC format).
    #[arg(long)]
    out: PathBuf,
    /// Candidates retrieved per query.
    #[arg(long, default_value_t = 1000)]
    k: usize,
    /// Tag written in the run file's last column.
    #[arg(long, default_value = "bm25")]
    tag: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    collection: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Relevance judgments (TREC qrels).
    #[arg(long)]
    qrels: PathBuf,
    /// First-stage run supplying candidate passages.
    #[arg(long)]
    run: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    checkpoint_out: PathBuf,
    /// Output vocabulary path.
    #[arg(long)]
    vocab_out: PathBuf,
    /// Output loss-log TSV; defaults to <checkpoint-out>.log.tsv.
    #[arg(long)]
    log_out: Option<PathBuf>,
    /// Continue from an existing checkpoint instead of a fresh model.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-6)]
    base_lr: f64,
    #[arg(long)]
    warmup_steps: u64,
    #[arg(long)]
    total_steps: u64,
    /// Candidate depth from which negatives are sampled.
    #[arg(long, default_value_t = 1000)]
    depth: usize,
    #[arg(long, default_value_t = 4)]
    negatives_per_query: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Optional global gradient-norm clip.
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Vocabulary size cap when building the vocabulary.
    #[arg(long, default_value_t = 4096)]
    max_vocab: usize,
    #[arg(long, default_value_t = 64)]
    max_query_pieces: usize,
    #[arg(long, default_value_t = 256)]
    max_total_pieces: usize,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    collection: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// First-stage run whose candidates are re-scored.
    #[arg(long)]
    run: PathBuf,
    /// Output run file (TREC format).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "neural")]
    tag: String,
    #[arg(long, default_value_t = 64)]
    max_query_pieces: usize,
    #[arg(long, default_value_t = 256)]
    max_total_pieces: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Metric to report: mrr10 or map.
    #[arg(long)]
    metric: String,
    /// Output TSV: metric, value, evaluated, skipped.
    #[arg(long)]
    out: PathBuf,
    /// Truncate each ranked list to this depth before scoring.
    #[arg(long)]
    cutoff: Option<usize>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    collection: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// First-stage run; the last --holdout query lists are the eval split.
    #[arg(long)]
    run: PathBuf,
    /// Training-set sizes in pairs, strictly increasing.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<u64>,
    /// Output TSV: pairs, mrr10.
    #[arg(long)]
    out: PathBuf,
    /// Queries held out (from the end of the run) for evaluation.
    #[arg(long, default_value_t = 50)]
    holdout: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    base_lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    depth: usize,
    #[arg(long, default_value_t = 4)]
    negatives_per_query: usize,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, default_value_t = 4096)]
    max_vocab: usize,
    #[arg(long, default_value_t = 64)]
    max_query_pieces: usize,
    #[arg(long, default_value_t = 256)]
    max_total_pieces: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving collection.tsv, queries.tsv, and qrels.txt.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    num_passages: usize,
    #[arg(long, default_value_t = 250)]
    num_queries: usize,
    #[arg(long, default_value_t = 64)]
    vocab_words: usize,
    #[arg(long, default_value_t = 6)]
    len_lo: usize,
    #[arg(long, default_value_t = 18)]
    len_hi: usize,
    #[arg(long, default_value_t = 4)]
    relevant_per_query: usize,
    #[arg(long, default_value_t = 417)]
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index(args) => commands::cmd_index(args),
        Command::Search(args) => commands::cmd_search(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Rerank(args) => commands::cmd_rerank(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::LearningCurve(args) => commands::cmd_learning_curve(args),
        Command::Synth(args) => commands::cmd_synth(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
