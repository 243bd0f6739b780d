use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dance_core::corpus::Split;
use dance_core::eval::Direction;
use dance_core::trainer::Stage;

/// Dense retrieval experiments with a contrastive dual objective.
///
/// Exit codes: 0 success, 1 I/O failure writing outputs, 2 data or usage
/// error, 3 training error, 4 missing artifact, 5 diagnostics input error.
#[derive(Debug, Parser)]
#[command(name = "dance", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate a corpus (or generate a synthetic one) and write it with its token cache.
    Ingest(IngestArgs),
    /// Run one training stage and write `checkpoint.bin` and `steps.csv`.
    Train(TrainArgs),
    /// Retrieve for every topic of a split and write `run.trec` and `metrics.json`.
    Eval(EvalArgs),
    /// Embedding-space analyses written to `diagnostics.json` and CSV tables.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON experiment configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for every random draw of the command [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Norm,
    Dual,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Norm => Stage::Normalization,
            StageArg::Dual => Stage::Dual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Doc,
    Query,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Doc => Direction::Doc,
            DirectionArg::Query => Direction::Query,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding docs.tsv, train_queries.tsv, dev_queries.tsv, train_qrels.txt and dev_qrels.txt.
    #[arg(long, value_name = "DIR", conflicts_with = "synthetic")]
    pub corpus_dir: Option<PathBuf>,
    /// Documents TSV: doc_id, url, title, body.
    #[arg(long, value_name = "PATH")]
    pub docs: Option<PathBuf>,
    /// Training queries TSV: query_id, text.
    #[arg(long, value_name = "PATH")]
    pub train_queries: Option<PathBuf>,
    /// Development queries TSV: query_id, text.
    #[arg(long, value_name = "PATH")]
    pub dev_queries: Option<PathBuf>,
    /// Training qrels: query_id 0 doc_id relevance.
    #[arg(long, value_name = "PATH")]
    pub train_qrels: Option<PathBuf>,
    /// Development qrels: query_id 0 doc_id relevance.
    #[arg(long, value_name = "PATH")]
    pub dev_qrels: Option<PathBuf>,
    /// Generate a topic-clustered synthetic corpus instead of reading files.
    #[arg(long)]
    pub synthetic: bool,
    /// Synthetic topics [default: 16].
    #[arg(long, requires = "synthetic")]
    pub n_topics: Option<usize>,
    /// Synthetic documents per topic [default: 8].
    #[arg(long, requires = "synthetic")]
    pub docs_per_topic: Option<usize>,
    /// Synthetic queries per topic [default: 4].
    #[arg(long, requires = "synthetic")]
    pub queries_per_topic: Option<usize>,
    /// Synthetic concepts per topic [default: 20].
    #[arg(long, requires = "synthetic")]
    pub vocab_per_topic: Option<usize>,
    /// Probability that a synthetic token is drawn off-topic [default: 0.1].
    #[arg(long, requires = "synthetic")]
    pub noise_rate: Option<f64>,
    /// Hash buckets of the tokenizer [default: 65536].
    #[arg(long)]
    pub vocab_buckets: Option<usize>,
    /// Query truncation length in tokens [default: 64].
    #[arg(long)]
    pub query_max_len: Option<usize>,
    /// Document truncation length in tokens [default: 512].
    #[arg(long)]
    pub doc_max_len: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ingested corpus directory.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Training stage; `norm` forces λ = 0 [default: norm].
    #[arg(long, value_enum)]
    pub stage: Option<StageArg>,
    /// Checkpoint to continue from; required by `--stage dual`.
    #[arg(long, value_name = "PATH")]
    pub init: Option<PathBuf>,
    /// Dual loss weight λ, used by the dual stage [default: 0.1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Temperature τ [default: 0.01].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Steps run by this invocation [default: 2000].
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Peak learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Linear warmup steps [default: 100].
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    /// Training pairs per micro-batch [default: 16].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Micro-batches per optimizer step [default: 1].
    #[arg(long)]
    pub grad_accum: Option<usize>,
    /// Steps between index refreshes [default: 100].
    #[arg(long)]
    pub refresh_interval: Option<u64>,
    /// Negatives per instance [default: 8].
    #[arg(long)]
    pub n_neg: Option<usize>,
    /// Top candidates negatives are drawn from [default: 200].
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Steps between intermediate checkpoints, 0 for final only [default: 0].
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Embedding width of freshly initialized parameters [default: 64].
    #[arg(long)]
    pub d_model: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ingested corpus directory.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Checkpoint to evaluate.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// `doc`: queries retrieve documents; `query`: documents retrieve queries [default: doc].
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    /// Candidates retrieved per topic [default: 100].
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Split whose topics are evaluated [default: dev].
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ingested corpus directory.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Checkpoint to analyse.
    #[arg(long, value_name = "PATH", conflicts_with = "compare")]
    pub checkpoint: Option<PathBuf>,
    /// Analyse two checkpoints and report second-minus-first changes.
    #[arg(long, num_args = 2, value_names = ["FIRST", "SECOND"])]
    pub compare: Option<Vec<PathBuf>>,
    /// Pair count above which distances are sampled [default: 10000000].
    #[arg(long)]
    pub sample_budget: Option<usize>,
    /// Retrieval depth of the runs behind recall buckets and group metrics [default: 100].
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Split whose queries are analysed [default: dev].
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}
