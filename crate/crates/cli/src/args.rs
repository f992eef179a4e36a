use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "vager",
    version,
    about = "Few-shot classifier transfer through a visual-analogy graph"
)]
pub struct Cli {
    /// TOML file whose keys mirror flag names; top-level keys apply to every
    /// command that takes them, `[command]` tables to that command only.
    /// Flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic base and novel feature files.
    Synth(SynthCmd),
    /// Train one-vs-rest base classifiers.
    TrainBase(TrainBaseCmd),
    /// Build the analogy graph and learn the joint embedding.
    Embed(EmbedCmd),
    /// Transfer classifiers to novel classes from k samples each.
    Transfer(TransferCmd),
    /// Combine transferred classifiers with k-shot training.
    Fuse(FuseCmd),
    /// Run the binary or m-way evaluation protocol and write reports.
    Eval(EvalCmd),
    /// Run every stage end to end.
    Pipeline(PipelineCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Binary,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Binary,
    Multiway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Initializing,
    Tuning,
    Voting,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub n_base: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 5)]
    pub n_novel: usize,
    #[arg(long, default_value_t = 120)]
    pub samples_per_base: usize,
    #[arg(long, default_value_t = 120)]
    pub samples_per_novel: usize,
    /// Within-class standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub cluster_std: f64,
    #[arg(long, default_value_t = 1.0)]
    pub center_scale: f64,
    /// Rank of the base centers; defaults to max(d / 4, 1).
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Offset of each novel center from its mixture of base centers.
    #[arg(long, default_value_t = 0.1)]
    pub noise_std: f64,
    /// Draw novel mixtures from symmetric Dirichlets with concentrations
    /// sweeping MAX..MIN instead of two-center mixtures.
    #[arg(long, value_name = "MIN,MAX", value_delimiter = ',', num_args = 2)]
    pub concentration: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct LrArgs {
    /// L2 coefficient of logistic regression.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda_reg: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Initial SGD step, decayed as 1/sqrt(epoch).
    #[arg(long, default_value_t = 0.1)]
    pub step_size: f64,
    /// Negatives sampled per positive.
    #[arg(long, default_value_t = 20)]
    pub neg_per_pos: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VagerArgs {
    /// Embedding dimension; defaults to min(n - 1, p, 32).
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 500)]
    pub max_outer_iters: usize,
    #[arg(long, default_value_t = 5)]
    pub inner_steps_v: usize,
    #[arg(long, default_value_t = 5)]
    pub inner_steps_t: usize,
    #[arg(long, default_value_t = 0.01)]
    pub embed_step_size: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    #[arg(long, value_enum, default_value_t = Protocol::Binary)]
    pub protocol: Protocol,
    /// Shots per novel class; a comma list runs one report per value.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub k: Vec<usize>,
    /// Trials per report; defaults to 50 (binary) or 100 (multiway).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma list of methods.
    #[arg(long)]
    pub methods: Option<String>,
    /// Novel classes per multiway trial.
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    /// Multiway test samples per class.
    #[arg(long, default_value_t = 5)]
    pub test_per_class: usize,
    /// Binary test negatives drawn from each base class.
    #[arg(long, default_value_t = 5)]
    pub test_neg_per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    pub voting_lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tuning_lambda: f64,
    /// Score threshold for F1.
    #[arg(long, default_value_t = 0.5)]
    pub f1_threshold: f64,
    /// Report micro instead of per-class-averaged top-1.
    #[arg(long)]
    pub micro_top1: bool,
    /// Record ROC points of the first trial.
    #[arg(long)]
    pub roc: bool,
    /// K of the similarity-ratio diagnostics (binary protocol).
    #[arg(long, default_value_t = 10)]
    pub sr_k: usize,
    /// Skip the similarity-ratio diagnostics.
    #[arg(long)]
    pub no_sr: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthCmd {
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainBaseCmd {
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    /// Base feature file (.csv or binary).
    #[arg(long)]
    pub base: PathBuf,
    /// Output classifier file.
    #[arg(long)]
    pub out: PathBuf,
    /// L2-normalize features before training.
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub lr: LrArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EmbedCmd {
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base: PathBuf,
    /// Base classifier file from train-base.
    #[arg(long)]
    pub weights: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the analogy graph as CSV.
    #[arg(long, value_name = "FILE")]
    pub graph_csv: Option<PathBuf>,
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub vager: VagerArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TransferCmd {
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub novel: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Ridge added to the pseudo-inverse (0 = exact).
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FuseCmd {
    /// Must match the seed given to transfer so the same k samples are used.
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub novel: PathBuf,
    /// Transferred classifier file.
    #[arg(long)]
    pub transferred: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = Strategy::Voting)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub lr: LrArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalCmd {
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base: PathBuf,
    /// Held-out base samples used as binary test negatives; without it test
    /// negatives come from --base and are excluded from training.
    #[arg(long)]
    pub base_test: Option<PathBuf>,
    #[arg(long)]
    pub novel: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "report")]
    pub stem: String,
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[command(flatten)]
    pub lr: LrArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineCmd {
    /// Master seed; every stage derives its own seed from it.
    #[arg(long, required = true)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "vager-run")]
    pub out_dir: PathBuf,
    /// Base features; synthesized when absent (together with --novel).
    #[arg(long, requires = "novel")]
    pub base: Option<PathBuf>,
    #[arg(long, requires = "base")]
    pub novel: Option<PathBuf>,
    /// Base samples per class held out as binary test negatives.
    #[arg(long, default_value_t = 5)]
    pub holdout_per_class: usize,
    /// Reuse base_classifiers.vagc and model.vagm already in --out-dir.
    #[arg(long)]
    pub resume: bool,
    /// Fusion strategy of the persisted fused classifiers.
    #[arg(long, value_enum, default_value_t = Strategy::Voting)]
    pub strategy: Strategy,
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub lr: LrArgs,
    #[command(flatten)]
    pub vager: VagerArgs,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}
