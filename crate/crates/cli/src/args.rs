use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use dugraph::graph::GraphBuildConfig;
use dugraph::model::NetConfig;
use dugraph::synth::{LabelRule, SynthConfig};
use dugraph::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "dugraph", version, about = "Dual-community graph attention for short-video misinformation detection")]
pub struct Cli {
    /// Log progress (-v) or per-epoch detail (-vv) to stderr.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted dual-community dataset.
    Synth(SynthArgs),
    /// Build the heterogeneous graph of a dataset.
    BuildGraph(BuildGraphArgs),
    /// Write event-level folds or a temporal split.
    Split(SplitCommandArgs),
    /// Masked-reconstruction pretraining on the whole graph.
    Pretrain(PretrainArgs),
    /// Fine-tune a classifier on one split; test labels are never read.
    Train(TrainArgs),
    /// Score a checkpoint on a split, or cross-validate from scratch.
    Eval(EvalArgs),
    /// Fake-news probabilities for every video.
    Predict(InferArgs),
    /// Final-layer video states as a table.
    ExportEmbeddings(InferArgs),
    /// Train and score on the earliest fraction of each event's videos.
    EarlyDetect(EarlyDetectArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::BuildGraph(_) => "build-graph",
            Command::Split(_) => "split",
            Command::Pretrain(_) => "pretrain",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Predict(_) => "predict",
            Command::ExportEmbeddings(_) => "export-embeddings",
            Command::EarlyDetect(_) => "early-detect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    UploaderGroupParity,
    EventType,
    XorOfBoth,
}

impl From<RuleArg> for LabelRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::UploaderGroupParity => LabelRule::UploaderGroupParity,
            RuleArg::EventType => LabelRule::EventType,
            RuleArg::XorOfBoth => LabelRule::XorOfBoth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Event,
    Temporal,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub events: usize,
    #[arg(long, default_value_t = 240)]
    pub uploaders: usize,
    #[arg(long, default_value_t = 24)]
    pub groups: usize,
    #[arg(long, default_value_t = 15)]
    pub min_videos: usize,
    #[arg(long, default_value_t = 25)]
    pub max_videos: usize,
    #[arg(long, default_value_t = 32)]
    pub video_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub uploader_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub event_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = RuleArg::XorOfBoth)]
    pub label_rule: RuleArg,
    /// Share of the class signal carried by graph structure instead of video features.
    #[arg(long, default_value_t = 0.9)]
    pub graph_signal: f64,
    #[arg(long, default_value_t = 365.0)]
    pub time_span_days: f64,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            n_events: self.events,
            n_uploaders: self.uploaders,
            n_uploader_groups: self.groups,
            videos_per_event: (self.min_videos, self.max_videos),
            d_v: self.video_dim,
            d_u: self.uploader_dim,
            d_e: self.event_dim,
            feature_noise_sigma: self.noise,
            label_rule: self.label_rule.into(),
            graph_signal_strength: self.graph_signal,
            time_span_days: self.time_span_days,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GraphArgs {
    /// Uploader cluster count.
    #[arg(long, default_value_t = 24)]
    pub k: usize,
    /// Share of event pairs linked by similarity.
    #[arg(long, default_value_t = 0.02)]
    pub edge_top_frac: f64,
    /// Link event pairs whose cosine similarity reaches this value instead.
    #[arg(long)]
    pub tau: Option<f64>,
}

impl GraphArgs {
    pub fn config(&self, seed: u64) -> GraphBuildConfig {
        GraphBuildConfig {
            k_clusters: self.k,
            edge_top_frac: self.edge_top_frac,
            tau_override: self.tau,
            seed,
            ..Default::default()
        }
    }
}

/// Dataset and graph inputs shared by the model commands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Dataset manifest (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    /// Prebuilt graph; built from the dataset when absent.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub graph_args: GraphArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NetArgs {
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 16)]
    pub time_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 0.2)]
    pub leaky_slope: f64,
}

impl NetArgs {
    pub fn config(&self, seed: u64) -> NetConfig {
        NetConfig {
            hidden_dim: self.hidden,
            time_dim: self.time_dim,
            num_layers: self.layers,
            leaky_slope: self.leaky_slope,
            init_seed: seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 0.30)]
    pub mask_ratio: f64,
    #[arg(long, default_value_t = 50)]
    pub pretrain_epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Epochs without monitored improvement before stopping.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Share of training videos held out for early stopping when there is no validation set.
    #[arg(long, default_value_t = 0.1)]
    pub holdout_frac: f64,
    /// Update only the classifier during fine-tuning.
    #[arg(long)]
    pub freeze_encoder: bool,
}

impl OptimArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            mask_ratio: self.mask_ratio,
            pretrain_epochs: self.pretrain_epochs,
            finetune_epochs: self.epochs,
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            early_stop_patience: self.patience,
            holdout_frac: self.holdout_frac,
            freeze_encoder: self.freeze_encoder,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long, value_enum, default_value_t = SplitKind::Temporal)]
    pub split: SplitKind,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Event-level fold used as the test set.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, default_value_t = 0.70)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    pub val_frac: f64,
    /// Splits written by `split`; overrides the other split flags except --fold.
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub graph_args: GraphArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitCommandArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Start from these (pretrained) weights; the network shape comes from the file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Skip reconstruction pretraining when starting from scratch.
    #[arg(long)]
    pub no_pretrain: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Score this trained model; without it every fold is trained from scratch.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub no_pretrain: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EarlyDetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Share of each event's earliest videos kept, in (0, 1].
    #[arg(long)]
    pub fraction: f64,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub no_pretrain: bool,
}
