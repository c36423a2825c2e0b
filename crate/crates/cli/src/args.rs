use std::path::PathBuf;

use adplace_core::eval::DEFAULT_SCALE;
use adplace_core::features::{DEFAULT_HASH_BITS, DEFAULT_RAW_DIMENSION};
use adplace_core::{Denominator, FeatureMode, FeaturizerConfig, FtrlParams, PolicyConfig, ScoreSpace};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "adplace", version, about = "Ad placement from logged bandit feedback")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Flat `key = value` file of default flag values; flags given on the
    /// command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a log into four parts by set id modulo 4.
    Split(SplitArgs),
    /// Train an ensemble of FTRL-Proximal models on logged candidates.
    Train(TrainArgs),
    /// Score every candidate of every set with a trained ensemble.
    Predict(PredictArgs),
    /// IPS estimate of a prediction file against a gold log.
    Evaluate(EvaluateArgs),
    /// Write a synthetic log with a known click model.
    GenSynth(GenSynthArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Parts are written to PREFIX.part0 .. PREFIX.part3.
    #[arg(long, value_name = "PREFIX")]
    pub output_prefix: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Binary)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_HASH_BITS)]
    pub hash_bits: u32,
    #[arg(long, default_value_t = DEFAULT_RAW_DIMENSION)]
    pub raw_dim: u32,
}

impl FeatureArgs {
    pub fn config(&self) -> FeaturizerConfig {
        FeaturizerConfig {
            mode: self.mode.into(),
            hash_bits: self.hash_bits,
            raw_dimension: self.raw_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Binary,
    Hashed,
}

impl From<ModeArg> for FeatureMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Binary => FeatureMode::Binary,
            ModeArg::Hashed => FeatureMode::Hashed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training log; repeat to train on several parts in order.
    #[arg(long, value_name = "FILE", required = true)]
    pub input: Vec<PathBuf>,
    /// Models are written to PREFIX.0 .. PREFIX.{K-1}.
    #[arg(long, value_name = "PREFIX")]
    pub model_prefix: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 75.0)]
    pub l1: f64,
    #[arg(long, default_value_t = 25.0)]
    pub l2: f64,
    /// Number of models; model k is trained with seed SEED + k.
    #[arg(long = "K", default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Examples held for shuffling; 0 keeps file order for a single model.
    #[arg(long, default_value_t = 0)]
    pub shuffle_buffer: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn params(&self) -> FtrlParams {
        FtrlParams {
            alpha: self.alpha,
            beta: self.beta,
            lambda1: self.l1,
            lambda2: self.l2,
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Model file; repeat for an ensemble.
    #[arg(long, value_name = "FILE", conflicts_with = "model_prefix")]
    pub model: Vec<PathBuf>,
    /// Loads PREFIX.0 .. PREFIX.{K-1}.
    #[arg(long, value_name = "PREFIX", required_unless_present = "model")]
    pub model_prefix: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long = "C", default_value_t = 850_100.0)]
    pub c: f64,
    #[arg(long = "M", default_value_t = 15.0)]
    pub m: f64,
    #[arg(long = "K", default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = SpaceArg::Prob)]
    pub score_space: SpaceArg,
}

impl PredictArgs {
    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            scale_c: self.c,
            boost_m: self.m,
            ensemble_k: self.k,
            score_space: self.score_space.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpaceArg {
    Prob,
    Margin,
}

impl From<SpaceArg> for ScoreSpace {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Prob => ScoreSpace::Probability,
            SpaceArg::Margin => ScoreSpace::Margin,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub predictions: PathBuf,
    /// Also write the report as key=value lines.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    pub scale: f64,
    #[arg(long, value_enum, default_value_t = DenominatorArg::All)]
    pub denominator: DenominatorArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DenominatorArg {
    All,
    Clicked,
}

impl From<DenominatorArg> for Denominator {
    fn from(d: DenominatorArg) -> Self {
        match d {
            DenominatorArg::All => Denominator::All,
            DenominatorArg::Clicked => Denominator::Clicked,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub n_sets: u64,
    #[arg(long, default_value_t = 5)]
    pub candidates: usize,
    #[arg(long, default_value_t = 4)]
    pub fields: u32,
    #[arg(long, default_value_t = 8)]
    pub cardinality: u32,
    /// Click-model weights are uniform in [-spread, spread].
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub bias: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = LoggingArg::Uniform)]
    pub logging: LoggingArg,
    /// Temperature of the softmax logging policy.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long)]
    pub gzip: bool,
    /// Scale applied to the printed expected IPS.
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LoggingArg {
    Uniform,
    Softmax,
}
