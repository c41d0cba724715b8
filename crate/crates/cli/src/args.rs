use std::path::PathBuf;

use clap::{Args, ValueEnum};
use relprop::{BiasPolicy, LrpConfig, Rule};
use serde::Serialize;

pub const OUT_DIR_ENV: &str = "RELPROP_OUT_DIR";

#[derive(Args, Serialize)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "relprop-out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleName {
    AlphaBeta,
    Epsilon,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasArg {
    Ignore,
    Absorb,
}

impl From<BiasArg> for BiasPolicy {
    fn from(b: BiasArg) -> Self {
        match b {
            BiasArg::Ignore => BiasPolicy::Ignore,
            BiasArg::Absorb => BiasPolicy::Absorb,
        }
    }
}

#[derive(Args, Serialize)]
pub struct RuleArgs {
    #[arg(long, value_enum, default_value_t = RuleName::AlphaBeta)]
    pub rule: RuleName,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub beta: f64,
    #[arg(long, default_value_t = relprop::lrp::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = BiasArg::Absorb)]
    pub bias_policy: BiasArg,
    /// Rescale every layer's relevance to sum to the explained score (default).
    #[arg(long, overrides_with = "no_renormalize")]
    #[serde(skip)]
    pub renormalize: bool,
    #[arg(long, overrides_with = "renormalize")]
    pub no_renormalize: bool,
    /// Which network output to explain.
    #[arg(long, default_value_t = 0)]
    pub output_index: usize,
}

impl RuleArgs {
    pub fn config(&self) -> LrpConfig {
        let rule = match self.rule {
            RuleName::AlphaBeta => Rule::AlphaBeta { alpha: self.alpha, beta: self.beta },
            RuleName::Epsilon => Rule::Epsilon { epsilon: self.epsilon },
        };
        LrpConfig { rule, ..LrpConfig::default() }
            .with_bias_policy(self.bias_policy.into())
            .with_renormalize(!self.no_renormalize)
            .with_output(self.output_index)
    }
}

#[derive(Args, Serialize)]
pub struct MakeToyArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = relprop::toy::TOY_SAMPLES)]
    pub samples: usize,
    /// Image side length; must be divisible by 4.
    #[arg(long, default_value_t = relprop::toy::TOY_SIZE)]
    pub size: usize,
    /// Give the base model non-zero biases.
    #[arg(long)]
    pub bias: bool,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    DenseOnly,
    Full,
}

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Labels CSV (`filename,attribute,raw_score`); defaults to `<data-dir>/labels.csv`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub attribute: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::DenseOnly)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the model's final dense layer instead of reinitializing it.
    #[arg(long)]
    pub keep_head: bool,
    /// Leave every bias at its starting value.
    #[arg(long)]
    pub freeze_biases: bool,
}

#[derive(Args, Serialize)]
pub struct ExplainArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub rule: RuleArgs,
    /// Drift tolerance recorded in the conservation report.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
}

#[derive(Args, Serialize)]
pub struct OccludeArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// JSON list of occlusion specs.
    #[arg(long)]
    pub specs: PathBuf,
    #[command(flatten)]
    pub rule: RuleArgs,
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = BiasArg::Absorb)]
    pub bias_policy: BiasArg,
    /// Number of parameters probed by the finite-difference check.
    #[arg(long, default_value_t = 16)]
    pub probes: usize,
}
