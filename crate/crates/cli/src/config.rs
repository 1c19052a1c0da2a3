use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lstd_core::datagen::GenerativeConfig;
use lstd_core::losses::LossWeights;
use lstd_core::model::{Mode, ModelConfig};
use lstd_core::optim::AdamConfig;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "lstd", version, about = "Online forecasting with long/short-term disentangled latents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a synthetic series with known latents and interventions.
    Generate(GenerateArgs),
    /// Run the predict/reveal/update protocol and save report, checkpoint and trace.
    TrainOnline(TrainArgs),
    /// Score a checkpoint's latents against a synthetic dataset's ground truth.
    Evaluate(EvaluateArgs),
    /// Train with one loss term switched off.
    Ablate(AblateArgs),
    /// Short-term dependency trace around known interventions.
    Trace(TraceArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0.05)]
    pub theta: f64,
    /// Series length.
    #[arg(long = "T", default_value_t = 20_000)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub n_s: usize,
    #[arg(long, default_value_t = 2)]
    pub n_d: usize,
    #[arg(long, default_value_t = 4)]
    pub obs_dim: usize,
    #[arg(long, default_value_t = GenerativeConfig::default().noise_scale_s)]
    pub noise_scale_s: f64,
    #[arg(long)]
    pub out: PathBuf,
}

impl GenerateArgs {
    pub fn to_config(&self) -> GenerativeConfig {
        let base = GenerativeConfig::with_dims(self.n_s, self.n_d);
        GenerativeConfig {
            theta: self.theta,
            length: self.length,
            seed: self.seed,
            obs_dim: self.obs_dim,
            noise_scale_s: self.noise_scale_s,
            ..base
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    Time,
    Feature,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Time => Mode::Time,
            ModeArg::Feature => Mode::Feature,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Synthetic dataset directory or a benchmark CSV file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub lookback: usize,
    /// Full window length, lookback plus forecast steps.
    #[arg(long, default_value_t = 24)]
    pub horizon: usize,
    #[arg(long, default_value_t = LossWeights::default().alpha)]
    pub alpha: f64,
    #[arg(long, default_value_t = LossWeights::default().beta)]
    pub beta: f64,
    #[arg(long, default_value_t = LossWeights::default().gamma)]
    pub gamma: f64,
    #[arg(long, default_value_t = AdamConfig::default().lr)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Time)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub update_steps: usize,
    /// Defaults to every round the stream supports.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub n_s: usize,
    #[arg(long, default_value_t = 2)]
    pub n_d: usize,
    /// Overrides every hidden width of the model.
    #[arg(long)]
    pub width: Option<usize>,
    /// Feed raw values instead of running standardisation.
    #[arg(long)]
    pub raw: bool,
    /// Also write an SVG of the per-round error.
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Term {
    /// Interrupted-dependency constraint.
    #[value(name = "Ls", alias = "L1")]
    #[serde(rename = "Ls")]
    Ls,
    /// Smooth constraint.
    #[value(name = "Lm", alias = "L2")]
    #[serde(rename = "Lm")]
    Lm,
    #[value(name = "KL")]
    #[serde(rename = "KL")]
    Kl,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub term: Term,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Synthetic dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 250)]
    pub max_windows: usize,
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct TraceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Synthetic dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub max_windows: usize,
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize, Debug, Clone)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(PathBuf),
    Csv(PathBuf),
}

/// Everything a command resolved from its flags, echoed into its report.
#[derive(Serialize, Debug, Clone)]
pub struct RunConfig {
    pub command: &'static str,
    pub data: DataSource,
    pub model: Option<ModelConfig>,
    pub weights: Option<LossWeights>,
    pub optimizer: Option<AdamConfig>,
    pub update_steps: Option<usize>,
    pub rounds: Option<usize>,
    pub normalize: bool,
    pub seed: u64,
    pub ablated_term: Option<Term>,
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn optimizer(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn model(&self, obs_dim: usize) -> ModelConfig {
        let mut c = ModelConfig::new(self.lookback, self.horizon, self.n_s, self.n_d, obs_dim);
        c.mode = self.mode.into();
        c.seed = self.seed;
        if let Some(w) = self.width {
            c.long_width = w;
            c.short_width = w;
            c.transition_width = w;
            c.predictor_width = w;
            c.prior_hidden = vec![w; c.prior_hidden.len()];
        }
        c
    }
}
