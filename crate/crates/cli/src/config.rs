//! Command-line flags, the optional TOML config file, and their merge.
//!
//! Every global setting is optional on the command line so that a value can
//! come from, in order of precedence: the flag, the config file, the default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use craeg::simulate::{ModelShape, SimulationConfig};
use craeg::{CraegConfig, LambdaMode, Weighting};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "craeg", version, about = "Embedding-space crowding analysis and crowding-aware reweighting")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingArg {
    Exponential,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaModeArg {
    Adaptive,
    Fixed,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML file with defaults for any of the global options.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, env = "CRAEG_LOG", value_name = "LEVEL")]
    pub log_level: Option<String>,
    /// Directory for CSV/JSON artifacts; nothing is written when unset.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Correction strength in [0, 1].
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Probability threshold of the correction set.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub top_p: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub weighting: Option<WeightingArg>,
    #[arg(long, global = true, value_enum)]
    pub lambda_mode: Option<LambdaModeArg>,
    /// Strength used by `--lambda-mode fixed`.
    #[arg(long, global = true)]
    pub lambda_value: Option<f64>,
    /// Candidates per step for crowding statistics.
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reweight one next-token distribution.
    Reweight(ReweightArgs),
    /// Crowding, entropy and correctness analysis of decoding traces.
    Analyze(AnalyzeArgs),
    /// avg@k, pass@k, distinct-n and semantic diversity of scored generations.
    Metrics(MetricsArgs),
    /// Paired baseline/corrected decoding on a synthetic clustered model.
    Simulate(SimulateArgs),
    /// Answer reweight requests line by line on stdin/stdout.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ReweightArgs {
    /// Embedding table in the binary CRWD format.
    #[arg(long)]
    pub table: PathBuf,
    /// JSON object with `probs` (and optional `token_ids`) or `logits`; `-` reads stdin.
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Trace file, one JSON record per line.
    #[arg(long)]
    pub traces: PathBuf,
    /// Bins of the probability-by-crowding table.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Scored generations, one JSON record per line.
    #[arg(long)]
    pub results: PathBuf,
    /// pass@k values to report.
    #[arg(long = "k", value_delimiter = ',', default_value = "8")]
    pub ks: Vec<usize>,
    /// n-gram order for distinct-n.
    #[arg(long, default_value_t = 4)]
    pub ngram: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub cluster_size: Option<usize>,
    #[arg(long)]
    pub cluster_cosine: Option<f64>,
    #[arg(long)]
    pub diverse_tokens: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// n-gram order for distinct-n.
    #[arg(long)]
    pub ngram: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub table: PathBuf,
}

/// Contents of the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub log_level: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub weighting: Option<WeightingArg>,
    pub lambda_mode: Option<LambdaModeArg>,
    pub lambda_value: Option<f64>,
    pub top_k: Option<usize>,
    pub simulate: Option<SimulateFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub vocab: Option<usize>,
    pub dim: Option<usize>,
    pub cluster_size: Option<usize>,
    pub cluster_cosine: Option<f64>,
    pub diverse_tokens: Option<usize>,
    pub steps: Option<usize>,
    pub trials: Option<usize>,
    pub ngram: Option<usize>,
    pub model: Option<ModelShape>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Global settings after merging flags over the config file over defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub craeg: CraegConfig,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
}

impl RunConfig {
    pub fn resolve(flags: &GlobalArgs, file: &FileConfig) -> CliResult<Self> {
        let defaults = CraegConfig::default();
        let weighting = match flags.weighting.or(file.weighting) {
            Some(WeightingArg::Linear) => Weighting::Linear,
            Some(WeightingArg::Exponential) | None => Weighting::Exponential,
        };
        let lambda_value = flags.lambda_value.or(file.lambda_value);
        let lambda_mode = match flags.lambda_mode.or(file.lambda_mode) {
            Some(LambdaModeArg::Fixed) => LambdaMode::Fixed(lambda_value.ok_or_else(|| {
                CliError::Config("--lambda-mode fixed needs --lambda-value".into())
            })?),
            Some(LambdaModeArg::Adaptive) | None => {
                if lambda_value.is_some() {
                    log::warn!("--lambda-value is ignored unless --lambda-mode fixed");
                }
                LambdaMode::Adaptive
            }
        };
        let craeg = CraegConfig {
            tau: flags.tau.or(file.tau).unwrap_or(defaults.tau),
            epsilon: flags.epsilon.or(file.epsilon).unwrap_or(defaults.epsilon),
            weighting,
            lambda_mode,
            ..defaults
        };
        craeg
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let temperature = flags.temperature.or(file.temperature).unwrap_or(1.0);
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(CliError::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let top_p = flags.top_p.or(file.top_p).unwrap_or(1.0);
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(CliError::Config(format!("top-p must lie in (0, 1], got {top_p}")));
        }
        let top_k = flags.top_k.or(file.top_k).unwrap_or(DEFAULT_TOP_K);
        if top_k == 0 {
            return Err(CliError::Config("top-k must be positive".into()));
        }
        Ok(Self {
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            out_dir: flags.out_dir.clone().or_else(|| file.out_dir.clone()),
            craeg,
            temperature,
            top_p,
            top_k,
        })
    }

    /// Scenario for `simulate`: flags, then the `[simulate]` table, then the library defaults.
    pub fn simulation(&self, flags: &SimulateArgs, file: &FileConfig) -> SimulationConfig {
        let section = file.simulate.as_ref();
        let pick = |flag: Option<usize>, from: fn(&SimulateFile) -> Option<usize>, default: usize| {
            flag.or_else(|| section.and_then(from)).unwrap_or(default)
        };
        let d = SimulationConfig::default();
        SimulationConfig {
            vocab: pick(flags.vocab, |s| s.vocab, d.vocab),
            dim: pick(flags.dim, |s| s.dim, d.dim),
            cluster_size: pick(flags.cluster_size, |s| s.cluster_size, d.cluster_size),
            cluster_cosine: flags
                .cluster_cosine
                .or_else(|| section.and_then(|s| s.cluster_cosine))
                .unwrap_or(d.cluster_cosine),
            diverse_tokens: pick(flags.diverse_tokens, |s| s.diverse_tokens, d.diverse_tokens),
            steps: pick(flags.steps, |s| s.steps, d.steps),
            trials: pick(flags.trials, |s| s.trials, d.trials),
            distinct_n: pick(flags.ngram, |s| s.ngram, d.distinct_n),
            model: section
                .and_then(|s| s.model.clone())
                .unwrap_or(d.model.clone()),
            temperature: self.temperature,
            top_p: self.top_p,
            report_top_k: self.top_k,
            seed: self.seed,
            craeg: self.craeg.clone(),
            ..d
        }
    }
}
