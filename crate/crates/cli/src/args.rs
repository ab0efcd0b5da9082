//! Command-line flags and the matching TOML config file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cmmd::embeddings::Lambda;
use cmmd::kernels::Bandwidth;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "cmmd", version, about = "Conditional maximum mean discrepancy: estimates and two-sample tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate squared CMMD between two samples.
    Estimate(Opts),
    /// Bootstrap test of equal conditional distributions.
    Test(Opts),
    /// Rejection rates over a scenario grid.
    Experiment(Opts),
    /// Squared CMMD table of the discrete toy model.
    Toy(Opts),
    /// Write a synthetic scenario to two CSV files.
    Generate(Opts),
}

impl Command {
    pub fn opts(&self) -> &Opts {
        match self {
            Command::Estimate(o) | Command::Test(o) | Command::Experiment(o) | Command::Toy(o) | Command::Generate(o) => o,
        }
    }
}

/// Every option is optional so that flags can be layered over a config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Opts {
    /// TOML file with the same keys as the long flags (underscores for dashes).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// CSV with columns x1..xd, y1..yp for the first distribution.
    #[arg(long)]
    pub input_p: Option<PathBuf>,
    /// CSV for the second distribution.
    #[arg(long)]
    pub input_q: Option<PathBuf>,

    /// sine_vs_linear, multidim, beta1, beta2 or dr.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Scenario shift parameter; a comma-separated list for experiments.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
    /// Covariate dimension for multidim; a list for experiments.
    #[arg(long, value_delimiter = ',')]
    pub dim: Option<Vec<usize>>,
    /// Sample size per distribution for generated data (default 100).
    #[arg(long)]
    pub n: Option<usize>,
    /// Draw the second sample from the first sample's conditional.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub null: Option<bool>,
    /// Use the positive-exponent propensity for the dr scenario.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub printed_propensity: Option<bool>,

    /// Smoothing level s >= 0; a list for experiments.
    #[arg(long, value_delimiter = ',')]
    pub level: Option<Vec<f64>>,
    /// naive, joint_mmd or dr.
    #[arg(long)]
    pub estimator: Option<String>,
    /// gaussian[:h|:median], linear, poly:<deg>[:<offset>] or delta.
    #[arg(long)]
    pub kernel_x: Option<String>,
    #[arg(long)]
    pub kernel_y: Option<String>,
    /// Bandwidth for Gaussian kernels given without one: a value or "median".
    #[arg(long)]
    pub bandwidth: Option<Bandwidth>,
    /// Ridge parameter for the first sample: a value or "cv".
    #[arg(long)]
    pub lambda_p: Option<Lambda>,
    #[arg(long)]
    pub lambda_q: Option<Lambda>,
    /// Ridge parameter of the doubly robust regression (default cv).
    #[arg(long)]
    pub lambda_shared: Option<Lambda>,
    /// Covariate mixture weight in [0, 1] (default n / (n + m)).
    #[arg(long)]
    pub alpha_mix: Option<f64>,
    #[arg(long)]
    pub cv_folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub cv_grid: Option<Vec<f64>>,

    /// pooled or propensity.
    #[arg(long)]
    pub algorithm: Option<String>,
    /// A built-in name, constant:<v> or file:<csv with x1..xd,e>.
    #[arg(long)]
    pub propensity: Option<String>,
    /// Propensities outside [delta, 1 - delta] are rejected.
    #[arg(long)]
    pub overlap_delta: Option<f64>,
    #[arg(long)]
    pub significance: Option<f64>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for bootstrap replicates.
    #[arg(long)]
    pub workers: Option<usize>,

    /// Output file (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Second output file, used by `generate` for the Q sample.
    #[arg(long)]
    pub out_q: Option<PathBuf>,
    /// json or csv.
    #[arg(long)]
    pub format: Option<String>,
}

macro_rules! layer {
    ($flags:expr, $file:expr, $($field:ident),* $(,)?) => {
        Opts { config: $flags.config, $($field: $flags.$field.or($file.$field)),* }
    };
}

impl Opts {
    /// Flags win over values read from `--config`.
    pub fn resolve(self) -> Result<Opts, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = read_config(&path)?;
        Ok(layer!(
            self, file, input_p, input_q, scenario, theta, dim, n, null, printed_propensity, level, estimator,
            kernel_x, kernel_y, bandwidth, lambda_p, lambda_q, lambda_shared, alpha_mix, cv_folds, cv_grid,
            algorithm, propensity, overlap_delta, significance, bootstrap, trials, seed, workers, out, out_q,
            format,
        ))
    }
}

fn read_config(path: &Path) -> Result<Opts, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
}
