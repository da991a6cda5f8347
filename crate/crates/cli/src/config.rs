//! Run configuration: one TOML file with a section per subcommand.

use std::path::{Path, PathBuf};

use epikernel::data::ParseOptions;
use epikernel::mcmc::{PriorConfig, TuningConfig};
use epikernel::sim::{CompensationTable, CullingPolicy};
use serde::Deserialize;

use crate::CliError;

/// Whole config file. Global keys first, then one optional table per
/// subcommand; unknown keys anywhere are rejected with the offending path.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root RNG seed; required by every stochastic command.
    pub seed: Option<u64>,
    /// Worker threads; 0 or absent means available parallelism.
    pub workers: Option<usize>,
    /// Directory all outputs are written into.
    pub output_dir: Option<PathBuf>,
    /// Farm-file parsing knobs shared by every command that reads farms.
    /// Absent means defaults with day-offset cull dates, matching the files
    /// `simulate` writes.
    pub parse: Option<ParseOptions>,
    pub simulate: Option<SimulateConfig>,
    pub fit: Option<FitConfig>,
    pub summarize: Option<SummarizeConfig>,
    pub predict: Option<PredictConfig>,
    pub validate: ValidateConfig,
}

/// Synthetic-outbreak generation.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Farm layout read from an existing farm file.
    pub farms: Option<PathBuf>,
    /// Farm layout drawn uniformly at random (exactly one of the two).
    pub layout: Option<LayoutConfig>,
    pub rates: RateConfig,
    pub infectious_period: PeriodConfig,
    #[serde(default = "CullingPolicy::none")]
    pub culling: CullingPolicy,
    /// Farm id of the index case; absent means uniform random.
    pub index_case: Option<u64>,
    /// Redraw until at least this many farms get infected.
    #[serde(default)]
    pub min_infected: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

fn default_max_attempts() -> u32 {
    100
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub count: usize,
    /// Square side length, km.
    pub side: f64,
    pub flock_size_min: Option<u64>,
    pub flock_size_max: Option<u64>,
}

impl LayoutConfig {
    pub fn flock_sizes(&self) -> Result<Option<(u64, u64)>, CliError> {
        match (self.flock_size_min, self.flock_size_max) {
            (Some(lo), Some(hi)) => Ok(Some((lo, hi))),
            (None, None) => Ok(None),
            _ => Err(CliError::Usage(
                "simulate.layout: flock_size_min and flock_size_max must be given together".into(),
            )),
        }
    }
}

/// Ground-truth kernel beta(d) = scale * exp(-decay * d).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub scale: f64,
    pub decay: f64,
}

/// Gamma(shape, rate) infectious period.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    pub shape: f64,
    pub rate: f64,
}

/// MCMC fit of an observed farm file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub farms: PathBuf,
    pub grid: GridConfig,
    pub prior: PriorConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default = "default_chains")]
    pub chains: u64,
}

fn default_chains() -> u64 {
    1
}

/// Pseudo-grid: `count` equally spaced knots over [0, max]; absent max
/// means the maximum pairwise distance in the data.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub count: usize,
    pub max: Option<f64>,
}

/// Trace summarization.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarizeConfig {
    pub trace: PathBuf,
    /// Farm file; enables per-farm infection probabilities.
    pub farms: Option<PathBuf>,
    /// Ground-truth sidecar from `simulate`; enables the i-score.
    pub truth: Option<PathBuf>,
    #[serde(default = "default_distances")]
    pub distances: Vec<f64>,
}

fn default_distances() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}

/// Posterior-predictive policy comparison.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub trace: PathBuf,
    pub farms: PathBuf,
    /// Ring radii to compare; a non-positive radius means no pre-emptive
    /// culling at all.
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: u32,
    #[serde(default)]
    pub compensation: CompensationTable,
}

fn default_radii() -> Vec<f64> {
    vec![0.0, 1.0, 2.0]
}

fn default_replicates() -> u32 {
    100
}

/// Self-validation suite sizes and gates.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub likelihood_cases: usize,
    pub delta_cases: usize,
    pub identity_cases: usize,
    pub prior_iterations: u64,
    pub prior_burn_in: u64,
    pub prior_thinning: u64,
    /// Relative tolerance on prior-marginal means.
    pub mean_tolerance: f64,
    /// Minimum effective sample size per prior marginal.
    pub min_effective: f64,
    /// Multiplier on the 1% KS critical value; the default sits near the
    /// 0.1% level so a correct sampler rarely trips the release gate.
    pub ks_scale: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            likelihood_cases: 1000,
            delta_cases: 1000,
            identity_cases: 100,
            prior_iterations: 2_000_000,
            prior_burn_in: 100_000,
            prior_thinning: 20,
            mean_tolerance: 0.05,
            min_effective: 5_000.0,
            ks_scale: 1.2,
        }
    }
}

/// A parsed config plus the raw bytes that produced it (for hashing).
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
}

pub fn load(path: Option<&Path>) -> Result<LoadedConfig, CliError> {
    let Some(path) = path else {
        return Ok(LoadedConfig {
            config: RunConfig::default(),
            raw: Vec::new(),
        });
    };
    let raw = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&raw)
        .map_err(|e| CliError::Usage(format!("config {} is not UTF-8: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    Ok(LoadedConfig { config, raw })
}
