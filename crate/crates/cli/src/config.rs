use std::path::{Path, PathBuf};

use pmwpub::accounting::Conversion;
use pmwpub::engine::{Algorithm, MeasurementNoise, OutputMode, Selection};
use pmwpub::ingest::SplitSpec;
use pmwpub::{BudgetSpec, RunConfig};
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Private data, or the source to split when `public` is absent.
    pub path: PathBuf,
    pub schema: PathBuf,
    /// Separate public dataset; disables splitting.
    #[serde(default)]
    pub public: Option<PathBuf>,
    /// Files hold category indices rather than raw values.
    #[serde(default)]
    pub encoded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    pub k: usize,
    pub workloads: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetForm {
    /// Entries of `epsilons` are approximate-DP epsilons at `delta`.
    #[default]
    Epsilon,
    /// Entries of `epsilons` are zCDP scales `epsilon_tilde`.
    EpsilonTilde,
}

fn default_rounds() -> Vec<u32> {
    vec![100]
}

fn default_repeats() -> usize {
    5
}

fn default_true() -> bool {
    true
}

fn default_mixture_iterations() -> usize {
    pmwpub::engine::DEFAULT_MIXTURE_ITERATIONS
}

fn default_domain_cap() -> u64 {
    pmwpub::engine::DEFAULT_DOMAIN_CAP
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment grid: every `T` x epsilon x repeat cell is a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitSpec,
    /// Fraction of the public rows to keep (sampled without replacement).
    #[serde(default)]
    pub public_subsample: Option<f64>,
    pub queries: QueryConfig,
    pub algorithm: Algorithm,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub budget: BudgetForm,
    /// Defaults to `1 / n^2`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub conversion: Conversion,
    #[serde(rename = "T", default = "default_rounds")]
    pub rounds: Vec<u32>,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub measurement: MeasurementNoise,
    #[serde(default)]
    pub output: OutputMode,
    #[serde(default = "default_true")]
    pub replay: bool,
    #[serde(default)]
    pub mixture_probe_epsilon: Option<f64>,
    #[serde(default = "default_mixture_iterations")]
    pub mixture_iterations: usize,
    #[serde(default = "default_domain_cap")]
    pub domain_cap: u64,
    #[serde(default)]
    pub diagnostics: bool,
    #[serde(default)]
    pub synthetic_rows: Option<usize>,
    /// Refuse any run whose total approximate-DP epsilon (engine plus
    /// probe) would exceed this.
    #[serde(default)]
    pub epsilon_cap: Option<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_true")]
    pub write_traces: bool,
}

impl ExperimentConfig {
    /// Reads TOML (`.toml`) or JSON (anything else). Relative data paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.path = resolve(base, &cfg.data.path);
        cfg.data.schema = resolve(base, &cfg.data.schema);
        cfg.data.public = cfg.data.public.as_deref().map(|p| resolve(base, p));
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.epsilons.is_empty() {
            return Err(CliError::Config("epsilons must not be empty".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(CliError::Config(format!("epsilon {e} is not positive")));
        }
        if self.repeats == 0 {
            return Err(CliError::Config("repeats must be at least 1".into()));
        }
        if self.rounds.is_empty() || self.rounds.contains(&0) {
            return Err(CliError::Config("T must be a nonempty list of positive values".into()));
        }
        if let Some(p) = self.public_subsample {
            if !(p > 0.0 && p <= 1.0) {
                return Err(CliError::Config(format!("public_subsample {p} is outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn run_config(&self, rounds: u32, epsilon: f64, seed: u64) -> RunConfig {
        let budget = match self.budget {
            BudgetForm::Epsilon => BudgetSpec::Epsilon(epsilon),
            BudgetForm::EpsilonTilde => BudgetSpec::EpsilonTilde(epsilon),
        };
        RunConfig {
            budget,
            delta: self.delta,
            conversion: self.conversion,
            rounds,
            selection: self.selection,
            measurement: self.measurement,
            output: self.output,
            replay: self.replay,
            mixture_probe_epsilon: self.mixture_probe_epsilon,
            mixture_iterations: self.mixture_iterations,
            domain_cap: self.domain_cap,
            diagnostics: self.diagnostics,
            synthetic_rows: self.synthetic_rows,
            seed,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Seed for one stream of the experiment: word 0 of ChaCha20 stream
/// `stream` under key `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

const SPLIT_STREAM: u64 = 1 << 63;

/// Seed of the data split for one repeat; shared by every `T` and epsilon.
pub fn split_seed(base: u64, repeat: usize) -> u64 {
    derive_seed(base, SPLIT_STREAM | repeat as u64)
}

/// Engine seed for the cell (`T` index, epsilon index, repeat).
pub fn run_seed(base: u64, t_index: usize, eps_index: usize, repeat: usize) -> u64 {
    derive_seed(base, ((t_index as u64) << 42) | ((eps_index as u64) << 21) | repeat as u64)
}
