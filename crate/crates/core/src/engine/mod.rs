//! Iterative query release: public-support reweighting, the full-domain
//! baseline, the best-mixture-error estimator and synthetic sampling.
//!
//! Both algorithms share one loop. Each round scores every query by
//! `|q(A) - q(D)|`, privately selects one, takes a clipped Gaussian
//! measurement of it, and applies multiplicative-weights steps (optionally
//! replaying stale past measurements). Only the starting support differs:
//! the deduplicated public data, or the enumerated full domain.

mod mixture;
mod synth;
mod update;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::accounting::{BudgetLedger, Conversion, PrivacyBudget, ReleaseKind};
use crate::domain::{empirical_distribution, Dataset, Distribution, Record, Schema, Support};
use crate::error::{Error, Result};
use crate::mechanisms::{
    argmax_select, exponential_select, gaussian_measure, permute_and_flip_select, SelectionScores,
};
use crate::queries::{AnswerMatrix, ErrorMetrics, QuerySet, QuerySetSpec};

pub use mixture::{
    best_mixture_error, release_mixture_error, MixtureErrorReport, DEFAULT_MIXTURE_ITERATIONS,
};
pub use synth::synthesize_dataset;
pub use update::{mw_update, replay_pass, Measurement, MeasurementLog, ReplayOutcome};

/// Default cap on the enumerated full domain.
pub const DEFAULT_DOMAIN_CAP: u64 = 10_000_000;

/// Privacy budget in exactly one form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetSpec {
    /// zCDP scale: the run is `epsilon_tilde^2 / 2`-zCDP.
    EpsilonTilde(f64),
    /// Target `(epsilon, delta)`-DP, converted to `epsilon_tilde`.
    Epsilon(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    PermuteAndFlip,
    Exponential,
    /// Non-private exact argmax, for noiseless diagnostics only.
    Argmax,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementNoise {
    #[default]
    Gaussian,
    /// Non-private exact answers, for noiseless diagnostics only.
    Exact,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    #[default]
    LastIterate,
    /// Average of `A_0 .. A_{T-1}`.
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pmwpub,
    Mwem,
}

fn default_true() -> bool {
    true
}

fn default_mixture_iterations() -> usize {
    DEFAULT_MIXTURE_ITERATIONS
}

fn default_domain_cap() -> u64 {
    DEFAULT_DOMAIN_CAP
}

/// Parameters of one engine run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub budget: BudgetSpec,
    /// Defaults to `1 / n^2` for `n` private rows.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub conversion: Conversion,
    #[serde(rename = "T")]
    pub rounds: u32,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub measurement: MeasurementNoise,
    #[serde(default)]
    pub output: OutputMode,
    #[serde(default = "default_true")]
    pub replay: bool,
    /// Pure-DP budget for releasing the support's best mixture error.
    #[serde(default)]
    pub mixture_probe_epsilon: Option<f64>,
    #[serde(default = "default_mixture_iterations")]
    pub mixture_iterations: usize,
    #[serde(default = "default_domain_cap")]
    pub domain_cap: u64,
    /// Record the true max error of every iterate in the trace (non-private).
    #[serde(default)]
    pub diagnostics: bool,
    /// Rows to sample from the final distribution into the report.
    #[serde(default)]
    pub synthetic_rows: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(budget: BudgetSpec, rounds: u32) -> Self {
        Self {
            budget,
            delta: None,
            conversion: Conversion::Tight,
            rounds,
            selection: Selection::PermuteAndFlip,
            measurement: MeasurementNoise::Gaussian,
            output: OutputMode::LastIterate,
            replay: true,
            mixture_probe_epsilon: None,
            mixture_iterations: DEFAULT_MIXTURE_ITERATIONS,
            domain_cap: DEFAULT_DOMAIN_CAP,
            diagnostics: false,
            synthetic_rows: None,
            seed: 0,
        }
    }

    /// Noiseless argmax configuration; carries no privacy guarantee.
    pub fn noiseless(rounds: u32) -> Self {
        Self {
            selection: Selection::Argmax,
            measurement: MeasurementNoise::Exact,
            ..Self::new(BudgetSpec::EpsilonTilde(1.0), rounds)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// True when every primitive in the loop is a private mechanism.
    pub fn is_private(&self) -> bool {
        self.selection != Selection::Argmax && self.measurement == MeasurementNoise::Gaussian
    }

    /// Resolves the budget for `n` private rows.
    pub fn resolve_budget(&self, n: usize) -> Result<PrivacyBudget> {
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("T must be at least 1".into()));
        }
        let delta = self.delta.unwrap_or(1.0 / (n as f64 * n as f64));
        match self.budget {
            BudgetSpec::EpsilonTilde(et) => PrivacyBudget::new(et, self.rounds, delta),
            BudgetSpec::Epsilon(eps) => {
                PrivacyBudget::from_approx_dp(eps, delta, self.rounds, self.conversion)
            }
        }
    }
}

/// One row of the per-iteration trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub query: usize,
    /// `|q(A_{t-1}) - q(D)|` of the selected query. Non-private.
    pub score: f64,
    pub measurement: f64,
    pub replayed: usize,
    /// True max error of `A_{t-1}` when diagnostics are on. Non-private.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nonprivate_max_error: Option<f64>,
}

/// Serializable view of a distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSnapshot {
    pub attributes: Vec<String>,
    pub points: Vec<Record>,
    pub weights: Vec<f64>,
}

impl DistributionSnapshot {
    pub fn of(dist: &Distribution) -> Self {
        Self {
            attributes: dist
                .support()
                .schema()
                .attributes()
                .iter()
                .map(|a| a.name.clone())
                .collect(),
            points: dist.support().points().to_vec(),
            weights: dist.weights(),
        }
    }

    /// Rebuilds a normalized distribution under `schema`.
    pub fn to_distribution(&self, schema: Arc<Schema>) -> Result<Distribution> {
        let names: Vec<&str> = schema.attributes().iter().map(|a| a.name.as_str()).collect();
        if names != self.attributes.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::SchemaMismatch(
                "snapshot attributes differ from the schema".into(),
            ));
        }
        let dataset = Dataset::new(schema, self.points.clone())?;
        let support = Arc::new(Support::from_dataset(&dataset));
        if support.len() != self.points.len() {
            return Err(Error::InvalidParameter("snapshot points repeat".into()));
        }
        Distribution::from_weights(support, &self.weights)
    }
}

/// Everything a run produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: Algorithm,
    /// False when a non-private diagnostic mode was used.
    pub private: bool,
    pub n_private: usize,
    pub support_size: usize,
    pub num_queries: usize,
    pub config: RunConfig,
    pub queries: QuerySetSpec,
    pub ledger: BudgetLedger,
    pub metrics: ErrorMetrics,
    pub trace: Vec<TraceEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mixture_error: Option<MixtureErrorReport>,
    pub distribution: DistributionSnapshot,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub synthetic: Option<Vec<Record>>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reweights the support of `public` to answer `qs` on `private`.
pub fn pmwpub_run(
    private: &Dataset,
    public: &Dataset,
    qs: &QuerySet,
    cfg: &RunConfig,
) -> Result<RunReport> {
    if **public.schema() != **private.schema() {
        return Err(Error::SchemaMismatch(
            "public and private data use different schemas".into(),
        ));
    }
    let start = empirical_distribution(public)?;
    run_loop(Algorithm::Pmwpub, private, start, qs, cfg)
}

/// Full-domain baseline: uniform start over every point of the domain.
/// Fails when the domain exceeds `cfg.domain_cap`.
pub fn mwem_run(private: &Dataset, qs: &QuerySet, cfg: &RunConfig) -> Result<RunReport> {
    let support = Arc::new(Support::full_domain(private.schema().clone(), cfg.domain_cap)?);
    let start = Distribution::uniform(support)?;
    run_loop(Algorithm::Mwem, private, start, qs, cfg)
}

fn run_loop(
    algorithm: Algorithm,
    private: &Dataset,
    mut dist: Distribution,
    qs: &QuerySet,
    cfg: &RunConfig,
) -> Result<RunReport> {
    if **qs.schema() != **private.schema() {
        return Err(Error::SchemaMismatch(
            "query set and private data use different schemas".into(),
        ));
    }
    if qs.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let n = private.len();
    let budget = cfg.resolve_budget(n)?;
    let private_run = cfg.is_private();
    let mut ledger = BudgetLedger::new(budget);
    if let Some(eps) = cfg.mixture_probe_epsilon {
        ledger = ledger.with_probe_capacity(eps);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let support = dist.support().clone();
    let points = support.points();
    let truth = qs.answers_on_dataset(private)?;
    let sensitivity = 1.0 / n as f64;

    let mut matrix = AnswerMatrix::new(support.clone());
    let mut log = MeasurementLog::new();
    let mut trace = Vec::with_capacity(cfg.rounds as usize);
    let mut running_sum = match cfg.output {
        OutputMode::Average => Some(vec![0.0f64; support.len()]),
        OutputMode::LastIterate => None,
    };

    for t in 1..=cfg.rounds as usize {
        let weights = dist.weights();
        if let Some(sum) = running_sum.as_mut() {
            for (s, w) in sum.iter_mut().zip(&weights) {
                *s += w;
            }
        }
        let approx = qs.answers_on_weights(points, &weights);
        let scores: Vec<f64> = approx.iter().zip(&truth).map(|(a, d)| (a - d).abs()).collect();

        let diag_max = cfg
            .diagnostics
            .then(|| scores.iter().copied().fold(0.0, f64::max));

        let chosen = match cfg.selection {
            Selection::Argmax => argmax_select(&scores)?,
            Selection::Exponential => exponential_select(
                &SelectionScores::new(scores.clone(), sensitivity, budget.epsilon0)?,
                &mut rng,
            )?,
            Selection::PermuteAndFlip => permute_and_flip_select(
                &SelectionScores::new(scores.clone(), sensitivity, budget.epsilon0)?,
                &mut rng,
            )?,
        };
        if private_run {
            ledger.charge_round(ReleaseKind::Selection, t)?;
        }
        let a_t = match cfg.measurement {
            MeasurementNoise::Gaussian => gaussian_measure(truth[chosen], n, budget.epsilon0, &mut rng)?,
            MeasurementNoise::Exact => truth[chosen],
        };
        if private_run {
            ledger.charge_round(ReleaseKind::Measurement, t)?;
        }
        let replayed =
            step(cfg, &mut dist, &mut log, qs, &mut matrix, chosen, a_t, &weights, &mut rng)?;
        trace.push(TraceEntry {
            iteration: t,
            query: chosen,
            score: scores[chosen],
            measurement: a_t,
            replayed,
            nonprivate_max_error: diag_max,
        });
    }

    let output = match running_sum {
        Some(sum) => {
            let avg: Vec<f64> = sum.iter().map(|s| s / cfg.rounds as f64).collect();
            Distribution::from_weights(support.clone(), &avg)?
        }
        None => dist,
    };
    let metrics = ErrorMetrics::from_answers(&truth, &qs.answers_on_distribution(&output)?)?;

    let mixture_error = match cfg.mixture_probe_epsilon {
        Some(eps) => {
            let mut report =
                best_mixture_error(private, support.clone(), qs, cfg.mixture_iterations)?;
            release_mixture_error(&mut report, n, eps, &mut ledger, &mut rng)?;
            Some(report)
        }
        None => None,
    };
    let synthetic = match cfg.synthetic_rows {
        Some(rows) => Some(synthesize_dataset(&output, rows, &mut rng)?.into_rows()),
        None => None,
    };

    Ok(RunReport {
        algorithm,
        private: private_run,
        n_private: n,
        support_size: support.len(),
        num_queries: qs.len(),
        config: cfg.clone(),
        queries: qs.spec(),
        ledger,
        metrics,
        trace,
        mixture_error,
        distribution: DistributionSnapshot::of(&output),
        synthetic,
    })
}

/// Logs the measurement and applies the update (plain or replay). Returns
/// the number of multiplicative-weights steps applied.
#[allow(clippy::too_many_arguments)]
fn step(
    cfg: &RunConfig,
    dist: &mut Distribution,
    log: &mut MeasurementLog,
    qs: &QuerySet,
    matrix: &mut AnswerMatrix,
    query: usize,
    measured: f64,
    weights: &[f64],
    rng: &mut ChaCha20Rng,
) -> Result<usize> {
    log.push(query, measured)?;
    if cfg.replay {
        Ok(update::replay_with_cache(dist, log, qs, matrix, rng)?.len())
    } else {
        let current = matrix.answer(qs, query, weights);
        let row = matrix.row(qs, query);
        update::apply_update(dist.log_weights_mut(), row, measured, current)?;
        Ok(1)
    }
}
