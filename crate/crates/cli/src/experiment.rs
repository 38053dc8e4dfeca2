use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pmwpub::accounting::{rho_of, zcdp_to_approx_dp, BudgetLedger};
use pmwpub::engine::{
    best_mixture_error, release_mixture_error, Algorithm, DistributionSnapshot, MixtureErrorReport,
    RunReport, TraceEntry,
};
use pmwpub::ingest::{biased_split, load_csv, load_encoded_csv, subsample_public, write_csv};
use pmwpub::queries::{build_workloads, ErrorMetrics, QuerySet};
use pmwpub::{mwem_run, pmwpub_run, Dataset, RunConfig, Schema, Support};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{run_seed, split_seed, ExperimentConfig};
use crate::error::{CliError, CliResult};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("PMWPUB_GIT_DESCRIBE"), ")");

pub fn version() -> String {
    VERSION.to_string()
}

/// Position of one run in the experiment grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(rename = "T")]
    pub rounds: u32,
    pub t_index: usize,
    pub epsilon: f64,
    pub epsilon_index: usize,
    pub repeat: usize,
    pub seed: u64,
    pub split_seed: u64,
}

/// Wall-clock fields; excluded from determinism comparisons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u64,
    pub elapsed_seconds: f64,
}

/// Everything written for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub version: String,
    pub config: ExperimentConfig,
    pub schema: Schema,
    pub cell: Cell,
    pub n_public: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub base_rate: Option<f64>,
    pub timing: Timing,
    pub report: RunReport,
}

struct Inputs {
    schema: Arc<Schema>,
    /// Private data, or the split source.
    primary: Dataset,
    public: Option<Dataset>,
    qs: QuerySet,
}

struct Prepared {
    private: Dataset,
    public: Dataset,
    base_rate: Option<f64>,
    split_seed: u64,
}

fn load_dataset(path: &Path, schema: &Arc<Schema>, encoded: bool) -> CliResult<Dataset> {
    let loaded = if encoded {
        load_encoded_csv(path, schema.clone())
    } else {
        load_csv(path, schema.clone())
    };
    loaded.map_err(|e| CliError::data(path.display(), e))
}

fn load_inputs(cfg: &ExperimentConfig) -> CliResult<Inputs> {
    let schema = Schema::from_json_file(&cfg.data.schema)
        .map_err(|e| CliError::data(cfg.data.schema.display(), e))?;
    let schema = Arc::new(schema);
    let primary = load_dataset(&cfg.data.path, &schema, cfg.data.encoded)?;
    let public = match &cfg.data.public {
        Some(p) => Some(load_dataset(p, &schema, cfg.data.encoded)?),
        None => None,
    };
    let ws = build_workloads(&schema, cfg.queries.k, cfg.queries.workloads, cfg.queries.seed)?;
    let qs = QuerySet::new(schema.clone(), ws)?;
    Ok(Inputs {
        schema,
        primary,
        public,
        qs,
    })
}

fn prepare(cfg: &ExperimentConfig, inputs: &Inputs, repeat: usize) -> CliResult<Prepared> {
    let seed = split_seed(cfg.seed, repeat);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (private, public, base_rate) = match &inputs.public {
        Some(public) => (inputs.primary.clone(), public.clone(), None),
        None => {
            let split = biased_split(&inputs.primary, &cfg.split, &mut rng)?;
            (split.private, split.public, split.base_rate)
        }
    };
    let public = match cfg.public_subsample {
        Some(p) => subsample_public(&public, p, &mut rng)?,
        None => public,
    };
    Ok(Prepared {
        private,
        public,
        base_rate,
        split_seed: seed,
    })
}

/// Fails with a budget error when the planned spend of `rc` (with
/// `include_engine` false, only its probe) exceeds `cfg.epsilon_cap`.
fn check_epsilon_cap(cfg: &ExperimentConfig, rc: &RunConfig, n: usize, include_engine: bool) -> CliResult<()> {
    let Some(cap) = cfg.epsilon_cap else {
        return Ok(());
    };
    let budget = rc.resolve_budget(n)?;
    let engine = if include_engine { budget.rho() } else { 0.0 };
    let rho = engine + rc.mixture_probe_epsilon.map_or(0.0, rho_of);
    let planned = zcdp_to_approx_dp((2.0 * rho).sqrt(), budget.delta)?;
    if planned > cap * (1.0 + 1e-12) {
        return Err(CliError::Budget(format!(
            "planned epsilon {planned} at delta {} exceeds epsilon_cap {cap}",
            budget.delta
        )));
    }
    Ok(())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(path.display(), e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::data(path.display(), e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::data(path.display(), e))
}

pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::data(path.display(), e))?;
    let header = ["iteration", "query", "score", "measurement", "replayed", "nonprivate_max_error"];
    w.write_record(header).map_err(|e| CliError::data(path.display(), e))?;
    for e in trace {
        let diag = e.nonprivate_max_error.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            e.iteration.to_string(),
            e.query.to_string(),
            e.score.to_string(),
            e.measurement.to_string(),
            e.replayed.to_string(),
            diag,
        ])
        .map_err(|e| CliError::data(path.display(), e))?;
    }
    w.flush().map_err(|e| CliError::data(path.display(), e))
}

fn run_file_stem(cell: &Cell) -> String {
    format!("T{}_eps{}_rep{}", cell.rounds, cell.epsilon_index, cell.repeat)
}

/// Summary of `pmwpub run`.
pub struct RunSummary {
    pub run_files: Vec<PathBuf>,
    pub aggregates: Vec<PathBuf>,
}

/// Runs every cell of the grid, writing `runs/*.json`, optional
/// `traces/*.csv` and the aggregate CSVs under `cfg.out_dir`.
pub fn cmd_run(cfg: &ExperimentConfig, jobs: usize) -> CliResult<RunSummary> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let prepared = (0..cfg.repeats)
        .map(|r| prepare(cfg, &inputs, r))
        .collect::<CliResult<Vec<_>>>()?;

    let runs_dir = cfg.out_dir.join("runs");
    create_dir(&runs_dir)?;
    let traces_dir = cfg.out_dir.join("traces");
    if cfg.write_traces {
        create_dir(&traces_dir)?;
    }

    let mut cells = Vec::new();
    for (ti, &rounds) in cfg.rounds.iter().enumerate() {
        for (ei, &epsilon) in cfg.epsilons.iter().enumerate() {
            for (r, prep) in prepared.iter().enumerate() {
                cells.push(Cell {
                    rounds,
                    t_index: ti,
                    epsilon,
                    epsilon_index: ei,
                    repeat: r,
                    seed: run_seed(cfg.seed, ti, ei, r),
                    split_seed: prep.split_seed,
                });
            }
        }
    }

    for cell in &cells {
        let rc = cfg.run_config(cell.rounds, cell.epsilon, cell.seed);
        check_epsilon_cap(cfg, &rc, prepared[cell.repeat].private.len(), true)?;
    }

    let run_cell = |cell: &Cell| -> CliResult<PathBuf> {
        let prep = &prepared[cell.repeat];
        let rc = cfg.run_config(cell.rounds, cell.epsilon, cell.seed);
        let started_unix_ms = now_ms();
        let clock = Instant::now();
        let report = match cfg.algorithm {
            Algorithm::Pmwpub => pmwpub_run(&prep.private, &prep.public, &inputs.qs, &rc)?,
            Algorithm::Mwem => mwem_run(&prep.private, &inputs.qs, &rc)?,
        };
        let artifact = RunArtifact {
            version: version(),
            config: cfg.clone(),
            schema: (*inputs.schema).clone(),
            cell: cell.clone(),
            n_public: prep.public.len(),
            base_rate: prep.base_rate,
            timing: Timing {
                started_unix_ms,
                elapsed_seconds: clock.elapsed().as_secs_f64(),
            },
            report,
        };
        let stem = run_file_stem(cell);
        if cfg.write_traces {
            write_trace(&traces_dir.join(format!("{stem}.csv")), &artifact.report.trace)?;
        }
        let path = runs_dir.join(format!("{stem}.json"));
        write_json(&path, &artifact)?;
        Ok(path)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let run_files = pool.install(|| cells.par_iter().map(run_cell).collect::<CliResult<Vec<_>>>())?;
    let aggregates = cmd_aggregate(&cfg.out_dir)?;
    Ok(RunSummary {
        run_files,
        aggregates,
    })
}

#[derive(Deserialize)]
struct ReportMetrics {
    metrics: ErrorMetrics,
}

#[derive(Deserialize)]
struct ArtifactMetrics {
    cell: Cell,
    report: ReportMetrics,
}

/// One row of an aggregate CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub epsilon: f64,
    pub metric: String,
    pub mean: f64,
    pub std_error: f64,
}

/// Mean and standard error (sample standard deviation over `sqrt(count)`).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Rebuilds the aggregate CSVs from `out_dir/runs/*.json` alone. Writes
/// `aggregate.csv` for a single `T`, or `aggregate_T<T>.csv` per value.
pub fn cmd_aggregate(out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let runs_dir = out_dir.join("runs");
    let mut files: Vec<PathBuf> = fs::read_dir(&runs_dir)
        .map_err(|e| CliError::data(runs_dir.display(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no run files in {}", runs_dir.display())));
    }

    // T -> epsilon index -> (epsilon, per-run metrics)
    let mut groups: BTreeMap<u32, BTreeMap<usize, (f64, Vec<ErrorMetrics>)>> = BTreeMap::new();
    for path in &files {
        let text = fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))?;
        let a: ArtifactMetrics =
            serde_json::from_str(&text).map_err(|e| CliError::data(path.display(), e))?;
        groups
            .entry(a.cell.rounds)
            .or_default()
            .entry(a.cell.epsilon_index)
            .or_insert_with(|| (a.cell.epsilon, Vec::new()))
            .1
            .push(a.report.metrics);
    }

    let single = groups.len() == 1;
    let mut written = Vec::new();
    for (rounds, by_eps) in &groups {
        let name = if single {
            "aggregate.csv".to_string()
        } else {
            format!("aggregate_T{rounds}.csv")
        };
        let path = out_dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::data(path.display(), e))?;
        for (epsilon, metrics) in by_eps.values() {
            let columns: [(&str, fn(&ErrorMetrics) -> f64); 3] =
                [("max", |m| m.max), ("mean", |m| m.mean), ("mse", |m| m.mse)];
            for (metric, get) in columns {
                let values: Vec<f64> = metrics.iter().map(get).collect();
                let (mean, std_error) = mean_and_std_error(&values);
                w.serialize(AggregateRow {
                    epsilon: *epsilon,
                    metric: metric.into(),
                    mean,
                    std_error,
                })
                .map_err(|e| CliError::data(path.display(), e))?;
            }
        }
        w.flush().map_err(|e| CliError::data(path.display(), e))?;
        written.push(path);
    }
    Ok(written)
}

/// Output of `pmwpub mixture-error`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureOutput {
    pub version: String,
    pub config: ExperimentConfig,
    pub n_private: usize,
    pub support_size: usize,
    pub report: MixtureErrorReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ledger: Option<BudgetLedger>,
}

/// Best mixture error of the public support for repeat 0's data, with an
/// optional private release at `epsilon_probe`.
pub fn cmd_mixture_error(
    cfg: &ExperimentConfig,
    epsilon_probe: Option<f64>,
    iterations: Option<usize>,
) -> CliResult<MixtureOutput> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let prep = prepare(cfg, &inputs, 0)?;
    let support = Arc::new(Support::from_dataset(&prep.public));
    let iterations = iterations.unwrap_or(cfg.mixture_iterations);
    let mut report = best_mixture_error(&prep.private, support.clone(), &inputs.qs, iterations)?;
    let ledger = match epsilon_probe.or(cfg.mixture_probe_epsilon) {
        Some(eps) => {
            let mut rc = cfg.run_config(cfg.rounds[0], cfg.epsilons[0], run_seed(cfg.seed, 0, 0, 0));
            rc.mixture_probe_epsilon = Some(eps);
            check_epsilon_cap(cfg, &rc, prep.private.len(), false)?;
            let budget = rc.resolve_budget(prep.private.len())?;
            let mut ledger = BudgetLedger::new(budget).with_probe_capacity(eps);
            let mut rng = ChaCha20Rng::seed_from_u64(rc.seed);
            release_mixture_error(&mut report, prep.private.len(), eps, &mut ledger, &mut rng)?;
            Some(ledger)
        }
        None => None,
    };
    Ok(MixtureOutput {
        version: version(),
        config: cfg.clone(),
        n_private: prep.private.len(),
        support_size: support.len(),
        report,
        ledger,
    })
}

/// Samples `rows` records from the distribution in a run artifact (or a bare
/// run report, which then needs `schema`) and writes them as an index CSV.
pub fn cmd_synthesize(
    report_path: &Path,
    schema_path: Option<&Path>,
    rows: usize,
    out: &Path,
    seed: u64,
) -> CliResult<usize> {
    let text = fs::read_to_string(report_path).map_err(|e| CliError::data(report_path.display(), e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::data(report_path.display(), e))?;
    let (report, embedded_schema) = match value.get("report") {
        Some(r) => (r, value.get("schema")),
        None => (&value, None),
    };
    let schema: Schema = match (schema_path, embedded_schema) {
        (Some(p), _) => Schema::from_json_file(p).map_err(|e| CliError::data(p.display(), e))?,
        (None, Some(s)) => serde_json::from_value(s.clone())
            .map_err(|e| CliError::data(report_path.display(), e))?,
        (None, None) => {
            return Err(CliError::Config(
                "a bare run report needs --schema".into(),
            ))
        }
    };
    let snapshot = report
        .get("distribution")
        .ok_or_else(|| CliError::Data(format!("{} has no distribution", report_path.display())))?;
    let snapshot: DistributionSnapshot = serde_json::from_value(snapshot.clone())
        .map_err(|e| CliError::data(report_path.display(), e))?;
    let dist = snapshot.to_distribution(Arc::new(schema))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = pmwpub::engine::synthesize_dataset(&dist, rows, &mut rng)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_csv(&data, out).map_err(|e| CliError::data(out.display(), e))?;
    Ok(data.len())
}
