//! Monte Carlo replication of the estimator comparison on the reference
//! process, with RMSE / bias / SD summaries and report files.
//!
//! Replication `r` at horizon `T` samples its dataset with seed
//! `derive_seed(master_seed, [REPLICATION_DOMAIN, T, r])`, so every
//! replication is reproducible on its own and the run does not depend on the
//! number of workers.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::check_feasible;
use crate::error::{Error, Result};
use crate::estimators::{default_estimators, evaluate, EstimatorKind, EstimatorSpec, EvalResult};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::seeding::{derive_seed, REPLICATION_DOMAIN};
use crate::simulation::{rollout_value, sample_dataset, DgpConfig, ReferenceLogging, ReferenceTarget, DEFAULT_ROLLOUTS};
use crate::trajectories::{ConstantPolicy, Policy, UniformPolicy};

/// A target policy that can be named in configuration files and on the
/// command line: `reference`, `logging`, `uniform` or `constant:<label>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NamedPolicy {
    Reference,
    Logging,
    Uniform,
    Constant(i64),
}

impl NamedPolicy {
    /// The policy on the reference process with the given logging slope.
    pub fn build(self, logging_slope: f64) -> Box<dyn Policy> {
        match self {
            Self::Reference => Box::new(ReferenceTarget),
            Self::Logging => Box::new(ReferenceLogging { slope: logging_slope }),
            Self::Uniform => Box::new(UniformPolicy),
            Self::Constant(label) => Box::new(ConstantPolicy(label)),
        }
    }
}

impl FromStr for NamedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Self::Reference),
            "logging" => Ok(Self::Logging),
            "uniform" => Ok(Self::Uniform),
            _ => match s.strip_prefix("constant:").map(str::parse) {
                Some(Ok(label)) => Ok(Self::Constant(label)),
                _ => Err(Error::invalid(format!(
                    "unknown policy `{s}` (expected reference, logging, uniform or constant:<label>)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for NamedPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NamedPolicy> for String {
    fn from(p: NamedPolicy) -> String {
        p.to_string()
    }
}

impl fmt::Display for NamedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Reference => f.write_str("reference"),
            Self::Logging => f.write_str("logging"),
            Self::Uniform => f.write_str("uniform"),
            Self::Constant(label) => write!(f, "constant:{label}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub n_rollouts: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_rollouts: DEFAULT_ROLLOUTS,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Process parameters; `dgp.horizon` is replaced by each entry of
    /// `horizons`.
    pub dgp: DgpConfig,
    pub horizons: Vec<usize>,
    pub replications: usize,
    pub estimators: Vec<EstimatorSpec>,
    pub target: NamedPolicy,
    pub master_seed: u64,
    pub oracle: OracleConfig,
    /// Directory for report files; nothing is written when absent.
    pub output: Option<PathBuf>,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            horizons: vec![3, 5, 7],
            replications: 2000,
            estimators: default_estimators(),
            target: NamedPolicy::Reference,
            master_seed: 20_190_523,
            oracle: OracleConfig::default(),
            output: None,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("at least one estimator is required".into()));
        }
        if self.horizons.is_empty() {
            return Err(Error::Config("at least one horizon is required".into()));
        }
        for &t in &self.horizons {
            self.dgp.clone().with_horizon(t).validate()?;
        }
        if self.oracle.n_rollouts == 0 {
            return Err(Error::Config("oracle.n_rollouts must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let mut labels = Vec::new();
        for spec in &self.estimators {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            let label = spec.label();
            if labels.contains(&label) {
                return Err(Error::Config(format!("duplicate estimator label `{label}`")));
            }
            labels.push(label);
        }
        Ok(())
    }

    pub fn replication_seed(&self, horizon: usize, replication: usize) -> u64 {
        derive_seed(self.master_seed, &[REPLICATION_DOMAIN, horizon as u64, replication as u64])
    }
}

/// Expands a comma-separated list of estimator kinds; each balanced kind is
/// instantiated once per kernel family.
pub fn parse_estimator_list(list: &str, kernels: &[KernelFamily], lambda: f64) -> Result<Vec<EstimatorSpec>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind: EstimatorKind = name.parse()?;
        if kind.is_balanced() {
            if kernels.is_empty() {
                return Err(Error::invalid(format!("estimator `{name}` needs at least one kernel")));
            }
            for &family in kernels {
                out.push(EstimatorSpec {
                    kernel: Some(KernelSpec::dtr(family)),
                    lambda,
                    ..EstimatorSpec::new(kind)
                });
            }
        } else {
            out.push(EstimatorSpec::new(kind));
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("empty estimator list"));
    }
    Ok(out)
}

/// One estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub horizon: usize,
    pub replication: usize,
    pub estimator: String,
    /// Absent when the estimator failed; see `error`.
    pub estimate: Option<f64>,
    pub degenerate: bool,
    /// Kish effective sample size of the final-step weights.
    pub ess: f64,
    pub zero_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub rmse: f64,
    pub bias: f64,
    pub sd: f64,
}

/// RMSE, bias and population SD of `estimates` around `truth`.
pub fn summarize(estimates: &[f64], truth: f64) -> Result<Stats> {
    if estimates.is_empty() {
        return Err(Error::invalid("cannot summarize an empty set of estimates"));
    }
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let var = estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    let mse = estimates.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / m;
    Ok(Stats {
        rmse: mse.sqrt(),
        bias: mean - truth,
        sd: var.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub horizon: usize,
    pub estimator: String,
    /// Absent when every replication failed.
    pub stats: Option<Stats>,
    pub degenerate_fraction: f64,
    pub mean_ess: f64,
    pub mean_zero_fraction: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonOracle {
    pub horizon: usize,
    pub value: f64,
    pub standard_error: f64,
    pub n_rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replications: usize,
    pub master_seed: u64,
    pub horizons: Vec<usize>,
    pub estimators: Vec<String>,
    pub oracles: Vec<HorizonOracle>,
    pub cells: Vec<CellSummary>,
}

impl ReplicationSummary {
    pub fn cell(&self, horizon: usize, estimator: &str) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.horizon == horizon && c.estimator == estimator)
    }

    pub fn oracle(&self, horizon: usize) -> Option<&HorizonOracle> {
        self.oracles.iter().find(|o| o.horizon == horizon)
    }

    /// Rows of the summary table: one per estimator, stats per horizon.
    pub fn table(&self) -> Vec<TableRow> {
        self.estimators
            .iter()
            .map(|e| TableRow {
                estimator: e.clone(),
                cells: self
                    .horizons
                    .iter()
                    .map(|&t| (t, self.cell(t, e).and_then(|c| c.stats)))
                    .collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: ReplicationSummary,
    pub records: Vec<ReplicationRecord>,
}

fn record_of(horizon: usize, replication: usize, label: String, outcome: Result<EvalResult>) -> ReplicationRecord {
    let outcome = outcome.and_then(|res| {
        for (s, d) in res.per_step.iter().enumerate() {
            if let Some(sol) = &d.balance {
                check_feasible(&sol.weights).map_err(|e| {
                    Error::InvalidState(format!("infeasible balancing weights at step {}: {e}", s + 1))
                })?;
            }
        }
        Ok(res)
    });
    match outcome {
        Ok(res) => {
            let last = res.final_step();
            ReplicationRecord {
                horizon,
                replication,
                estimator: label,
                estimate: Some(res.value),
                degenerate: res.degenerate(),
                ess: last.ess,
                zero_fraction: last.zero_fraction,
                error: None,
            }
        }
        Err(e) => ReplicationRecord {
            horizon,
            replication,
            estimator: label,
            estimate: None,
            degenerate: false,
            ess: 0.0,
            zero_fraction: 0.0,
            error: Some(e.to_string()),
        },
    }
}

/// Every estimator on one replication's dataset.
pub fn run_replication(cfg: &ExperimentConfig, horizon: usize, replication: usize) -> Result<Vec<ReplicationRecord>> {
    let dgp = cfg.dgp.clone().with_horizon(horizon);
    let dataset = sample_dataset(&dgp, cfg.replication_seed(horizon, replication))?;
    let logging = ReferenceLogging {
        slope: dgp.logging_slope,
    };
    let target = cfg.target.build(dgp.logging_slope);
    Ok(cfg
        .estimators
        .iter()
        .map(|spec| {
            let outcome = evaluate(spec, &dataset, &logging, target.as_ref());
            record_of(horizon, replication, spec.label(), outcome)
        })
        .collect())
}

/// Runs every replication at every horizon and summarizes against the
/// rollout value of the target. Estimator failures are recorded, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_in_pool(cfg))
}

fn run_in_pool(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut oracles = Vec::with_capacity(cfg.horizons.len());
    for &t in &cfg.horizons {
        let dgp = cfg.dgp.clone().with_horizon(t);
        let target = cfg.target.build(dgp.logging_slope);
        let v = rollout_value(&dgp, target.as_ref(), cfg.oracle.n_rollouts, cfg.oracle.seed)?;
        oracles.push(HorizonOracle {
            horizon: t,
            value: v.value,
            standard_error: v.standard_error,
            n_rollouts: v.n_rollouts,
        });
    }

    let tasks: Vec<(usize, usize)> = cfg
        .horizons
        .iter()
        .flat_map(|&t| (0..cfg.replications).map(move |r| (t, r)))
        .collect();
    let records: Vec<ReplicationRecord> = tasks
        .par_iter()
        .map(|&(t, r)| run_replication(cfg, t, r))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let summary = summarize_records(cfg, &oracles, &records)?;
    Ok(ExperimentOutput { summary, records })
}

fn summarize_records(
    cfg: &ExperimentConfig,
    oracles: &[HorizonOracle],
    records: &[ReplicationRecord],
) -> Result<ReplicationSummary> {
    let estimators: Vec<String> = cfg.estimators.iter().map(EstimatorSpec::label).collect();
    let mut cells = Vec::new();
    for oracle in oracles {
        for label in &estimators {
            let mine: Vec<&ReplicationRecord> = records
                .iter()
                .filter(|r| r.horizon == oracle.horizon && &r.estimator == label)
                .collect();
            let ok: Vec<&ReplicationRecord> = mine.iter().copied().filter(|r| r.estimate.is_some()).collect();
            let estimates: Vec<f64> = ok.iter().filter_map(|r| r.estimate).collect();
            let m = ok.len().max(1) as f64;
            cells.push(CellSummary {
                horizon: oracle.horizon,
                estimator: label.clone(),
                stats: if estimates.is_empty() {
                    None
                } else {
                    Some(summarize(&estimates, oracle.value)?)
                },
                degenerate_fraction: ok.iter().filter(|r| r.degenerate).count() as f64 / m,
                mean_ess: ok.iter().map(|r| r.ess).sum::<f64>() / m,
                mean_zero_fraction: ok.iter().map(|r| r.zero_fraction).sum::<f64>() / m,
                successes: ok.len(),
                failures: mine.len() - ok.len(),
            });
        }
    }
    Ok(ReplicationSummary {
        replications: cfg.replications,
        master_seed: cfg.master_seed,
        horizons: cfg.horizons.clone(),
        estimators,
        oracles: oracles.to_vec(),
        cells,
    })
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub estimator: String,
    pub cells: Vec<(usize, Option<Stats>)>,
}

pub const RECORDS_FILE: &str = "replications.csv";
pub const TABLE_FILE: &str = "summary.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Serialize)]
struct RecordRow<'a> {
    horizon: usize,
    replication: usize,
    estimator: &'a str,
    estimate: Option<f64>,
    degenerate: bool,
    ess: f64,
    zero_fraction: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidState(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_records<W: Write>(records: &[ReplicationRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(RecordRow {
            horizon: r.horizon,
            replication: r.replication,
            estimator: &r.estimator,
            estimate: r.estimate,
            degenerate: r.degenerate,
            ess: r.ess,
            zero_fraction: r.zero_fraction,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Table layout: `estimator,T3_rmse,T3_bias,T3_sd,T5_rmse,…`; empty fields
/// for cells without successful replications.
pub fn write_table<W: Write>(summary: &ReplicationSummary, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["estimator".to_string()];
    for t in &summary.horizons {
        for stat in ["rmse", "bias", "sd"] {
            header.push(format!("T{t}_{stat}"));
        }
    }
    w.write_record(&header)?;
    for row in summary.table() {
        let mut fields = vec![row.estimator];
        for (_, stats) in row.cells {
            match stats {
                Some(s) => fields.extend([s.rmse, s.bias, s.sd].map(|v| v.to_string())),
                None => fields.extend(["", "", ""].map(String::from)),
            }
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_table`].
pub fn parse_table<R: Read>(input: R) -> Result<Vec<TableRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if header.get(0) != Some("estimator") || (header.len() - 1) % 3 != 0 {
        return Err(Error::Parse {
            line: 1,
            message: "expected `estimator` followed by rmse,bias,sd triples".into(),
        });
    }
    let mut horizons = Vec::new();
    for k in 0..(header.len() - 1) / 3 {
        let field = &header[1 + 3 * k];
        let t = field
            .strip_prefix('T')
            .and_then(|s| s.strip_suffix("_rmse"))
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("bad column `{field}`"),
            })?;
        horizons.push(t);
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let num = |j: usize| -> Result<Option<f64>> {
            let s = &rec[j];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::Parse {
                line,
                message: format!("bad number `{s}`"),
            })
        };
        let mut cells = Vec::new();
        for (k, &t) in horizons.iter().enumerate() {
            let stats = match (num(1 + 3 * k)?, num(2 + 3 * k)?, num(3 + 3 * k)?) {
                (Some(rmse), Some(bias), Some(sd)) => Some(Stats { rmse, bias, sd }),
                (None, None, None) => None,
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: format!("partial statistics for T={t}"),
                    })
                }
            };
            cells.push((t, stats));
        }
        rows.push(TableRow {
            estimator: rec[0].to_string(),
            cells,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct Failure<'a> {
    horizon: usize,
    replication: usize,
    estimator: &'a str,
    reason: &'a str,
}

#[derive(Serialize)]
struct SummaryDocument<'a> {
    #[serde(flatten)]
    summary: &'a ReplicationSummary,
    failures: Vec<Failure<'a>>,
}

/// Writes the per-replication CSV, the summary table and the JSON summary
/// into `dir`, creating it if needed. Returns the written paths.
pub fn write_reports(
    summary: &ReplicationSummary,
    records: &[ReplicationRecord],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| -> Result<(PathBuf, fs::File)> {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok((path, file))
    };

    let (records_path, f) = create(RECORDS_FILE)?;
    write_records(records, std::io::BufWriter::new(f)).map_err(|e| csv_error(&records_path, e))?;
    let (table_path, f) = create(TABLE_FILE)?;
    write_table(summary, std::io::BufWriter::new(f)).map_err(|e| csv_error(&table_path, e))?;

    let doc = SummaryDocument {
        summary,
        failures: records
            .iter()
            .filter_map(|r| {
                r.error.as_deref().map(|reason| Failure {
                    horizon: r.horizon,
                    replication: r.replication,
                    estimator: &r.estimator,
                    reason,
                })
            })
            .collect(),
    };
    let (json_path, mut f) = create(SUMMARY_FILE)?;
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::InvalidState(e.to_string()))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(&json_path, e))?;
    Ok(vec![records_path, table_path, json_path])
}
