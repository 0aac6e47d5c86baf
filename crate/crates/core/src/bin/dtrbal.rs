use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dtrbal::estimators::evaluate;
use dtrbal::harness::{parse_estimator_list, run_experiment, write_reports, ExperimentConfig, NamedPolicy};
use dtrbal::kernels::KernelFamily;
use dtrbal::simulation::{rollout_value, sample_dataset, DgpConfig, ReferenceLogging, ACTION_LABELS};
use dtrbal::trajectories::{read_csv, write_csv, write_csv_file, CsvOptions};
use dtrbal::{Error, Result};

#[derive(Parser)]
#[command(name = "dtrbal", version, about = "Balanced off-policy evaluation of treatment regimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replication experiment and print the summary table.
    Run(RunArgs),
    /// Sample one dataset from the reference process as CSV.
    Simulate(SimulateArgs),
    /// Evaluate a target policy on a dataset CSV.
    Evaluate(EvaluateArgs),
    /// Monte Carlo value of a target policy on the reference process.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct EstimatorArgs {
    /// Comma-separated estimators: ipw, ipw_T, nipw, nipw_T, balanced, balanced_dr.
    #[arg(long)]
    estimators: Option<String>,
    /// Kernel families for balanced estimators.
    #[arg(long, value_delimiter = ',', default_value = "gaussian,matern52")]
    kernel: Vec<KernelFamily>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    horizon: Vec<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rollouts for the oracle value.
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    target: Option<NamedPolicy>,
    #[command(flatten)]
    estimators: EstimatorArgs,
    /// Directory for replications.csv, summary.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    #[arg(long, default_value_t = 800)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset CSV with actions labelled -1 and 1.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "reference")]
    target: NamedPolicy,
    /// Slope of the logistic logging policy that generated the data.
    #[arg(long, default_value_t = 2.0)]
    logging_slope: f64,
    #[command(flatten)]
    estimators: EstimatorArgs,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    #[arg(long, default_value_t = dtrbal::simulation::DEFAULT_ROLLOUTS)]
    rollouts: usize,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    #[arg(long, default_value = "reference")]
    target: NamedPolicy,
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Oracle(a) => oracle(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if !a.horizon.is_empty() {
        cfg.horizons = a.horizon;
    }
    if let Some(n) = a.n {
        cfg.dgp.n = n;
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = a.rollouts {
        cfg.oracle.n_rollouts = r;
    }
    if let Some(t) = a.target {
        cfg.target = t;
    }
    if let Some(list) = &a.estimators.estimators {
        cfg.estimators = parse_estimator_list(list, &a.estimators.kernel, a.estimators.lambda)?;
    } else if a.config.is_none() {
        cfg.estimators = parse_estimator_list(
            "ipw_T,ipw,nipw_T,nipw,balanced",
            &a.estimators.kernel,
            a.estimators.lambda,
        )?;
    }
    if a.out.is_some() {
        cfg.output = a.out;
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    cfg.validate()?;

    let out = run_experiment(&cfg)?;
    let s = &out.summary;
    let mut stdout = std::io::stdout().lock();
    let w = &mut stdout;
    let io = |e| Error::io("<stdout>", e);
    for o in &s.oracles {
        writeln!(w, "T={}: oracle value {:.4} ± {:.4} ({} rollouts)", o.horizon, o.value, o.standard_error, o.n_rollouts)
            .map_err(io)?;
    }
    write!(w, "{:<16}", "estimator").map_err(io)?;
    for t in &s.horizons {
        write!(w, " | {:>9} {:>9} {:>9} {:>6}", format!("T={t} RMSE"), "Bias", "SD", "degen").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for label in &s.estimators {
        write!(w, "{label:<16}").map_err(io)?;
        for &t in &s.horizons {
            let cell = s.cell(t, label).expect("every cell is summarized");
            match cell.stats {
                Some(st) => write!(w, " | {:>9.3} {:>9.3} {:>9.3} {:>6.3}", st.rmse, st.bias, st.sd, cell.degenerate_fraction),
                None => write!(w, " | {:>9} {:>9} {:>9} {:>6}", "-", "-", "-", "-"),
            }
            .map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    let failures = out.records.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        writeln!(w, "{failures} estimator runs failed; see summary.json").map_err(io)?;
    }
    if let Some(dir) = &cfg.output {
        for path in write_reports(s, &out.records, dir)? {
            writeln!(w, "wrote {}", path.display()).map_err(io)?;
        }
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = DgpConfig::default().with_horizon(a.horizon).with_n(a.n);
    let ds = sample_dataset(&cfg, a.seed)?;
    match a.out {
        Some(path) => write_csv_file(&ds, path),
        None => write_csv(&ds, std::io::stdout().lock()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let opts = CsvOptions {
        action_set: Some(ACTION_LABELS.to_vec()),
        ..CsvOptions::default()
    };
    let ds = read_csv(&a.data, &opts)?;
    let list = a.estimators.estimators.as_deref().unwrap_or("ipw_T,ipw,nipw_T,nipw,balanced");
    let specs = parse_estimator_list(list, &a.estimators.kernel, a.estimators.lambda)?;
    let logging = ReferenceLogging { slope: a.logging_slope };
    let target = a.target.build(a.logging_slope);
    println!("{} trajectories, horizon {}, target {}", ds.len(), ds.horizon(), a.target);
    for spec in &specs {
        match evaluate(spec, &ds, &logging, target.as_ref()) {
            Ok(r) => {
                let steps: Vec<String> = r.per_step_values.iter().map(|v| format!("{v:.4}")).collect();
                let flag = if r.degenerate() { "  (degenerate)" } else { "" };
                println!("{:<16} {:>12.4}   per step [{}]{flag}", spec.label(), r.value, steps.join(", "));
            }
            Err(e) => println!("{:<16} failed: {e}", spec.label()),
        }
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let cfg = DgpConfig::default().with_horizon(a.horizon);
    let target = a.target.build(cfg.logging_slope);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = a.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let v = pool.install(|| rollout_value(&cfg, target.as_ref(), a.rollouts, a.seed))?;
    println!("{:.6} ± {:.6}", v.value, v.standard_error);
    Ok(())
}
