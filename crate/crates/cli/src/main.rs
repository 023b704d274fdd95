use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdpopa::config::{ScenarioConfig, Scheme};
use pdpopa::harness::{ber_curves, run_scenario, sweep, validate_scenario, RunResult, SweepAxis};
use pdpopa::output::{
    aggregate_csv, allocations_csv, ber_csv, forecasts_csv, metrics_csv, snapshots_csv, sweep_csv, write_file,
};
use pdpopa::predictor::{forecast_quantile, transient_pmf};
use pdpopa::Error;

#[derive(Parser, Debug)]
#[command(name = "pdpopa", version, about = "Predictive power allocation simulator for indoor VCSEL networks")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// baseline | pdp-upa | pdp-opa
    #[arg(long)]
    scheme: Option<String>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Run one scenario.
    Run(Common),
    /// Run one scenario per axis value and scheme.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// mu | tau | snr | class
        #[arg(long)]
        axis: String,
        /// Comma-separated values; defaults to the configured grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Check a scenario file without running it.
    Validate(Common),
    /// Monte-Carlo BER against SNR for 4- and 16-QAM.
    BerCurve(Common),
    /// Run the demand predictor and log its forecasts.
    PredictDemo(Common),
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigInvalid(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(c: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::load(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &c.scheme {
        cfg.scheme = s.parse::<Scheme>()?;
    }
    validate_scenario(&cfg)?;
    if let Some(j) = c.jobs {
        if j == 0 {
            return Err(Failure::Config("--jobs must be >= 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    Ok(cfg)
}

fn summary(r: &RunResult) {
    let a = &r.aggregate;
    println!(
        "scheme={} seed={} cf_db={:.3} sum_rate={:.4e} ee={:.4} loss={:.4} unserved={:.3}",
        r.scheme.name(),
        r.seed,
        a.cf_db,
        a.mean_sum_rate,
        a.mean_ee,
        a.prediction_mae,
        a.mean_unserved
    );
}

fn write_run(out: &Path, cfg: &ScenarioConfig, r: &RunResult) -> Result<(), Failure> {
    write_file(out, "metrics.csv", &metrics_csv(cfg, r))?;
    write_file(out, "aggregate.csv", &aggregate_csv(cfg, std::slice::from_ref(r)))?;
    if cfg.output.snapshots {
        write_file(out, "snapshots.csv", &snapshots_csv(r))?;
    }
    if cfg.output.allocations {
        write_file(out, "allocations.csv", &allocations_csv(r))?;
    }
    if cfg.output.forecasts {
        write_file(out, "forecasts.csv", &forecasts_csv(r))?;
    }
    Ok(())
}

fn execute(verb: Verb) -> Result<(), Failure> {
    match verb {
        Verb::Validate(c) => {
            let cfg = load(&c)?;
            println!("ok: {} APs, {} classes, config_hash={}", cfg.ap_count(), cfg.classes.len(), cfg.hash());
        }
        Verb::Run(c) => {
            let cfg = load(&c)?;
            let r = run_scenario(&cfg)?;
            write_run(&c.out, &cfg, &r)?;
            summary(&r);
        }
        Verb::Sweep { common, axis, values } => {
            let mut cfg = load(&common)?;
            let axis: SweepAxis = axis.parse()?;
            let values = values.unwrap_or_else(|| match axis {
                SweepAxis::Mu => cfg.sweep.mu_grid.clone(),
                SweepAxis::Tau => cfg.sweep.tau_grid.clone(),
                SweepAxis::Snr => cfg.sweep.snr_grid.clone(),
                SweepAxis::Class => (0..cfg.classes.len()).map(|i| i as f64).collect(),
            });
            if values.is_empty() {
                return Err(Failure::Config("--values: at least one value required".into()));
            }
            let schemes: Vec<Scheme> = match common.scheme {
                Some(_) => vec![cfg.scheme],
                None => Scheme::ALL.to_vec(),
            };
            if axis == SweepAxis::Snr {
                cfg.sweep.snr_grid = values;
                let rows = ber_curves(&cfg, &schemes, &[4, 16])?;
                write_file(&common.out, "sweep.csv", &ber_csv(&cfg, &rows))?;
                for r in &rows {
                    println!("scheme={} F={} snr_db={} ber={:.4e}", r.scheme.name(), r.order, r.point.snr_db, r.point.ber);
                }
                return Ok(());
            }
            let seeds: Vec<u64> = (0..cfg.sweep.seeds as u64).map(|i| cfg.seed + i).collect();
            let rows = sweep(&cfg, axis, &values, &schemes, &seeds)?;
            write_file(&common.out, "sweep.csv", &sweep_csv(&cfg, &rows))?;
            for r in &rows {
                let a = &r.aggregate;
                println!(
                    "{}={} scheme={} seed={} cf_db={:.3} sum_rate={:.4e} ee={:.4} loss={:.4}",
                    axis.name(),
                    r.value,
                    r.scheme.name(),
                    r.seed,
                    a.cf_db,
                    a.mean_sum_rate,
                    a.mean_ee,
                    a.prediction_mae
                );
            }
        }
        Verb::BerCurve(c) => {
            let cfg = load(&c)?;
            let schemes: Vec<Scheme> = match c.scheme {
                Some(_) => vec![cfg.scheme],
                None => Scheme::ALL.to_vec(),
            };
            let rows = ber_curves(&cfg, &schemes, &[4, 16])?;
            write_file(&c.out, "ber.csv", &ber_csv(&cfg, &rows))?;
            for r in &rows {
                println!("scheme={} F={} snr_db={} ber={:.4e}", r.scheme.name(), r.order, r.point.snr_db, r.point.ber);
            }
        }
        Verb::PredictDemo(c) => {
            let mut cfg = load(&c)?;
            let pmf = transient_pmf(2, 0.5, 1.0, cfg.predictor.pmf_tail_cutoff)?;
            let n = forecast_quantile(&pmf, 0.05)?;
            println!("example: Binomial(2, 0.5) + Poisson(1), epsilon 0.05 -> N = {n}");
            cfg.output.forecasts = true;
            let r = run_scenario(&cfg)?;
            write_file(&c.out, "forecasts.csv", &forecasts_csv(&r))?;
            println!(
                "epsilon={} tau={} mae={:.4} violation_rate={:.4}",
                cfg.predictor.epsilon, cfg.slot_tau, r.aggregate.prediction_mae, r.aggregate.violation_rate
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
