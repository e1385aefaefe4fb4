use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use faultpf_experiment::{
    evaluate, io, run_filter, run_ground_truth, sweep_alpha, ExperimentError, ScenarioConfig,
    Variant,
};

#[derive(Parser)]
#[command(
    name = "faultpf",
    version,
    about = "Fault-screening particle filter on a CTM freeway"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON; the built-in default scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the ground truth and write truth.csv and measurements.csv.
    Simulate(Common),
    /// Filter a measurement file and write estimates.csv and decisions.csv.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Significance level for screening readings.
        #[arg(long)]
        alpha: f64,
        /// Defaults to OUT/measurements.csv.
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
    /// Score estimates and decisions against the truth; writes metrics.json.
    Evaluate {
        /// Scenario JSON supplying the MAPE floor.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to OUT/truth.csv.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Defaults to OUT/measurements.csv.
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Defaults to OUT/estimates.csv.
        #[arg(long)]
        estimates: Option<PathBuf>,
        /// Defaults to OUT/decisions.csv.
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Filter one simulation at every configured alpha plus both baselines.
    Sweep(Common),
    /// Print the built-in default scenario as JSON.
    DefaultConfig,
}

fn load(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig, ExperimentError> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T, ExperimentError> + Send,
) -> Result<T, ExperimentError> {
    match workers {
        None => f(),
        Some(0) => Err(ExperimentError::Config(vec![
            "--workers must be positive".into()
        ])),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ExperimentError::Config(vec![e.to_string()]))?
            .install(f),
    }
}

fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))
}

fn or_default(path: Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    path.unwrap_or_else(|| out.join(name))
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = load(c.config.as_deref(), c.seed)?;
            create_dir(&c.out)?;
            let gt = with_workers(c.workers, || run_ground_truth(&cfg))?;
            io::write_atomic(&c.out.join("config.json"), cfg.to_json().as_bytes())?;
            io::write_truth(&c.out.join("truth.csv"), &gt.truth_rows())?;
            io::write_measurements(&c.out.join("measurements.csv"), &gt.measurement_rows()?)?;
        }
        Command::Filter {
            common: c,
            alpha,
            measurements,
        } => {
            let mut cfg = load(c.config.as_deref(), c.seed)?;
            cfg.detector.alphas = vec![alpha];
            cfg.validate()?;
            let path = or_default(measurements, &c.out, "measurements.csv");
            let rows = io::read_measurements(&path)?;
            let batches = io::batches_from_rows(&rows, cfg.horizon)?;
            create_dir(&c.out)?;
            let run = with_workers(c.workers, || {
                run_filter(&cfg, &batches, Variant::Screened { alpha })
            })?;
            io::write_estimates(&c.out.join("estimates.csv"), &run.estimates)?;
            io::write_decisions(&c.out.join("decisions.csv"), &run.decisions)?;
            eprintln!(
                "{} readings, {} rejected, {} skipped updates",
                run.decisions.len(),
                run.rejected_count(),
                run.skipped_updates
            );
        }
        Command::Evaluate {
            config,
            out,
            truth,
            measurements,
            estimates,
            decisions,
        } => {
            let cfg = load(config.as_deref(), None)?;
            let truth = io::read_truth(&or_default(truth, &out, "truth.csv"))?;
            let rows = io::read_measurements(&or_default(measurements, &out, "measurements.csv"))?;
            let est = io::read_estimates(&or_default(estimates, &out, "estimates.csv"))?;
            let dec = io::read_decisions(&or_default(decisions, &out, "decisions.csv"))?;
            let eval = evaluate(&truth, &rows, &est, &dec, cfg.mape_floor)?;
            let json = serde_json::json!({
                "schema_version": faultpf_experiment::SCHEMA_VERSION,
                "mape_floor_veh_per_m": cfg.mape_floor,
                "matching_rule": faultpf_experiment::metrics::MATCHING_RULE,
                "density_mape_pct": eval.density_mape_pct,
                "mape_samples": eval.mape_samples,
                "confusion": eval.confusion,
                "labeling_error_pct": eval.confusion.labeling_error_pct(),
            });
            create_dir(&out)?;
            let text = serde_json::to_string_pretty(&json).expect("json");
            io::write_atomic(&out.join("metrics.json"), text.as_bytes())?;
            println!("{text}");
        }
        Command::Sweep(c) => {
            let cfg = load(c.config.as_deref(), c.seed)?;
            let report = with_workers(c.workers, || sweep_alpha(&cfg, Some(&c.out)))?;
            print!("{}", report.text_table());
            for cell in &report.cells {
                eprintln!("{}: {:.1} s", cell.cell.label(), cell.runtime_s);
                if let Err(e) = &cell.outcome {
                    eprintln!("  error: {e}");
                }
            }
            let failed = report.cells.iter().filter(|c| c.outcome.is_err()).count();
            if failed > 0 {
                return Err(ExperimentError::CellsFailed(failed));
            }
        }
        Command::DefaultConfig => println!("{}", ScenarioConfig::default().to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    match run(cli) {
        Ok(()) => {
            eprintln!("done in {:.1} s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
