mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dermpc::agents::AgentError;
use dermpc::compare::compare;
use dermpc::data::{write_series_csv, GenDataSpec};
use dermpc::metrics::compute_metrics;
use dermpc::mpc::{run, Mode};
use dermpc::scenario::{load_scenario, PreparedScenario, ScenarioConfig};
use dermpc::CoreError;

/// Exit status when some optimization was infeasible.
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "dermpc", version, about = "Microgrid model predictive control with decentralized ADMM coordination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario in one mode.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// admm, centralized or prescient; defaults to the scenario's mode.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Simulate a scenario in all three modes and report the cost gaps.
    Compare {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Write synthetic PV, load and price CSVs from a generator spec.
    GenData {
        spec: PathBuf,
        /// Replaces the seed in the generator file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out_dir: PathBuf,
    },
    /// Check a scenario file and the data it refers to.
    Validate {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// ADMM penalty parameter.
    #[arg(long)]
    rho: Option<f64>,
    /// Lookahead length in steps.
    #[arg(long)]
    horizon: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.rho {
            cfg.weights.rho = r;
        }
        if let Some(h) = self.horizon {
            cfg.grid.horizon_steps = h;
        }
    }
}

fn prepare(path: &Path, overrides: &Overrides) -> Result<PreparedScenario> {
    let mut cfg = load_scenario(path)?;
    overrides.apply(&mut cfg);
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(PreparedScenario::prepare(cfg, base)?)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            overrides,
            mode,
            out_dir,
        } => {
            let prepared = prepare(&scenario, &overrides)?;
            let mode = mode.unwrap_or(prepared.config.mode);
            let result = run(&prepared, mode)?;
            let metrics = compute_metrics(&result, &prepared);
            output::write_run(&out_dir, &prepared, &result, &metrics)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Compare {
            scenario,
            overrides,
            out_dir,
        } => {
            let prepared = prepare(&scenario, &overrides)?;
            let (comparison, results) = compare(&prepared)?;
            for (result, metrics) in results.iter().zip(&comparison.rows) {
                output::write_run(&out_dir.join(result.mode.as_str()), &prepared, result, metrics)?;
            }
            output::write_json(&out_dir.join("comparison.json"), &comparison)?;
            print!("{}", comparison.to_table());
        }
        Command::GenData { spec, seed, out_dir } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let mut spec = GenDataSpec::from_toml_str(&text)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let data = spec.generate();
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            for (name, series, column) in [
                ("pv.csv", &data.pv, "kw"),
                ("load.csv", &data.load, "kw"),
                ("price.csv", &data.price, "price"),
            ] {
                let path = out_dir.join(name);
                let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_series_csv(series, column, std::io::BufWriter::new(file))?;
            }
            println!("wrote pv.csv, load.csv and price.csv to {}", out_dir.display());
        }
        Command::Validate { scenario, overrides } => {
            let prepared = prepare(&scenario, &overrides)?;
            let c = &prepared.config;
            println!(
                "{}: ok ({} steps of {} min, horizon {}, {} vehicles, battery {})",
                scenario.display(),
                c.grid.sim_steps,
                c.grid.step_minutes,
                c.grid.horizon_steps,
                prepared.fleet.vehicles.len(),
                if c.bes.enabled { "on" } else { "off" }
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<CoreError>() {
                Some(CoreError::Infeasible(_) | CoreError::Agent(AgentError::Infeasible { .. })) => {
                    ExitCode::from(EXIT_INFEASIBLE)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
