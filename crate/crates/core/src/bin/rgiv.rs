//! Command-line front end: `estimate`, `simulate` and `test`.
//!
//! Exit codes: 0 success, 2 validation error, 3 estimation failure, 4 I/O
//! error. The simulation pool size comes from `RGIV_WORKERS` when set.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rgiv::io::{load_panel, load_spec, render_report, LabeledPanel, ReportFormat};
use rgiv::prelude::*;

#[derive(Parser)]
#[command(name = "rgiv", version, about = "Robust granular instrumental variables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct PanelArgs {
    /// Outcomes CSV: header of unit ids, one row per period.
    #[arg(long)]
    data: PathBuf,
    /// Sizes CSV: `unit,size` rows.
    #[arg(long)]
    sizes: PathBuf,
    /// Rescale sizes to sum to one instead of rejecting them.
    #[arg(long)]
    normalize_sizes: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate spillover coefficients from a panel.
    Estimate {
        #[command(flatten)]
        panel: PanelArgs,
        #[arg(long, default_value = "rgiv", value_parser = parse_method)]
        method: Method,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Shock standard deviations for giv-oracle, in header order.
        #[arg(long, value_delimiter = ',')]
        sigma: Vec<f64>,
        /// Unit index for ols.
        #[arg(long, default_value_t = 0)]
        unit: usize,
    },
    /// Run a Monte Carlo coverage study.
    Simulate {
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        scenario: Option<String>,
        /// TOML scenario file.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        /// Overrides the seed of the scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Specification tests at the RGIV estimate.
    Test {
        #[command(flatten)]
        panel: PanelArgs,
        #[arg(long, value_enum)]
        which: Which,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Records,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    J,
    Homogeneity,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method '{s}'"))
}

#[derive(Serialize)]
struct EstimateOutput {
    method: Method,
    units: Vec<String>,
    phi_hat: Vec<f64>,
    objective_value: Option<f64>,
    converged: bool,
    n_starts_agreeing: usize,
    intervals: Vec<ConfidenceInterval>,
    notes: Vec<String>,
}

fn load(args: &PanelArgs) -> Result<LabeledPanel> {
    load_panel(&args.data, &args.sizes, args.normalize_sizes)
}

fn estimate(args: &PanelArgs, method: Method, level: f64, sigma: &[f64], unit: usize) -> Result<EstimateOutput> {
    let LabeledPanel { units, panel } = load(args)?;
    let config = OptimizerConfig::default();
    let t = panel.periods();
    let mut intervals = Vec::new();
    let result = match method {
        Method::Rgiv => {
            let mut fit = rgiv_estimate(&panel, &config)?;
            attach_avar(&panel, &mut fit)?;
            let avar = fit.avar.as_ref().expect("attached");
            for i in 0..panel.units() {
                intervals.push(coefficient_ci(&fit.phi_hat, avar, i, level, t)?);
            }
            intervals.push(aggregate_ci(&fit.phi_hat, avar, panel.sizes(), level, t, CiTarget::SizeWeighted)?);
            let equal = vec![1.0 / panel.units() as f64; panel.units()];
            intervals.push(aggregate_ci(&fit.phi_hat, avar, &equal, level, t, CiTarget::EqualWeighted)?);
            fit
        }
        Method::RgivRestricted => rgiv_restricted_estimate(&panel, &config)?,
        Method::RgivTwoStep => two_step_estimate(&panel, &rgiv_estimate(&panel, &config)?, &config)?,
        Method::GivEqual | Method::GivOracle | Method::GivFeasible => {
            let weights = match method {
                Method::GivEqual => GivWeights::Equal,
                Method::GivFeasible => GivWeights::Feasible,
                _ => GivWeights::Oracle(ShockVariances::from_std_devs(sigma)?),
            };
            let fit = giv_estimate(&panel, &weights)?;
            intervals.push(scalar_ci(&fit, level)?);
            fit
        }
        Method::Ols => {
            let slope = ols_estimate(&panel, unit)?;
            return Ok(EstimateOutput {
                method,
                units: vec![units.get(unit).cloned().unwrap_or_default()],
                phi_hat: vec![slope],
                objective_value: None,
                converged: true,
                n_starts_agreeing: 0,
                intervals,
                notes: vec!["OLS is inconsistent; diagnostic only".into()],
            });
        }
    };
    Ok(EstimateOutput {
        method,
        units,
        phi_hat: result.phi_hat.0,
        objective_value: Some(result.objective_value),
        converged: result.converged,
        n_starts_agreeing: result.n_starts_agreeing,
        intervals,
        notes: result.notes,
    })
}

fn spec_test(args: &PanelArgs, which: Which) -> Result<TestResult> {
    let panel = load(args)?.panel;
    let config = OptimizerConfig::default();
    let free = rgiv_estimate(&panel, &config)?;
    match which {
        Which::J => j_test(&panel, &free.phi_hat),
        Which::Homogeneity => homogeneity_test(&panel, &free, &rgiv_restricted_estimate(&panel, &config)?),
    }
}

fn simulate(
    scenario: Option<&str>,
    spec_path: Option<&PathBuf>,
    reps: usize,
    seed: Option<u64>,
    level: f64,
    format: Format,
) -> Result<Vec<u8>> {
    let mut spec = match (scenario, spec_path) {
        (_, Some(path)) => load_spec(path)?,
        (Some(name), None) => builtin_scenario(name)?,
        (None, None) => return Err(RgivError::Config("simulate needs --scenario or --spec".into())),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let opts = ScenarioOptions { reps, level, ..Default::default() };
    let report = run_scenario(&spec, &opts)?;
    let format = match format {
        Format::Table => ReportFormat::Table,
        Format::Records => ReportFormat::Records,
    };
    Ok(render_report(&report, format))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| RgivError::Serde(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let (bytes, output) = match &cli.command {
        Command::Estimate { panel, method, level, sigma, unit } => {
            (to_json(&estimate(panel, *method, *level, sigma, *unit)?)?, None)
        }
        Command::Test { panel, which } => (to_json(&spec_test(panel, *which)?)?, None),
        Command::Simulate { scenario, spec, reps, seed, level, format, output } => (
            simulate(scenario.as_deref(), spec.as_ref(), *reps, *seed, *level, *format)?,
            output.clone(),
        ),
    };
    match output {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
