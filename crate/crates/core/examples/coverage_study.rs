//! Reproduces the coverage tables for the built-in scenarios.
//!
//! cargo run --release --example coverage_study -- [reps] [scenario | spec.toml ...]

use rgiv::io::{load_spec, render_tables};
use rgiv::prelude::*;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let reps: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let mut names: Vec<String> = args.collect();
    if names.is_empty() {
        names = rgiv::simulation::SCENARIOS.iter().map(|s| s.to_string()).collect();
    }
    let opts = ScenarioOptions { reps, ..Default::default() };
    let mut reports = Vec::new();
    for name in &names {
        let spec = if name.ends_with(".toml") {
            load_spec(std::path::Path::new(name))?
        } else {
            builtin_scenario(name)?
        };
        reports.push(run_scenario(&spec, &opts)?);
    }
    print!("{}", render_tables(&reports));
    Ok(())
}
