//! Estimates spillover coefficients from CSV files and prints intervals.
//!
//! cargo run --release --example estimate_panel -- [outcomes.csv sizes.csv]
//!
//! Without arguments a disperse-scenario panel is written to the temp
//! directory first and read back.

use std::path::PathBuf;

use rgiv::io::{load_panel, write_panel, LabeledPanel};
use rgiv::prelude::*;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (data, sizes) = match args.as_slice() {
        [d, s] => (PathBuf::from(d), PathBuf::from(s)),
        _ => {
            let dir = std::env::temp_dir().join("rgiv-example");
            std::fs::create_dir_all(&dir)?;
            let panel = generate_panel(&builtin_scenario("disperse")?, 0)?;
            let units = (1..=panel.units()).map(|i| format!("country{i}")).collect();
            let (d, s) = (dir.join("outcomes.csv"), dir.join("sizes.csv"));
            write_panel(&LabeledPanel { units, panel }, &d, &s)?;
            println!("wrote {} and {}", d.display(), s.display());
            (d, s)
        }
    };

    let LabeledPanel { units, panel } = load_panel(&data, &sizes, false)?;
    let mut fit = rgiv_estimate(&panel, &OptimizerConfig::default())?;
    attach_avar(&panel, &mut fit)?;
    let avar = fit.avar.as_ref().unwrap();
    let t = panel.periods();

    println!(
        "T = {t}, n = {}, Q = {:.3e}, {} of {} starts agree",
        panel.units(),
        fit.objective_value,
        fit.n_starts_agreeing,
        fit.starts.len()
    );
    println!("{:<12} {:>7} {:>8} {:>16}", "unit", "size", "phi_hat", "95% interval");
    for (i, unit) in units.iter().enumerate() {
        let ci = coefficient_ci(&fit.phi_hat, avar, i, 0.95, t)?;
        println!("{unit:<12} {:>7.3} {:>8.3}  [{:>6.3}, {:>6.3}]", panel.sizes()[i], ci.point, ci.lo, ci.hi);
    }
    let equal = vec![1.0 / panel.units() as f64; panel.units()];
    for (label, w, target) in [
        ("phi_S", panel.sizes().to_vec(), CiTarget::SizeWeighted),
        ("phi_E", equal, CiTarget::EqualWeighted),
    ] {
        let ci = aggregate_ci(&fit.phi_hat, avar, &w, 0.95, t, target)?;
        println!("{label:<12} {:>7} {:>8.3}  [{:>6.3}, {:>6.3}]", "", ci.point, ci.lo, ci.hi);
    }
    Ok(())
}
