//! Population moment conditions for three units: the true parameter, the
//! second root outside the admissible region, and the asymptotic variance.
//!
//! cargo run --release --example identification

use rgiv::prelude::*;

fn main() -> Result<()> {
    let sizes = [1.0 / 3.0; 3];
    let phi = CoefficientVector::new(vec![0.2, 0.5, 0.35]);
    let sigma2 = ShockVariances::new(vec![1.0, 0.5, 2.0])?;

    let root = spurious_root(&phi, &sizes, &sigma2);
    let show = |v: &CoefficientVector| v.as_slice().iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(", ");
    println!("true phi      [{}]  phi_S {:.3}", show(&phi), phi.size_weighted(&sizes));
    println!("second root   [{}]  phi_S {:.3}", show(&root), root.size_weighted(&sizes));
    for (label, trial) in [("at truth", &phi), ("at second root", &root)] {
        let g = population_moments(&phi, trial, &sizes, &sigma2)?;
        println!("max |E g| {label:<15} {:.1e}", g.max_abs());
    }

    // Slice through phi_1 with the other coefficients at their true values.
    println!("\nphi_1   max |E g|");
    for k in 0..=8 {
        let p = -0.2 + 0.1 * k as f64;
        let trial = CoefficientVector::new(vec![p, 0.5, 0.35]);
        println!("{p:>5.2}   {:.4}", population_moments(&phi, &trial, &sizes, &sigma2)?.max_abs());
    }

    // Equal sizes do not hurt identification; the variance of each
    // coefficient depends on the other units' shocks.
    let s2 = sigma2.as_slice();
    let c1 = sigma2.size_concentration(&sizes);
    let m = 1.0 - phi.size_weighted(&sizes);
    println!("\nasymptotic variances");
    for i in 0..3 {
        let others: f64 = (0..3).filter(|&j| j != i).map(|j| sizes[j] * sizes[j] * s2[j]).product();
        println!("phi_{} {:.3}", i + 1, s2[i] / others * m * m * c1 / 4.0);
    }
    let spec = DgpSpec {
        name: "equal".into(),
        periods: 100_000,
        phi: phi.0.clone(),
        sigma: s2.iter().map(|v| v.sqrt()).collect(),
        size_rule: SizeRule::Explicit { sizes: sizes.to_vec() },
        shock_dist: ShockDist::Gaussian,
        seed: 2,
    };
    let panel = generate_panel(&spec, 0)?;
    let fit = rgiv_estimate(&panel, &OptimizerConfig::default())?;
    let avar = rgiv_avar(&panel, &fit.phi_hat)?;
    let diag: Vec<String> = avar.diagonal().iter().map(|v| format!("{v:.3}")).collect();
    println!("plug-in at T = {}: [{}]", panel.periods(), diag.join(", "));
    println!("GIV with equal sizes: {}", giv_estimate(&panel, &GivWeights::Equal).unwrap_err());
    Ok(())
}
