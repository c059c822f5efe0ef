//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Monte Carlo criteria run 500 replications per
//! scenario at the default seed.

use std::process::ExitCode;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgiv::io::render_records;
use rgiv::prelude::*;

const REPS: usize = 500;
const DEGENERATE_REPS: usize = 200;

#[derive(Default)]
struct Ledger {
    failed: usize,
    total: usize,
}

impl Ledger {
    fn check(&mut self, label: &str, ok: bool, detail: String) {
        self.total += 1;
        if !ok {
            self.failed += 1;
        }
        println!("{} {label}: {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn band(&mut self, label: &str, value: f64, target: f64, tol: f64) {
        let ok = (value - target).abs() <= tol;
        self.check(label, ok, format!("{value:.4} (target {target} +/- {tol})"));
    }

    fn relative(&mut self, label: &str, value: f64, target: f64, frac: f64) {
        let ok = (value - target).abs() <= frac * target;
        self.check(
            label,
            ok,
            format!("{value:.4} (target {target} +/- {:.0}%)", frac * 100.0),
        );
    }

    fn at_most(&mut self, label: &str, value: f64, cap: f64) {
        self.check(label, value <= cap, format!("{value:.4} (at most {cap})"));
    }
}

fn scenario(name: &str) -> ScenarioReport {
    let spec = builtin_scenario(name).expect("builtin scenario");
    let opts = ScenarioOptions { reps: REPS, ..Default::default() };
    run_scenario(&spec, &opts).expect("scenario run")
}

fn coverage_and_tests(ledger: &mut Ledger, reports: &[ScenarioReport]) {
    let get = |name: &str| reports.iter().find(|r| r.spec.name == name).unwrap();
    let base = &get("baseline").summary;
    let phi_s = base.rgiv_phi_s.as_ref().unwrap();
    let phi_e = base.rgiv_phi_e.as_ref().unwrap();
    ledger.band("1 baseline RGIV phi_S coverage", phi_s.rate, 0.96, 0.03);
    ledger.relative("1 baseline RGIV phi_S median length", phi_s.median_length, 0.074, 0.15);
    ledger.band("1 baseline RGIV phi_E coverage", phi_e.rate, 0.94, 0.03);
    ledger.relative("1 baseline RGIV phi_E median length", phi_e.median_length, 0.035, 0.15);

    let oracle = base.giv_oracle.as_ref().unwrap();
    ledger.band("2 baseline oracle GIV coverage", oracle.rate, 0.95, 0.03);
    ledger.relative("2 baseline oracle GIV median length", oracle.median_length, 0.061, 0.15);
    ledger.band("2 baseline feasible GIV coverage", base.giv_feasible.as_ref().unwrap().rate, 0.12, 0.05);

    let disperse = &get("disperse").summary;
    ledger.at_most("3 disperse feasible GIV coverage", disperse.giv_feasible.as_ref().unwrap().rate, 0.07);
    ledger.band("3 disperse oracle GIV coverage", disperse.giv_oracle.as_ref().unwrap().rate, 0.68, 0.07);

    ledger.band("4 baseline J rejection", base.j_test.as_ref().unwrap().rate, 0.082, 0.03);
    ledger.band("4 baseline homogeneity rejection", base.homogeneity.as_ref().unwrap().rate, 0.049, 0.03);
    let outlier = &get("coef_outlier").summary;
    ledger.band("4 coef_outlier homogeneity power", outlier.homogeneity.as_ref().unwrap().rate, 0.911, 0.04);
    ledger.band("4 disperse homogeneity power", disperse.homogeneity.as_ref().unwrap().rate, 0.850, 0.05);

    for report in reports {
        let rates: Vec<f64> = report.summary.coefficients.iter().map(|c| c.rate).collect();
        let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ledger.check(
            &format!("5 {} per-coefficient coverage", report.spec.name),
            rates.len() == 11 && lo >= 0.91 && hi <= 0.98,
            format!("min {lo:.3} max {hi:.3} over {} coefficients (band [0.91, 0.98])", rates.len()),
        );
    }
    let var_len = get("var_outlier").summary.coefficients[0].median_length;
    ledger.relative("5 var_outlier phi_1 median length", var_len, 0.99, 0.20);
    ledger.relative("5 baseline phi_1 median length", base.coefficients[0].median_length, 0.32, 0.15);
}

/// Mean moments of a panel evaluated directly from the residual definition.
fn mean_moments(panel: &PanelData, phi: &[f64]) -> Vec<f64> {
    let n = panel.units();
    let t = panel.periods();
    let agg = panel.size_weighted_outcome();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (ri, rj) = (panel.unit(i), panel.unit(j));
            let s: f64 = (0..t).map(|k| (ri[k] - phi[i] * agg[k]) * (rj[k] - phi[j] * agg[k])).sum();
            out.push(s / t as f64);
        }
    }
    out
}

fn jacobian_property(ledger: &mut Ledger) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for k in 0..100 {
        let n = rng.gen_range(3..=7);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let sizes: Vec<f64> = raw.iter().map(|s| s / total).collect();
        let phi_true: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.8)).collect();
        let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let spec = DgpSpec {
            name: "jacobian".into(),
            periods: 200,
            phi: phi_true,
            sigma,
            size_rule: SizeRule::Explicit { sizes },
            shock_dist: ShockDist::Gaussian,
            seed: k,
        };
        let panel = generate_panel(&spec, 0).unwrap();
        let at: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let jac = analytic_jacobian(&panel, &CoefficientVector::new(at.clone())).unwrap();
        let m = jac.nrows();
        let mut fd = DMatrix::zeros(m, n);
        for c in 0..n {
            let mut up = at.clone();
            let mut down = at.clone();
            up[c] += h;
            down[c] -= h;
            let (gu, gd) = (mean_moments(&panel, &up), mean_moments(&panel, &down));
            for r in 0..m {
                fd[(r, c)] = (gu[r] - gd[r]) / (2.0 * h);
            }
        }
        worst = worst.max((&jac - &fd).norm() / jac.norm());
    }
    ledger.check(
        "6a analytic Jacobian vs central differences",
        worst < 1e-6,
        format!("worst relative error {worst:.2e} over 100 instances (below 1e-6)"),
    );
}

fn population_root_property(ledger: &mut Ledger) {
    let sizes = [0.5, 0.3, 0.2];
    let phi0 = CoefficientVector::new(vec![0.3, 0.4, 0.2]);
    let sigma2 = ShockVariances::new(vec![1.0, 2.25, 0.64]).unwrap();
    let spurious = spurious_root(&phi0, &sizes, &sigma2);
    let at_true = population_moments(&phi0, &phi0, &sizes, &sigma2).unwrap().max_abs();
    let at_spurious = population_moments(&phi0, &spurious, &sizes, &sigma2).unwrap().max_abs();
    let spurious_s = spurious.size_weighted(&sizes);
    ledger.check(
        "6b population moments vanish at phi_0 and the spurious root",
        at_true == 0.0 && at_spurious < 1e-12 && (spurious_s - (2.0 - phi0.size_weighted(&sizes))).abs() < 1e-12,
        format!("|g(phi_0)| {at_true:.1e}, |g(spurious)| {at_spurious:.1e}, spurious phi_S {spurious_s:.6}"),
    );

    // Dense grid: every near-root must sit next to one of the two roots.
    let (eps, radius, step) = (1e-3, 0.05, 0.02);
    let grid: Vec<f64> = (0..=200).map(|k| -1.0 + step * k as f64).collect();
    let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let mut stray = 0usize;
    let mut near = 0usize;
    for &a in &grid {
        for &b in &grid {
            for &c in &grid {
                let trial = CoefficientVector::new(vec![a, b, c]);
                let g = population_moments(&phi0, &trial, &sizes, &sigma2).unwrap().max_abs();
                if g <= eps {
                    near += 1;
                    let p = trial.as_slice();
                    if dist(p, phi0.as_slice()) > radius && dist(p, spurious.as_slice()) > radius {
                        stray += 1;
                    }
                }
            }
        }
    }
    ledger.check(
        "6b no other population root on the n=3 grid",
        stray == 0 && near > 0,
        format!("{near} grid points with max|g| <= {eps}, {stray} farther than {radius} from both roots"),
    );
}

fn avar_closed_form_property(ledger: &mut Ledger) {
    let sizes = vec![0.5, 0.3, 0.2];
    let phi = vec![0.3, 0.4, 0.2];
    let sigma = vec![1.0, 1.5, 0.8];
    let spec = DgpSpec {
        name: "avar".into(),
        periods: 1_000_000,
        phi: phi.clone(),
        sigma: sigma.clone(),
        size_rule: SizeRule::Explicit { sizes: sizes.clone() },
        shock_dist: ShockDist::Gaussian,
        seed: 3,
    };
    let panel = generate_panel(&spec, 0).unwrap();
    let fit = rgiv_estimate(&panel, &OptimizerConfig::default()).unwrap();
    let avar = rgiv_avar(&panel, &fit.phi_hat).unwrap();
    let phi_s: f64 = phi.iter().zip(&sizes).map(|(p, s)| p * s).sum();
    let c1: f64 = (0..3).map(|j| sizes[j].powi(2) * sigma[j].powi(2)).sum();
    let mut worst = 0.0_f64;
    for i in 0..3 {
        let others: f64 = (0..3).filter(|&j| j != i).map(|j| sizes[j].powi(2) * sigma[j].powi(2)).product();
        let closed = sigma[i].powi(2) / others * (1.0 - phi_s).powi(2) * c1 / 4.0;
        worst = worst.max((avar[(i, i)] / closed - 1.0).abs());
    }
    ledger.check(
        "6c n=3 closed-form Avar vs plug-in at T=1e6",
        worst < 0.02,
        format!("worst relative gap {worst:.4} (below 0.02)"),
    );
}

fn proposition_one_property(ledger: &mut Ledger) {
    let sizes = vec![0.2, 0.3, 0.5];
    let phi = vec![0.6, 0.3, 0.3];
    let closed = giv_estimand_closed_form(&CoefficientVector::new(phi.clone()), &sizes).unwrap();
    ledger.check(
        "6d equal-weight GIV estimand closed form",
        (closed + 2.0 / 11.0).abs() < 1e-12,
        format!("{closed:.12} (exact -2/11 = -0.181818...)"),
    );
    let spec = DgpSpec {
        name: "prop1".into(),
        periods: 1_000_000,
        phi,
        sigma: vec![1.0; 3],
        size_rule: SizeRule::Explicit { sizes },
        shock_dist: ShockDist::Gaussian,
        seed: 4,
    };
    let panel = generate_panel(&spec, 0).unwrap();
    let est = giv_estimate(&panel, &GivWeights::Equal).unwrap().phi_hat.as_slice()[0];
    ledger.check(
        "6d simulated equal-weight GIV at T=1e6",
        (est - closed).abs() < 0.01,
        format!("{est:.5} vs {closed:.5} (within 0.01)"),
    );
}

fn invariance_properties(ledger: &mut Ledger) {
    let spec = builtin_scenario("disperse").unwrap();
    let panel = generate_panel(&spec, 7).unwrap();
    let config = OptimizerConfig::default();
    let fit = rgiv_estimate(&panel, &config).unwrap();
    let scaled = panel.scaled(250.0).unwrap();
    let fit_scaled = rgiv_estimate(&scaled, &config).unwrap();
    let est_gap = fit
        .phi_hat
        .as_slice()
        .iter()
        .zip(fit_scaled.phi_hat.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let avar = rgiv_avar(&panel, &fit.phi_hat).unwrap();
    let avar_scaled = rgiv_avar(&scaled, &fit_scaled.phi_hat).unwrap();
    let avar_gap = (&avar - &avar_scaled).abs().max() / avar.abs().max();
    ledger.check(
        "6e scale equivariance of estimates and avar",
        est_gap < 1e-6 && avar_gap < 1e-4,
        format!("max estimate gap {est_gap:.1e}, relative avar gap {avar_gap:.1e}"),
    );

    let again = generate_panel(&spec, 7).unwrap();
    ledger.check(
        "6e panel regeneration is bit-exact",
        again.outcomes() == panel.outcomes(),
        "same (seed, replication) reproduces the panel".into(),
    );

    let small = DgpSpec { periods: 600, ..builtin_scenario("coef_outlier").unwrap() };
    let run = |workers| {
        let opts = ScenarioOptions { reps: 12, workers: Some(workers), ..Default::default() };
        render_records(&run_scenario(&small, &opts).unwrap())
    };
    let (one, four) = (run(1), run(4));
    ledger.check(
        "6e report bytes independent of worker count",
        one == four,
        format!("{} record bytes with 1 and 4 workers", one.len()),
    );
}

fn degenerate_contract(ledger: &mut Ledger) {
    let n = 11;
    let spec = DgpSpec {
        name: "equal_sizes".into(),
        periods: 2300,
        phi: vec![0.33; n],
        sigma: vec![0.015; n],
        size_rule: SizeRule::Explicit { sizes: vec![1.0 / n as f64; n] },
        shock_dist: ShockDist::Gaussian,
        seed: 0,
    };
    let panel = generate_panel(&spec, 0).unwrap();
    let equal = giv_estimate(&panel, &GivWeights::Equal);
    let oracle = giv_estimate(&panel, &GivWeights::Oracle(spec.shock_variances().unwrap()));
    ledger.check(
        "7 equal sizes: GIV reports a weak instrument",
        matches!(equal, Err(RgivError::WeakInstrument { .. })) && matches!(oracle, Err(RgivError::WeakInstrument { .. })),
        format!("equal {:?}, oracle {:?}", equal.err().map(|e| e.to_string()), oracle.err().map(|e| e.to_string())),
    );
    let opts = ScenarioOptions { reps: DEGENERATE_REPS, ..Default::default() };
    let report = run_scenario(&spec, &opts).unwrap();
    ledger.check(
        "7 equal sizes: RGIV converges in every replication",
        report.failures == 0,
        format!("{} failures in {} replications", report.failures, report.reps),
    );
    ledger.band("7 equal sizes: RGIV phi_S coverage", report.summary.rgiv_phi_s.unwrap().rate, 0.95, 0.04);
}

fn main() -> ExitCode {
    let mut ledger = Ledger::default();
    let reports: Vec<ScenarioReport> = ["baseline", "coef_outlier", "var_outlier", "disperse"]
        .into_iter()
        .map(scenario)
        .collect();
    coverage_and_tests(&mut ledger, &reports);
    jacobian_property(&mut ledger);
    population_root_property(&mut ledger);
    avar_closed_form_property(&mut ledger);
    proposition_one_property(&mut ledger);
    invariance_properties(&mut ledger);
    degenerate_contract(&mut ledger);
    println!("acceptance: {} of {} criteria passed", ledger.total - ledger.failed, ledger.total);
    if ledger.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
