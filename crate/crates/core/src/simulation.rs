//! Data-generating processes, the seeded replication engine and coverage
//! aggregation.
//!
//! Randomness: replication `k` of a spec with base seed `s` draws from
//! `ChaCha20Rng::seed_from_u64(s)` switched to stream `k`. ChaCha is a
//! counter-based generator, so each replication owns an independent stream and
//! results do not depend on scheduling or worker count. Shocks are drawn
//! period by period, unit by unit.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RgivError};
use crate::estimators::{giv_estimate, rgiv_estimate, rgiv_restricted_estimate, GivWeights, OptimizerConfig};
use crate::inference::{aggregate_ci, attach_avar, coefficient_ci, homogeneity_test, j_test, scalar_ci, CiTarget, ConfidenceInterval};
use crate::model::{moment_count, CoefficientVector, PanelData, ShockVariances};
use crate::stats::median;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable holding the simulation worker count.
pub const WORKERS_ENV: &str = "RGIV_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeRule {
    /// `S_i ∝ i^(-1/zeta)`.
    PowerLaw { zeta: f64 },
    Explicit { sizes: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShockDist {
    #[default]
    Gaussian,
    /// Student-t rescaled to unit variance; requires `dof > 4`.
    StudentT { dof: f64 },
}

/// Complete description of a simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: String,
    pub periods: usize,
    pub phi: Vec<f64>,
    /// Shock standard deviations.
    pub sigma: Vec<f64>,
    pub size_rule: SizeRule,
    #[serde(default)]
    pub shock_dist: ShockDist,
    #[serde(default)]
    pub seed: u64,
}

/// Power-law sizes `k_i = i^(-1/zeta)`, normalized.
pub fn power_law_sizes(n: usize, zeta: f64) -> Vec<f64> {
    let k: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-1.0 / zeta)).collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

pub const SCENARIOS: [&str; 4] = ["baseline", "coef_outlier", "var_outlier", "disperse"];

/// The four simulation designs: n = 11, T = 2300, power-law sizes with
/// zeta = 1.04.
pub fn builtin_scenario(name: &str) -> Result<DgpSpec> {
    const N: usize = 11;
    let mut phi = vec![0.33; N];
    let mut sigma = vec![0.015; N];
    match name {
        "baseline" => {}
        "coef_outlier" => phi[0] = 0.66,
        "var_outlier" => sigma[0] = 0.03,
        "disperse" => {
            phi = linspace(0.21, 0.46, N);
            sigma = linspace(0.009, 0.021, N);
        }
        other => return Err(RgivError::UnknownScenario(other.to_string())),
    }
    Ok(DgpSpec {
        name: name.to_string(),
        periods: 2300,
        phi,
        sigma,
        size_rule: SizeRule::PowerLaw { zeta: 1.04 },
        shock_dist: ShockDist::Gaussian,
        seed: 0,
    })
}

impl DgpSpec {
    pub fn units(&self) -> usize {
        self.phi.len()
    }

    pub fn sizes(&self) -> Vec<f64> {
        match &self.size_rule {
            SizeRule::PowerLaw { zeta } => power_law_sizes(self.units(), *zeta),
            SizeRule::Explicit { sizes } => sizes.clone(),
        }
    }

    pub fn coefficients(&self) -> CoefficientVector {
        CoefficientVector::new(self.phi.clone())
    }

    pub fn shock_variances(&self) -> Result<ShockVariances> {
        ShockVariances::from_std_devs(&self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.units();
        if n < 3 {
            return Err(RgivError::Config("at least three units are required".into()));
        }
        if self.sigma.len() != n {
            return Err(RgivError::Dimension("sigma and phi differ in length".into()));
        }
        if self.periods < 2 {
            return Err(RgivError::Config("at least two periods are required".into()));
        }
        match &self.size_rule {
            SizeRule::PowerLaw { zeta } if !(*zeta > 0.0) => {
                return Err(RgivError::Config("power-law exponent must be positive".into()))
            }
            SizeRule::Explicit { sizes } if sizes.len() != n => {
                return Err(RgivError::Dimension("explicit sizes length".into()))
            }
            _ => {}
        }
        if let ShockDist::StudentT { dof } = self.shock_dist {
            if !(dof > 4.0) {
                return Err(RgivError::Config("student-t shocks need dof > 4".into()));
            }
        }
        self.shock_variances()?;
        let sizes = self.sizes();
        // reuse panel validation for the sizes
        PanelData::new(DMatrix::zeros(1, n), sizes.clone())?;
        let phi_s = self.coefficients().size_weighted(&sizes);
        if !(phi_s < 1.0) {
            return Err(RgivError::InvalidParameter(format!("phi_S = {phi_s} must be below 1")));
        }
        Ok(())
    }

    fn rng(&self, replication: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(replication);
        rng
    }

    /// Draws the T x n shock matrix of one replication.
    pub fn draw_shocks(&self, replication: u64) -> DMatrix<f64> {
        let n = self.units();
        let mut rng = self.rng(replication);
        let mut u = DMatrix::zeros(self.periods, n);
        match self.shock_dist {
            ShockDist::Gaussian => {
                for t in 0..self.periods {
                    for i in 0..n {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        u[(t, i)] = self.sigma[i] * z;
                    }
                }
            }
            ShockDist::StudentT { dof } => {
                let dist = StudentT::new(dof).expect("validated dof");
                let scale = ((dof - 2.0) / dof).sqrt();
                for t in 0..self.periods {
                    for i in 0..n {
                        u[(t, i)] = self.sigma[i] * scale * dist.sample(&mut rng);
                    }
                }
            }
        }
        u
    }
}

/// Builds outcomes from shocks: `r_St = u_St / (1 - phi_S)`, then
/// `r_it = phi_i r_St + u_it`.
pub fn panel_from_shocks(shocks: &DMatrix<f64>, phi: &CoefficientVector, sizes: &[f64]) -> Result<PanelData> {
    let (t, n) = shocks.shape();
    if phi.len() != n || sizes.len() != n {
        return Err(RgivError::Dimension("shocks, phi and sizes must agree".into()));
    }
    let mult = 1.0 - phi.size_weighted(sizes);
    let mut out = DMatrix::zeros(t, n);
    for s in 0..t {
        let u_s: f64 = (0..n).map(|i| sizes[i] * shocks[(s, i)]).sum();
        let r_s = u_s / mult;
        for i in 0..n {
            out[(s, i)] = phi.0[i] * r_s + shocks[(s, i)];
        }
    }
    PanelData::new(out, sizes.to_vec())
}

/// Panel of one replication, deterministic in `(spec.seed, replication)`.
pub fn generate_panel(spec: &DgpSpec, replication: u64) -> Result<PanelData> {
    spec.validate()?;
    let shocks = spec.draw_shocks(replication);
    panel_from_shocks(&shocks, &spec.coefficients(), &spec.sizes())
}

/// Noise-free panel whose shocks are exactly orthogonal in sample: columns of
/// a Sylvester-Hadamard matrix (the constant column excluded) scaled by
/// `sigma`. Every pairwise sample moment vanishes at `phi`.
pub fn orthogonal_shock_panel(phi: &CoefficientVector, sizes: &[f64], sigma: &[f64]) -> Result<PanelData> {
    let n = phi.len();
    let mut order = 1;
    while order < n + 1 {
        order *= 2;
    }
    let mut h = vec![vec![1.0_f64]];
    while h.len() < order {
        let k = h.len();
        let mut next = vec![vec![0.0; 2 * k]; 2 * k];
        for r in 0..k {
            for c in 0..k {
                next[r][c] = h[r][c];
                next[r][c + k] = h[r][c];
                next[r + k][c] = h[r][c];
                next[r + k][c + k] = -h[r][c];
            }
        }
        h = next;
    }
    let shocks = DMatrix::from_fn(order, n, |t, i| sigma[i] * h[t][i + 1]);
    panel_from_shocks(&shocks, phi, sizes)
}

/// Which estimators and tests a scenario run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorSet {
    pub rgiv: bool,
    pub giv_feasible: bool,
    pub giv_oracle: bool,
    pub j_test: bool,
    pub homogeneity: bool,
}

impl Default for EstimatorSet {
    fn default() -> Self {
        Self {
            rgiv: true,
            giv_feasible: true,
            giv_oracle: true,
            j_test: true,
            homogeneity: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOptions {
    pub reps: usize,
    pub level: f64,
    /// Test size for the J and homogeneity rejection rates.
    pub alpha: f64,
    pub estimators: EstimatorSet,
    pub optimizer: OptimizerConfig,
    /// Worker threads; `None` reads [`WORKERS_ENV`], then falls back to the
    /// number of CPUs. Never affects results.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            reps: 500,
            level: 0.95,
            alpha: 0.05,
            estimators: EstimatorSet::default(),
            optimizer: OptimizerConfig::default(),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl From<ConfidenceInterval> for Interval {
    fn from(ci: ConfidenceInterval) -> Self {
        Self {
            point: ci.point,
            lo: ci.lo,
            hi: ci.hi,
        }
    }
}

impl Interval {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn intersects(&self, a: f64, b: f64) -> bool {
        self.lo <= b && a <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub statistic: f64,
    pub p_value: f64,
}

/// Outcome of one replication. `error` is set when the RGIV pipeline failed;
/// GIV failures are kept separately and do not exclude the replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: u64,
    pub phi_hat: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub converged: Option<bool>,
    pub starts_agreeing: Option<usize>,
    pub coefficients: Vec<Interval>,
    pub phi_s: Option<Interval>,
    pub phi_e: Option<Interval>,
    pub giv_feasible: Option<Interval>,
    pub giv_oracle: Option<Interval>,
    pub j_test: Option<TestRecord>,
    pub homogeneity: Option<TestRecord>,
    pub error: Option<String>,
    pub giv_feasible_error: Option<String>,
    pub giv_oracle_error: Option<String>,
}

impl ReplicationRecord {
    fn empty(replication: u64) -> Self {
        Self {
            replication,
            phi_hat: None,
            objective: None,
            converged: None,
            starts_agreeing: None,
            coefficients: Vec::new(),
            phi_s: None,
            phi_e: None,
            giv_feasible: None,
            giv_oracle: None,
            j_test: None,
            homogeneity: None,
            error: None,
            giv_feasible_error: None,
            giv_oracle_error: None,
        }
    }
}

/// Runs every requested estimator on replication `replication` of `spec`.
pub fn run_replication(spec: &DgpSpec, replication: u64, opts: &ScenarioOptions) -> ReplicationRecord {
    let mut rec = ReplicationRecord::empty(replication);
    let panel = match generate_panel(spec, replication) {
        Ok(p) => p,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let sizes = panel.sizes().to_vec();
    let t = panel.periods();
    let n = panel.units();
    let est = &opts.estimators;

    if est.rgiv {
        let config = OptimizerConfig {
            seed: opts.optimizer.seed ^ replication.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..opts.optimizer.clone()
        };
        let outcome = (|| -> Result<()> {
            let mut fit = rgiv_estimate(&panel, &config)?;
            let restricted = if est.homogeneity {
                let r = rgiv_restricted_estimate(&panel, &config)?;
                if r.objective_value < fit.objective_value {
                    // the unrestricted search missed a lower basin
                    fit = crate::estimators::rgiv_estimate_from(&panel, &config, std::slice::from_ref(&r.phi_hat.0))?;
                }
                Some(r)
            } else {
                None
            };
            attach_avar(&panel, &mut fit)?;
            let avar = fit.avar.as_ref().expect("attached");
            rec.phi_hat = Some(fit.phi_hat.0.clone());
            rec.objective = Some(fit.objective_value);
            rec.converged = Some(fit.converged);
            rec.starts_agreeing = Some(fit.n_starts_agreeing);
            rec.coefficients = (0..n)
                .map(|i| coefficient_ci(&fit.phi_hat, avar, i, opts.level, t).map(Interval::from))
                .collect::<Result<_>>()?;
            rec.phi_s = Some(aggregate_ci(&fit.phi_hat, avar, &sizes, opts.level, t, CiTarget::SizeWeighted)?.into());
            let equal = vec![1.0 / n as f64; n];
            rec.phi_e = Some(aggregate_ci(&fit.phi_hat, avar, &equal, opts.level, t, CiTarget::EqualWeighted)?.into());
            if est.j_test && moment_count(n) > n {
                let j = j_test(&panel, &fit.phi_hat)?;
                rec.j_test = Some(TestRecord {
                    statistic: j.statistic,
                    p_value: j.p_value,
                });
            }
            if let Some(r) = restricted {
                let dm = homogeneity_test(&panel, &fit, &r)?;
                rec.homogeneity = Some(TestRecord {
                    statistic: dm.statistic,
                    p_value: dm.p_value,
                });
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            rec.error = Some(e.to_string());
        }
    }

    if est.giv_feasible {
        match giv_estimate(&panel, &GivWeights::Feasible).and_then(|r| scalar_ci(&r, opts.level)) {
            Ok(ci) => rec.giv_feasible = Some(ci.into()),
            Err(e) => rec.giv_feasible_error = Some(e.to_string()),
        }
    }
    if est.giv_oracle {
        let oracle = spec.shock_variances().map(GivWeights::Oracle);
        match oracle
            .and_then(|w| giv_estimate(&panel, &w))
            .and_then(|r| scalar_ci(&r, opts.level))
        {
            Ok(ci) => rec.giv_oracle = Some(ci.into()),
            Err(e) => rec.giv_oracle_error = Some(e.to_string()),
        }
    }
    rec
}

/// Coverage rate with its binomial standard error and median interval length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStat {
    pub rate: f64,
    pub std_error: f64,
    pub median_length: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionStat {
    pub rate: f64,
    pub std_error: f64,
    pub count: usize,
}

fn binomial_se(p: f64, count: usize) -> f64 {
    if count == 0 {
        f64::NAN
    } else {
        (p * (1.0 - p) / count as f64).sqrt()
    }
}

fn coverage<'a>(intervals: impl Iterator<Item = &'a Interval>, hit: impl Fn(&Interval) -> bool) -> Option<CoverageStat> {
    let items: Vec<&Interval> = intervals.collect();
    if items.is_empty() {
        return None;
    }
    let hits = items.iter().filter(|iv| hit(iv)).count();
    let rate = hits as f64 / items.len() as f64;
    let lengths: Vec<f64> = items.iter().map(|iv| iv.length()).collect();
    Some(CoverageStat {
        rate,
        std_error: binomial_se(rate, items.len()),
        median_length: median(&lengths).unwrap_or(f64::NAN),
        count: items.len(),
    })
}

fn rejection<'a>(tests: impl Iterator<Item = &'a TestRecord>, alpha: f64) -> Option<RejectionStat> {
    let items: Vec<&TestRecord> = tests.collect();
    if items.is_empty() {
        return None;
    }
    let rate = items.iter().filter(|t| t.p_value < alpha).count() as f64 / items.len() as f64;
    Some(RejectionStat {
        rate,
        std_error: binomial_se(rate, items.len()),
        count: items.len(),
    })
}

/// Aggregated results of a scenario (one row of the summary tables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub rgiv_phi_s: Option<CoverageStat>,
    pub rgiv_phi_e: Option<CoverageStat>,
    pub giv_feasible: Option<CoverageStat>,
    pub giv_oracle: Option<CoverageStat>,
    pub j_test: Option<RejectionStat>,
    pub homogeneity: Option<RejectionStat>,
    pub coefficients: Vec<CoverageStat>,
    pub giv_failures: usize,
}

impl ScenarioSummary {
    pub fn from_records(spec: &DgpSpec, records: &[ReplicationRecord], alpha: f64) -> Self {
        let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| r.error.is_none()).collect();
        let sizes = spec.sizes();
        let phi = spec.coefficients();
        let phi_s = phi.size_weighted(&sizes);
        let phi_e = phi.equal_weighted();
        let lo = spec.phi.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = spec.phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let coefficients = (0..spec.units())
            .filter_map(|i| {
                coverage(ok.iter().filter_map(|r| r.coefficients.get(i)), |iv| iv.contains(spec.phi[i]))
            })
            .collect();
        Self {
            rgiv_phi_s: coverage(ok.iter().filter_map(|r| r.phi_s.as_ref()), |iv| iv.contains(phi_s)),
            rgiv_phi_e: coverage(ok.iter().filter_map(|r| r.phi_e.as_ref()), |iv| iv.contains(phi_e)),
            giv_feasible: coverage(records.iter().filter_map(|r| r.giv_feasible.as_ref()), |iv| iv.intersects(lo, hi)),
            giv_oracle: coverage(records.iter().filter_map(|r| r.giv_oracle.as_ref()), |iv| iv.intersects(lo, hi)),
            j_test: rejection(ok.iter().filter_map(|r| r.j_test.as_ref()), alpha),
            homogeneity: rejection(ok.iter().filter_map(|r| r.homogeneity.as_ref()), alpha),
            coefficients,
            giv_failures: records
                .iter()
                .filter(|r| r.giv_feasible_error.is_some() || r.giv_oracle_error.is_some())
                .count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub provenance: Provenance,
    pub spec: DgpSpec,
    pub options: ScenarioOptions,
    pub reps: usize,
    pub failures: usize,
    pub summary: ScenarioSummary,
    #[serde(skip)]
    pub elapsed_secs: f64,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
}

/// Hash of everything that determines a report's contents.
pub fn config_hash(spec: &DgpSpec, opts: &ScenarioOptions) -> String {
    let payload = serde_json::to_string(&(spec, opts)).unwrap_or_default();
    let digest = Sha256::digest(payload.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn resolve_workers(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .filter(|w| *w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `opts.reps` replications on a bounded worker pool and aggregates
/// coverage, interval lengths and rejection rates.
pub fn run_scenario(spec: &DgpSpec, opts: &ScenarioOptions) -> Result<ScenarioReport> {
    spec.validate()?;
    opts.optimizer.validate()?;
    if opts.reps < 1 {
        return Err(RgivError::Config("reps must be at least 1".into()));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) || !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(RgivError::Config("level and alpha must lie in (0, 1)".into()));
    }
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_workers(opts.workers))
        .build()
        .map_err(|e| RgivError::Config(e.to_string()))?;
    let records: Vec<ReplicationRecord> = pool.install(|| {
        (0..opts.reps as u64)
            .into_par_iter()
            .map(|k| run_replication(spec, k, opts))
            .collect()
    });
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    if opts.estimators.rgiv && failures * 100 > opts.reps {
        return Err(RgivError::TooManyFailures {
            failed: failures,
            reps: opts.reps,
        });
    }
    let summary = ScenarioSummary::from_records(spec, &records, opts.alpha);
    Ok(ScenarioReport {
        provenance: Provenance {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(spec, opts),
            seed: spec.seed,
        },
        spec: spec.clone(),
        options: opts.clone(),
        reps: opts.reps,
        failures,
        summary,
        elapsed_secs: started.elapsed().as_secs_f64(),
        records,
    })
}
