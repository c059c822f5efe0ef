//! RGIV (continuously-updated GMM on pairwise shock orthogonality), its
//! homogeneity-restricted and two-step variants, the GIV baselines and the
//! OLS diagnostic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RgivError, StartDiagnostic};
use crate::model::{CoefficientVector, PanelData, ParameterSpace, ShockVariances};
use crate::moments::{moment_covariance, MomentStatistics};
use crate::optim::{nelder_mead, projected_bfgs, scalar_minimize, LocalMinimum, PolishOptions, SimplexOptions};
use crate::stats::{mean_of, pairwise_sum, sample_variance};

/// Condition number above which a moment covariance is ridge-regularized.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub starts: usize,
    pub max_iters: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub margin: f64,
    /// Half-width of the coefficient box `[-bound, bound]^n`.
    pub bound: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iters: 20_000,
            f_tol: 1e-10,
            x_tol: 1e-8,
            margin: ParameterSpace::DEFAULT_MARGIN,
            bound: ParameterSpace::DEFAULT_BOUND,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts < 1 {
            return Err(RgivError::Config("at least one start is required".into()));
        }
        if !(self.f_tol > 0.0 && self.x_tol > 0.0) {
            return Err(RgivError::Config("tolerances must be positive".into()));
        }
        if !(self.margin > 0.0) {
            return Err(RgivError::Config("margin must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(RgivError::Config("max_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn parameter_space(&self, n: usize) -> Result<ParameterSpace> {
        ParameterSpace::symmetric(n, self.bound, self.margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rgiv,
    RgivRestricted,
    RgivTwoStep,
    GivEqual,
    GivOracle,
    GivFeasible,
    Ols,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Rgiv => "rgiv",
            Method::RgivRestricted => "rgiv-restricted",
            Method::RgivTwoStep => "rgiv-two-step",
            Method::GivEqual => "giv-equal",
            Method::GivOracle => "giv-oracle",
            Method::GivFeasible => "giv-feasible",
            Method::Ols => "ols",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Method::Rgiv,
            Method::RgivRestricted,
            Method::RgivTwoStep,
            Method::GivEqual,
            Method::GivOracle,
            Method::GivFeasible,
            Method::Ols,
        ]
        .into_iter()
        .find(|m| m.tag() == s)
    }

    pub fn is_gmm(self) -> bool {
        matches!(self, Method::Rgiv | Method::RgivRestricted | Method::RgivTwoStep)
    }
}

/// Point estimates plus optimizer diagnostics. GIV and OLS results carry a
/// single coefficient and its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub method: Method,
    pub phi_hat: CoefficientVector,
    pub objective_value: f64,
    pub converged: bool,
    pub n_starts_agreeing: usize,
    /// Asymptotic variance of `sqrt(T)(phi_hat - phi)`; filled by
    /// [`crate::inference::attach_avar`].
    pub avar: Option<DMatrix<f64>>,
    pub std_error: Option<f64>,
    pub starts: Vec<StartDiagnostic>,
    pub notes: Vec<String>,
}

impl EstimationResult {
    fn scalar(method: Method, value: f64, se: f64, note: &str) -> Self {
        Self {
            method,
            phi_hat: CoefficientVector::new(vec![value]),
            objective_value: f64::NAN,
            converged: true,
            n_starts_agreeing: 1,
            avar: None,
            std_error: Some(se),
            starts: Vec::new(),
            notes: vec![note.to_string()],
        }
    }
}

fn start_points(panel: &PanelData, stats: &MomentStatistics, space: &ParameterSpace, config: &OptimizerConfig) -> Vec<Vec<f64>> {
    let n = panel.units();
    let sizes = panel.sizes();
    let cap = space.aggregate_cap();
    let mut starts = vec![vec![0.0; n]];

    // pooled slope of r_it on r_St across all units
    let agg = panel.size_weighted_outcome();
    let mut buf = Vec::with_capacity(panel.periods());
    let ss = mean_of(&mut buf, agg.len(), |t| agg[t] * agg[t]);
    let cross: f64 = (0..n)
        .map(|i| {
            let r = panel.unit(i);
            mean_of(&mut buf, agg.len(), |t| r[t] * agg[t])
        })
        .sum();
    let pooled = if ss > 0.0 { cross / (n as f64 * ss) } else { 0.0 };
    let pooled = pooled.min(cap - 0.05).max(-space.box_hi[0]);
    starts.push(space.project(&vec![pooled; n], sizes));
    debug_assert_eq!(stats.units(), n);

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    while starts.len() < config.starts {
        let mut draw = None;
        for _ in 0..1000 {
            let x: Vec<f64> = space
                .box_lo
                .iter()
                .zip(&space.box_hi)
                .map(|(l, h)| rng.gen_range(*l..*h))
                .collect();
            if space.contains(&x, sizes) {
                draw = Some(x);
                break;
            }
        }
        let x = draw.unwrap_or_else(|| {
            let x: Vec<f64> = space.box_lo.iter().zip(&space.box_hi).map(|(l, h)| rng.gen_range(*l..*h)).collect();
            space.project(&x, sizes)
        });
        starts.push(x);
    }
    starts.truncate(config.starts);
    starts
}

fn local_search(stats: &MomentStatistics, start: &[f64], space: &ParameterSpace, sizes: &[f64], config: &OptimizerConfig) -> LocalMinimum {
    let simplex = nelder_mead(
        |x| stats.objective(x),
        start,
        space,
        sizes,
        SimplexOptions {
            max_iters: config.max_iters,
            f_tol: config.f_tol,
            x_tol: config.x_tol.max(1e-6),
            initial_step: 0.1,
        },
    );
    let polish = projected_bfgs(
        |x| stats.objective_and_gradient(x),
        &simplex.x,
        space,
        sizes,
        PolishOptions {
            max_iters: 1000,
            f_tol: config.f_tol * 1e-6,
            x_tol: config.x_tol,
        },
    );
    let (best, converged) = if polish.value <= simplex.value {
        (polish.clone(), simplex.converged || polish.converged)
    } else {
        (simplex.clone(), simplex.converged)
    };
    LocalMinimum {
        iterations: simplex.iterations + polish.iterations,
        converged,
        ..best
    }
}

fn better(a: &LocalMinimum, b: &LocalMinimum) -> bool {
    if a.value != b.value {
        return a.value < b.value;
    }
    let na: f64 = a.x.iter().map(|v| v * v).sum();
    let nb: f64 = b.x.iter().map(|v| v * v).sum();
    if na != nb {
        return na < nb;
    }
    a.x.iter().zip(&b.x).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

/// Multi-start constrained minimization of the CUE objective.
pub fn rgiv_estimate(panel: &PanelData, config: &OptimizerConfig) -> Result<EstimationResult> {
    rgiv_estimate_from(panel, config, &[])
}

/// [`rgiv_estimate`] with additional caller-supplied starting points.
pub fn rgiv_estimate_from(panel: &PanelData, config: &OptimizerConfig, extra_starts: &[Vec<f64>]) -> Result<EstimationResult> {
    config.validate()?;
    let n = panel.units();
    let sizes = panel.sizes();
    let space = config.parameter_space(n)?;
    space.check_feasible(sizes)?;
    let stats = MomentStatistics::new(panel);

    let mut starts = start_points(panel, &stats, &space, config);
    for extra in extra_starts {
        if extra.len() != n {
            return Err(RgivError::Dimension("extra start has wrong length".into()));
        }
        starts.push(space.project(extra, sizes));
    }
    let results: Vec<LocalMinimum> = starts
        .iter()
        .map(|s| local_search(&stats, s, &space, sizes, config))
        .collect();
    let diagnostics: Vec<StartDiagnostic> = starts
        .iter()
        .zip(&results)
        .map(|(s, r)| StartDiagnostic {
            start: s.clone(),
            objective: r.value,
            iterations: r.iterations,
            converged: r.converged,
        })
        .collect();

    let mut best: Option<&LocalMinimum> = None;
    for r in results.iter().filter(|r| r.value.is_finite()) {
        if best.is_none_or(|b| better(r, b)) {
            best = Some(r);
        }
    }
    let Some(best) = best else {
        return Err(RgivError::Estimation(diagnostics));
    };
    let agreeing = results
        .iter()
        .filter(|r| r.value.is_finite() && r.value - best.value <= config.f_tol)
        .count();
    let converged = results.iter().any(|r| r.converged);
    let phi = CoefficientVector::new(best.x.clone());
    debug_assert!(space.contains(phi.as_slice(), sizes));
    Ok(EstimationResult {
        method: Method::Rgiv,
        phi_hat: phi,
        objective_value: best.value,
        converged,
        n_starts_agreeing: agreeing,
        avar: None,
        std_error: None,
        starts: diagnostics,
        notes: Vec::new(),
    })
}

/// CUE minimization under `phi_1 = ... = phi_n`.
pub fn rgiv_restricted_estimate(panel: &PanelData, config: &OptimizerConfig) -> Result<EstimationResult> {
    config.validate()?;
    let n = panel.units();
    let space = config.parameter_space(n)?;
    space.check_feasible(panel.sizes())?;
    let stats = MomentStatistics::new(panel);
    let lo = space.box_lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hi = space.box_hi.iter().copied().fold(f64::INFINITY, f64::min).min(space.aggregate_cap());
    if !(lo < hi) {
        return Err(RgivError::Config("empty homogeneous parameter range".into()));
    }
    let grid = ((hi - lo) / 0.01).ceil().clamp(50.0, 5000.0) as usize;
    let r = scalar_minimize(|p| stats.objective(&vec![p; n]), lo, hi, grid, 1e-12, config.max_iters);
    if !r.value.is_finite() {
        return Err(RgivError::Estimation(vec![StartDiagnostic {
            start: vec![lo, hi],
            objective: r.value,
            iterations: r.iterations,
            converged: r.converged,
        }]));
    }
    Ok(EstimationResult {
        method: Method::RgivRestricted,
        phi_hat: CoefficientVector::homogeneous(r.x[0], n),
        objective_value: r.value,
        converged: r.converged,
        n_starts_agreeing: 1,
        avar: None,
        std_error: None,
        starts: Vec::new(),
        notes: Vec::new(),
    })
}

/// Inverse of a symmetric moment covariance, ridge-regularized when its
/// condition number exceeds [`MAX_CONDITION`]. Returns the inverse and whether
/// regularization was applied.
pub fn regularized_inverse(cov: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let ridged = !(min > 0.0 && max / min <= MAX_CONDITION);
    let shift = if ridged { (max.abs() / MAX_CONDITION - min).max(0.0) + f64::MIN_POSITIVE } else { 0.0 };
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / (v + shift));
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    (inv, ridged)
}

/// Fixed-weight GMM objective `gbar' W gbar` and its gradient.
pub fn fixed_weight_objective(stats: &MomentStatistics, weight: &DMatrix<f64>, phi: &[f64]) -> (f64, Vec<f64>) {
    let g = DVector::from_vec(stats.mean_moments(phi));
    let wg = weight * &g;
    let value = g.dot(&wg);
    let jac = stats.jacobian(phi);
    let grad = (jac.transpose() * wg) * 2.0;
    (value, grad.iter().copied().collect())
}

/// Second step of efficient GMM: full weight matrix at the first-step
/// estimate, then fixed-weight minimization from the first-step point.
pub fn two_step_estimate(panel: &PanelData, first_step: &EstimationResult, config: &OptimizerConfig) -> Result<EstimationResult> {
    if first_step.method != Method::Rgiv || !first_step.converged {
        return Err(RgivError::InvalidParameter(
            "two-step estimation needs a converged RGIV first step".into(),
        ));
    }
    let n = panel.units();
    let sizes = panel.sizes();
    let space = config.parameter_space(n)?;
    let cov = moment_covariance(panel, &first_step.phi_hat)?;
    let (weight, ridged) = regularized_inverse(&cov);
    let mut notes = Vec::new();
    if ridged {
        log::warn!("moment covariance is ill-conditioned; using ridge-regularized inverse");
        notes.push("ridge-regularized second-step weight".to_string());
    }
    let stats = MomentStatistics::new(panel);
    let r = projected_bfgs(
        |x| fixed_weight_objective(&stats, &weight, x),
        first_step.phi_hat.as_slice(),
        &space,
        sizes,
        PolishOptions {
            max_iters: config.max_iters.min(5000),
            f_tol: config.f_tol * 1e-6,
            x_tol: config.x_tol,
        },
    );
    Ok(EstimationResult {
        method: Method::RgivTwoStep,
        phi_hat: CoefficientVector::new(r.x),
        objective_value: r.value,
        converged: r.converged,
        n_starts_agreeing: 1,
        avar: None,
        std_error: None,
        starts: Vec::new(),
        notes,
    })
}

/// Precision weighting used to build the GIV aggregate `r_Gamma`.
#[derive(Debug, Clone, PartialEq)]
pub enum GivWeights {
    Equal,
    Oracle(ShockVariances),
    Feasible,
}

impl GivWeights {
    pub fn method(&self) -> Method {
        match self {
            GivWeights::Equal => Method::GivEqual,
            GivWeights::Oracle(_) => Method::GivOracle,
            GivWeights::Feasible => Method::GivFeasible,
        }
    }

    pub fn weights(&self, panel: &PanelData) -> Result<Vec<f64>> {
        let n = panel.units();
        let raw: Vec<f64> = match self {
            GivWeights::Equal => return Ok(vec![1.0 / n as f64; n]),
            GivWeights::Oracle(s2) => {
                if s2.as_slice().len() != n {
                    return Err(RgivError::Dimension("oracle variances length".into()));
                }
                s2.as_slice().iter().map(|v| 1.0 / v).collect()
            }
            GivWeights::Feasible => (0..n)
                .map(|i| {
                    let v = sample_variance(panel.unit(i));
                    if v > 0.0 {
                        Ok(1.0 / v)
                    } else {
                        Err(RgivError::DegenerateRegressor(format!("unit {i} has zero variance")))
                    }
                })
                .collect::<Result<_>>()?,
        };
        let total: f64 = raw.iter().sum();
        Ok(raw.into_iter().map(|w| w / total).collect())
    }
}

/// Granular IV: instrument `z_t = r_St - r_Gamma,t`, regression of
/// `r_Gamma,t` on `r_St`, HC0 standard error.
pub fn giv_estimate(panel: &PanelData, weights_mode: &GivWeights) -> Result<EstimationResult> {
    let t = panel.periods();
    if t < 2 {
        return Err(RgivError::InvalidPanel("GIV needs at least two periods".into()));
    }
    let w = weights_mode.weights(panel)?;
    let agg = panel.size_weighted_outcome();
    let mut gamma = vec![0.0; t];
    for (i, wi) in w.iter().enumerate() {
        for (g, r) in gamma.iter_mut().zip(panel.unit(i)) {
            *g += wi * r;
        }
    }
    let z: Vec<f64> = agg.iter().zip(&gamma).map(|(s, g)| s - g).collect();
    let zx: Vec<f64> = z.iter().zip(&agg).map(|(a, b)| a * b).collect();
    let zy: Vec<f64> = z.iter().zip(&gamma).map(|(a, b)| a * b).collect();
    let xx: Vec<f64> = agg.iter().map(|a| a * a).collect();
    let sum_zx = pairwise_sum(&zx);
    let scale = pairwise_sum(&xx);
    if !(sum_zx.abs() >= 1e-12 * scale) || scale == 0.0 {
        return Err(RgivError::WeakInstrument { value: sum_zx, scale });
    }
    let phi = pairwise_sum(&zy) / sum_zx;
    let meat: Vec<f64> = z
        .iter()
        .zip(gamma.iter().zip(&agg))
        .map(|(zt, (y, x))| {
            let e = y - phi * x;
            zt * zt * e * e
        })
        .collect();
    let se = pairwise_sum(&meat).sqrt() / sum_zx.abs();
    Ok(EstimationResult::scalar(weights_mode.method(), phi, se, "standard error: HC0 heteroskedasticity-robust IV"))
}

/// Population estimand of equal-weight GIV under heterogeneous coefficients
/// and homogeneous shock variances.
pub fn giv_estimand_closed_form(phi: &CoefficientVector, sizes: &[f64]) -> Result<f64> {
    let n = phi.len();
    if sizes.len() != n {
        return Err(RgivError::Dimension("sizes and coefficients differ in length".into()));
    }
    let phi_s = phi.size_weighted(sizes);
    let phi_e = phi.equal_weighted();
    let herfindahl: f64 = sizes.iter().map(|s| s * s).sum();
    let nf = n as f64;
    let gap = phi_s - phi_e;
    let denom = gap / (1.0 - phi_s) * herfindahl - 1.0 / nf + herfindahl;
    if denom == 0.0 || !denom.is_finite() {
        return Err(RgivError::SingularEstimand);
    }
    Ok(phi_e + gap / nf / denom)
}

/// Slope of `r_it` on `r_St` (no intercept). Biased upward; diagnostic only.
pub fn ols_estimate(panel: &PanelData, unit: usize) -> Result<f64> {
    if unit >= panel.units() {
        return Err(RgivError::Dimension(format!("unit {unit} out of range")));
    }
    if panel.periods() < 2 {
        return Err(RgivError::InvalidPanel("OLS needs at least two periods".into()));
    }
    let agg = panel.size_weighted_outcome();
    let r = panel.unit(unit);
    let xx: Vec<f64> = agg.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = agg.iter().zip(r).map(|(a, b)| a * b).collect();
    let sxx = pairwise_sum(&xx);
    if !(sxx > 0.0) {
        return Err(RgivError::DegenerateRegressor("r_St has zero variance".into()));
    }
    Ok(pairwise_sum(&xy) / sxx)
}
