//! Sandwich asymptotic variance, delta-method intervals for linear
//! aggregates, the J overidentification test and the distance-metric
//! homogeneity test.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::distributions::{chi2_sf, two_sided_critical};
use crate::error::{Result, RgivError};
use crate::estimators::{EstimationResult, MAX_CONDITION};
use crate::model::{moment_count, CoefficientVector, PanelData};
use crate::moments::{analytic_jacobian, cue_weight_matrix, gmm_objective, moment_function, outer_mean};

/// Caveat attached to both specification tests.
pub const INDEPENDENCE_NOTE: &str =
    "chi-square calibration assumes mutually independent idiosyncratic shocks (not verified)";

/// Plug-in sandwich `(G'WG)^-1 G'W Sigma W G (G'WG)^-1` at `phi_hat`, with the
/// CUE weight, the sample moment covariance and the sample Jacobian.
pub fn rgiv_avar(panel: &PanelData, phi_hat: &CoefficientVector) -> Result<DMatrix<f64>> {
    let g = moment_function(panel, phi_hat)?;
    let w = cue_weight_matrix(&g).to_matrix();
    let sigma = outer_mean(&g);
    let jac = analytic_jacobian(panel, phi_hat)?;
    sandwich(&jac, &w, &sigma)
}

/// Generic GMM sandwich for Jacobian `G`, weight `W` and moment covariance `Sigma`.
pub fn sandwich(jac: &DMatrix<f64>, weight: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let wg = weight * jac;
    let bread_inv = jac.transpose() * &wg;
    let bread_inv = (&bread_inv + bread_inv.transpose()) * 0.5;
    let eig = SymmetricEigen::new(bread_inv.clone());
    let (min_k, min) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(RgivError::RankDeficient {
            condition,
            direction: eig.eigenvectors.column(min_k).iter().copied().collect(),
        });
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let bread = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let meat = wg.transpose() * sigma * &wg;
    let v = &bread * meat * &bread;
    Ok((&v + v.transpose()) * 0.5)
}

/// Computes and stores the sandwich on an RGIV-family result.
pub fn attach_avar(panel: &PanelData, result: &mut EstimationResult) -> Result<()> {
    result.avar = Some(rgiv_avar(panel, &result.phi_hat)?);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiTarget {
    Coefficient(usize),
    SizeWeighted,
    EqualWeighted,
    Giv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub target: CiTarget,
}

impl ConfidenceInterval {
    pub fn symmetric(point: f64, std_error: f64, level: f64, target: CiTarget) -> Self {
        let half = two_sided_critical(level) * std_error;
        Self {
            point,
            lo: point - half,
            hi: point + half,
            level,
            target,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }

    /// Whether the interval meets the closed interval `[a, b]`.
    pub fn intersects(&self, a: f64, b: f64) -> bool {
        self.lo <= b && a <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Delta-method interval for the linear aggregate `w' phi` with variance
/// `w' (avar / T) w`.
pub fn aggregate_ci(
    phi_hat: &CoefficientVector,
    avar: &DMatrix<f64>,
    weights: &[f64],
    level: f64,
    periods: usize,
    target: CiTarget,
) -> Result<ConfidenceInterval> {
    let n = phi_hat.len();
    if weights.len() != n || avar.shape() != (n, n) {
        return Err(RgivError::Dimension("aggregate weights and avar must match phi".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(RgivError::Config(format!("level {level} outside (0, 1)")));
    }
    let w = DVector::from_column_slice(weights);
    let point = w.dot(&DVector::from_column_slice(phi_hat.as_slice()));
    let mut var = w.dot(&(avar * &w)) / periods as f64;
    if var < 0.0 {
        if var < -1e-12 {
            return Err(RgivError::NegativeVariance(var));
        }
        var = 0.0;
    }
    Ok(ConfidenceInterval::symmetric(point, var.sqrt(), level, target))
}

/// Interval for a single coefficient.
pub fn coefficient_ci(
    phi_hat: &CoefficientVector,
    avar: &DMatrix<f64>,
    unit: usize,
    level: f64,
    periods: usize,
) -> Result<ConfidenceInterval> {
    let mut e = vec![0.0; phi_hat.len()];
    if unit >= e.len() {
        return Err(RgivError::Dimension(format!("unit {unit} out of range")));
    }
    e[unit] = 1.0;
    aggregate_ci(phi_hat, avar, &e, level, periods, CiTarget::Coefficient(unit))
}

/// Normal interval for a scalar GIV or OLS result.
pub fn scalar_ci(result: &EstimationResult, level: f64) -> Result<ConfidenceInterval> {
    let se = result
        .std_error
        .ok_or_else(|| RgivError::InvalidParameter("result has no standard error".into()))?;
    Ok(ConfidenceInterval::symmetric(result.phi_hat.as_slice()[0], se, level, CiTarget::Giv))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    JTest,
    Homogeneity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub note: String,
}

impl TestResult {
    fn new(test: TestKind, statistic: f64, dof: usize) -> Self {
        let statistic = if statistic < 0.0 {
            if statistic < -1e-8 {
                log::warn!("{test:?} statistic {statistic:e} clipped at zero");
            }
            0.0
        } else {
            statistic
        };
        Self {
            test,
            statistic,
            dof,
            p_value: chi2_sf(statistic, dof),
            note: INDEPENDENCE_NOTE.to_string(),
        }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// `J_T = T * Q_T(phi_hat)` against chi-square with `n(n-1)/2 - n` dof.
pub fn j_test(panel: &PanelData, phi_hat: &CoefficientVector) -> Result<TestResult> {
    let n = panel.units();
    let m = moment_count(n);
    if m <= n {
        return Err(RgivError::NotOverIdentified { moments: m, params: n });
    }
    let q = gmm_objective(panel, phi_hat)?.value;
    Ok(TestResult::new(TestKind::JTest, panel.periods() as f64 * q, m - n))
}

/// `DM_T = T (Q_T(restricted) - Q_T(unrestricted))` against chi-square with
/// `n - 1` dof.
pub fn homogeneity_test(
    panel: &PanelData,
    unrestricted: &EstimationResult,
    restricted: &EstimationResult,
) -> Result<TestResult> {
    let t = panel.periods() as f64;
    let q_free = gmm_objective(panel, &unrestricted.phi_hat)?.value;
    let q_tied = gmm_objective(panel, &restricted.phi_hat)?.value;
    let stat = t * (q_tied - q_free);
    if stat < -1e-8 * t {
        return Err(RgivError::OptimizerInconsistency {
            restricted: q_tied,
            unrestricted: q_free,
        });
    }
    Ok(TestResult::new(TestKind::Homogeneity, stat, panel.units() - 1))
}
