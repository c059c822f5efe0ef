//! Robust granular instrumental variables.
//!
//! Units `i = 1..n` with fixed sizes `S_i` respond to the size-weighted
//! aggregate outcome, `r_it = phi_i r_St + u_it`. RGIV estimates the spillover
//! coefficients `phi_i` by continuously-updated GMM on the pairwise
//! orthogonality of the implied shocks `u_it = r_it - phi_i r_St`, subject to
//! `phi_S < 1`. The crate also provides the granular IV baselines, plug-in
//! sandwich inference, the J and distance-metric homogeneity tests, and a
//! seeded Monte Carlo engine for coverage studies.
//!
//! ```
//! use rgiv::prelude::*;
//!
//! let spec = DgpSpec { periods: 400, ..builtin_scenario("baseline").unwrap() };
//! let panel = generate_panel(&spec, 0).unwrap();
//! let fit = rgiv_estimate(&panel, &OptimizerConfig::default()).unwrap();
//! assert!(fit.phi_hat.size_weighted(panel.sizes()) < 1.0);
//! ```

// `!(x < y)` is used on purpose so that NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod io;
pub mod model;
pub mod moments;
pub mod optim;
pub mod simulation;
pub mod stats;

#[cfg(test)]
mod test_support;

pub use error::{Result, RgivError};

pub mod prelude {
    pub use crate::error::{Result, RgivError};
    pub use crate::estimators::{
        giv_estimand_closed_form, giv_estimate, ols_estimate, rgiv_estimate, rgiv_restricted_estimate,
        two_step_estimate, EstimationResult, GivWeights, Method, OptimizerConfig,
    };
    pub use crate::inference::{
        aggregate_ci, attach_avar, coefficient_ci, homogeneity_test, j_test, rgiv_avar, scalar_ci, CiTarget,
        ConfidenceInterval, TestKind, TestResult,
    };
    pub use crate::model::{CoefficientVector, MomentVector, PanelData, ParameterSpace, ShockVariances};
    pub use crate::moments::{
        analytic_jacobian, cue_weight_matrix, gmm_objective, moment_function, population_moments, residuals,
        size_weighted, spurious_root, MomentStatistics,
    };
    pub use crate::simulation::{
        builtin_scenario, generate_panel, orthogonal_shock_panel, run_scenario, DgpSpec, EstimatorSet,
        ScenarioOptions, ScenarioReport, ShockDist, SizeRule,
    };
}
