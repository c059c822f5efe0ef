use crate::model::{CoefficientVector, PanelData};
use crate::simulation::{generate_panel, orthogonal_shock_panel, DgpSpec, ShockDist, SizeRule};

pub fn hadamard_panel(phi: &CoefficientVector, sizes: &[f64], sigma: &[f64]) -> PanelData {
    orthogonal_shock_panel(phi, sizes, sigma).unwrap()
}

/// Heterogeneous Gaussian panel with power-law sizes.
pub fn random_panel(n: usize, periods: usize, seed: u64) -> PanelData {
    let spec = DgpSpec {
        name: "unit-test".into(),
        periods,
        phi: (0..n).map(|i| 0.1 + 0.05 * i as f64).collect(),
        sigma: (0..n).map(|i| 1.0 + 0.1 * i as f64).collect(),
        size_rule: SizeRule::PowerLaw { zeta: 1.04 },
        shock_dist: ShockDist::Gaussian,
        seed,
    };
    generate_panel(&spec, 0).unwrap()
}
