//! Aggregation algebra, residuals, the pairwise-orthogonality moment function,
//! the continuously-updated diagonal weight matrix, the GMM objective and its
//! Jacobian, plus the closed-form population moments.

use nalgebra::DMatrix;

use crate::error::{Result, RgivError};
use crate::model::{moment_count, unit_pairs, CoefficientVector, MomentVector, PanelData, ShockVariances};
use crate::stats::{mean_of, pairwise_sum};

/// Relative floor applied to weight-matrix denominators.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// `sum_i S_i x_i`.
pub fn size_weighted(x: &[f64], sizes: &[f64]) -> Result<f64> {
    if x.len() != sizes.len() {
        return Err(RgivError::Dimension(format!(
            "{} values for {} sizes",
            x.len(),
            sizes.len()
        )));
    }
    Ok(x.iter().zip(sizes).map(|(a, b)| a * b).sum())
}

/// `(1/n) sum_i x_i`.
pub fn equal_weighted(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn check_phi(panel: &PanelData, phi: &CoefficientVector) -> Result<()> {
    if phi.len() != panel.units() {
        return Err(RgivError::Dimension(format!(
            "{} coefficients for {} units",
            phi.len(),
            panel.units()
        )));
    }
    Ok(())
}

/// Implied shocks `u_it = r_it - phi_i r_St` (T x n).
pub fn residuals(panel: &PanelData, phi: &CoefficientVector) -> Result<DMatrix<f64>> {
    check_phi(panel, phi)?;
    let agg = panel.size_weighted_outcome();
    let (t, n) = (panel.periods(), panel.units());
    let mut u = DMatrix::zeros(t, n);
    for i in 0..n {
        let r = panel.unit(i);
        let p = phi.0[i];
        for (dst, (ri, rs)) in u.column_mut(i).iter_mut().zip(r.iter().zip(&agg)) {
            *dst = ri - p * rs;
        }
    }
    Ok(u)
}

/// Pairwise residual products, one row per period, columns in lexicographic
/// pair order (T x n(n-1)/2).
pub fn moment_function(panel: &PanelData, phi: &CoefficientVector) -> Result<DMatrix<f64>> {
    let u = residuals(panel, phi)?;
    Ok(pairwise_products(&u))
}

pub(crate) fn pairwise_products(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, n) = u.shape();
    let pairs = unit_pairs(n);
    let mut g = DMatrix::zeros(t, pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let (ui, uj) = (u.column(i), u.column(j));
        for (dst, (a, b)) in g.column_mut(k).iter_mut().zip(ui.iter().zip(uj.iter())) {
            *dst = a * b;
        }
    }
    g
}

/// Column means of a T x m moment matrix.
pub fn column_means(moments: &DMatrix<f64>) -> Vec<f64> {
    moments
        .column_iter()
        .map(|c| pairwise_sum(c.as_slice()) / c.len() as f64)
        .collect()
}

/// Diagonal CUE weight matrix `diag(mean g^2)^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub diagonal: Vec<f64>,
    /// Columns whose mean square fell below the floor.
    pub floored: Vec<usize>,
}

impl WeightMatrix {
    pub fn from_mean_squares(mean_squares: &[f64]) -> Self {
        let largest = mean_squares.iter().fold(0.0_f64, |m, v| m.max(*v));
        let floor = if largest > 0.0 { largest * WEIGHT_FLOOR } else { WEIGHT_FLOOR };
        let mut floored = Vec::new();
        let diagonal = mean_squares
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                if d < floor || d.is_nan() {
                    floored.push(k);
                    1.0 / floor
                } else {
                    1.0 / d
                }
            })
            .collect();
        Self { diagonal, floored }
    }

    pub fn is_degenerate(&self) -> bool {
        !self.floored.is_empty()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.diagonal))
    }

    /// `g' W g`.
    pub fn quadratic_form(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.diagonal).map(|(v, w)| v * v * w).sum()
    }
}

pub fn cue_weight_matrix(moments: &DMatrix<f64>) -> WeightMatrix {
    let mut buf = Vec::with_capacity(moments.nrows());
    let mean_squares: Vec<f64> = moments
        .column_iter()
        .map(|c| mean_of(&mut buf, c.len(), |t| c[t] * c[t]))
        .collect();
    WeightMatrix::from_mean_squares(&mean_squares)
}

/// Value of the CUE objective with its weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub mean_moments: Vec<f64>,
    pub weights: WeightMatrix,
}

/// `Q_T(phi) = gbar' W(phi) gbar`, evaluated directly from the per-period
/// moment matrix.
pub fn gmm_objective(panel: &PanelData, phi: &CoefficientVector) -> Result<Objective> {
    let g = moment_function(panel, phi)?;
    let mean_moments = column_means(&g);
    let weights = cue_weight_matrix(&g);
    if weights.is_degenerate() {
        log::warn!(
            "degenerate moment columns {:?}: weight denominators floored",
            weights.floored
        );
    }
    let value = weights.quadratic_form(&mean_moments);
    Ok(Objective {
        value,
        mean_moments,
        weights,
    })
}

/// Sample Jacobian `(1/T) sum_t d g(r_t, phi) / d phi` (m x n). Row for pair
/// `(i, j)` has `-mean(r_S u_j)` in column `i`, `-mean(r_S u_i)` in column `j`.
pub fn analytic_jacobian(panel: &PanelData, phi: &CoefficientVector) -> Result<DMatrix<f64>> {
    let u = residuals(panel, phi)?;
    let agg = panel.size_weighted_outcome();
    let t = panel.periods();
    let n = panel.units();
    let mut buf = Vec::with_capacity(t);
    let cross: Vec<f64> = (0..n)
        .map(|i| {
            let ui = u.column(i);
            -mean_of(&mut buf, t, |s| agg[s] * ui[s])
        })
        .collect();
    let mut jac = DMatrix::zeros(moment_count(n), n);
    for (k, (i, j)) in unit_pairs(n).into_iter().enumerate() {
        jac[(k, i)] = cross[j];
        jac[(k, j)] = cross[i];
    }
    Ok(jac)
}

/// Sample moment covariance `(1/T) sum_t g_t g_t'` (m x m).
pub fn moment_covariance(panel: &PanelData, phi: &CoefficientVector) -> Result<DMatrix<f64>> {
    let g = moment_function(panel, phi)?;
    Ok(outer_mean(&g))
}

pub(crate) fn outer_mean(g: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, m) = g.shape();
    let mut buf = Vec::with_capacity(t);
    let mut cov = DMatrix::zeros(m, m);
    for a in 0..m {
        let ca = g.column(a);
        for b in a..m {
            let cb = g.column(b);
            let v = mean_of(&mut buf, t, |s| ca[s] * cb[s]);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Exact expected moments `E[g(r_t, phi_trial)]` when the data follow
/// `phi_true` with independent shocks of variance `sigma2`.
pub fn population_moments(
    phi_true: &CoefficientVector,
    phi_trial: &CoefficientVector,
    sizes: &[f64],
    sigma2: &ShockVariances,
) -> Result<MomentVector> {
    let n = phi_true.len();
    if phi_trial.len() != n || sizes.len() != n || sigma2.as_slice().len() != n {
        return Err(RgivError::Dimension("population moment inputs differ in length".into()));
    }
    let phi_s = phi_true.size_weighted(sizes);
    if !(phi_s < 1.0) {
        return Err(RgivError::InvalidParameter(format!(
            "true phi_S = {phi_s} must be below 1"
        )));
    }
    let mult = 1.0 - phi_s;
    let c1 = sigma2.size_concentration(sizes);
    let s2 = sigma2.as_slice();
    let d: Vec<f64> = phi_true.0.iter().zip(&phi_trial.0).map(|(a, b)| a - b).collect();
    let values = unit_pairs(n)
        .into_iter()
        .map(|(i, j)| {
            d[i] * sizes[j] * s2[j] / mult
                + d[j] * sizes[i] * s2[i] / mult
                + d[i] * d[j] * c1 / (mult * mult)
        })
        .collect();
    MomentVector::new(n, values)
}

/// Second root of the population moments, `phi_i + 2 S_i sigma_i^2 (1 - phi_S) / C_1`.
/// Its size-weighted value is `2 - phi_S`, outside the admissible region.
pub fn spurious_root(
    phi_true: &CoefficientVector,
    sizes: &[f64],
    sigma2: &ShockVariances,
) -> CoefficientVector {
    let phi_s = phi_true.size_weighted(sizes);
    let c1 = sigma2.size_concentration(sizes);
    phi_true
        .0
        .iter()
        .zip(sizes.iter().zip(sigma2.as_slice()))
        .map(|(p, (s, v))| p + 2.0 * s * v * (1.0 - phi_s) / c1)
        .collect::<Vec<_>>()
        .into()
}

/// Precomputed second and fourth cross moments of `(r_i, r_j, r_S)` that make
/// the CUE objective and its gradient O(m) per evaluation.
///
/// With `u_i = r_i - phi_i r_S`, `mean(u_i u_j) = d(phi_i)' H_ij d(phi_j)` for
/// `d(p) = [1, -p]`, and `mean(u_i^2 u_j^2) = c(phi_i)' F_ij c(phi_j)` for
/// `c(p) = [1, -2p, p^2]`, where `H_ij` and `F_ij` hold the sample cross
/// moments.
#[derive(Debug, Clone)]
pub struct MomentStatistics {
    units: usize,
    periods: usize,
    pairs: Vec<(usize, usize)>,
    second: Vec<[[f64; 2]; 2]>,
    fourth: Vec<[[f64; 3]; 3]>,
}

impl MomentStatistics {
    pub fn new(panel: &PanelData) -> Self {
        let n = panel.units();
        let t = panel.periods();
        let agg = panel.size_weighted_outcome();
        let pairs = unit_pairs(n);
        let mut buf = Vec::with_capacity(t);

        // powers[i][a] = r_i^(2-a) r_S^a per period, a = 0, 1, 2
        let powers: Vec<[Vec<f64>; 3]> = (0..n)
            .map(|i| {
                let r = panel.unit(i);
                [
                    r.iter().map(|x| x * x).collect(),
                    r.iter().zip(&agg).map(|(x, s)| x * s).collect(),
                    agg.iter().map(|s| s * s).collect(),
                ]
            })
            .collect();
        let ss = mean_of(&mut buf, t, |s| agg[s] * agg[s]);
        let rs: Vec<f64> = (0..n)
            .map(|i| {
                let r = panel.unit(i);
                mean_of(&mut buf, t, |s| r[s] * agg[s])
            })
            .collect();

        let mut second = Vec::with_capacity(pairs.len());
        let mut fourth = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            let (ri, rj) = (panel.unit(i), panel.unit(j));
            let rr = mean_of(&mut buf, t, |s| ri[s] * rj[s]);
            second.push([[rr, rs[i]], [rs[j], ss]]);
            let mut f = [[0.0; 3]; 3];
            for (a, row) in f.iter_mut().enumerate() {
                for (b, cell) in row.iter_mut().enumerate() {
                    let (pa, pb) = (&powers[i][a], &powers[j][b]);
                    *cell = mean_of(&mut buf, t, |s| pa[s] * pb[s]);
                }
            }
            fourth.push(f);
        }
        Self {
            units: n,
            periods: t,
            pairs,
            second,
            fourth,
        }
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Column means of the moment function.
    pub fn mean_moments(&self, phi: &[f64]) -> Vec<f64> {
        self.pairs
            .iter()
            .zip(&self.second)
            .map(|(&(i, j), h)| bilinear2(h, &lin(phi[i]), &lin(phi[j])))
            .collect()
    }

    /// Column means of the squared moment function.
    pub fn mean_square_moments(&self, phi: &[f64]) -> Vec<f64> {
        self.pairs
            .iter()
            .zip(&self.fourth)
            .map(|(&(i, j), f)| bilinear3(f, &quad(phi[i]), &quad(phi[j])))
            .collect()
    }

    pub fn weights(&self, phi: &[f64]) -> WeightMatrix {
        WeightMatrix::from_mean_squares(&self.mean_square_moments(phi))
    }

    /// CUE objective `Q_T(phi)`.
    pub fn objective(&self, phi: &[f64]) -> f64 {
        let g = self.mean_moments(phi);
        self.weights(phi).quadratic_form(&g)
    }

    /// CUE objective and its exact gradient, including the derivative of the
    /// continuously-updated weights.
    pub fn objective_and_gradient(&self, phi: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; self.units];
        let v_all = self.mean_square_moments(phi);
        let w = WeightMatrix::from_mean_squares(&v_all);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let h = &self.second[k];
            let f = &self.fourth[k];
            let (di, dj) = (lin(phi[i]), lin(phi[j]));
            let g = bilinear2(h, &di, &dj);
            let wk = w.diagonal[k];
            value += g * g * wk;
            let dg_i = bilinear2(h, &[0.0, -1.0], &dj);
            let dg_j = bilinear2(h, &di, &[0.0, -1.0]);
            let floored = w.floored.contains(&k);
            let (dv_i, dv_j) = if floored {
                (0.0, 0.0)
            } else {
                let (ci, cj) = (quad(phi[i]), quad(phi[j]));
                (
                    bilinear3(f, &dquad(phi[i]), &cj),
                    bilinear3(f, &ci, &dquad(phi[j])),
                )
            };
            // d(g^2 / v) = 2 g dg / v - g^2 dv / v^2
            grad[i] += 2.0 * g * dg_i * wk - g * g * dv_i * wk * wk;
            grad[j] += 2.0 * g * dg_j * wk - g * g * dv_j * wk * wk;
        }
        (value, grad)
    }

    /// Mean Jacobian of the moment function (m x n).
    pub fn jacobian(&self, phi: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.pairs.len(), self.units);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let h = &self.second[k];
            jac[(k, i)] = bilinear2(h, &[0.0, -1.0], &lin(phi[j]));
            jac[(k, j)] = bilinear2(h, &lin(phi[i]), &[0.0, -1.0]);
        }
        jac
    }
}

fn lin(p: f64) -> [f64; 2] {
    [1.0, -p]
}

fn quad(p: f64) -> [f64; 3] {
    [1.0, -2.0 * p, p * p]
}

fn dquad(p: f64) -> [f64; 3] {
    [0.0, -2.0, 2.0 * p]
}

fn bilinear2(m: &[[f64; 2]; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let mut s = 0.0;
    for (x, row) in a.iter().zip(m) {
        for (y, v) in b.iter().zip(row) {
            s += x * v * y;
        }
    }
    s
}

fn bilinear3(m: &[[f64; 3]; 3], a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for (x, row) in a.iter().zip(m) {
        for (y, v) in b.iter().zip(row) {
            s += x * v * y;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{hadamard_panel, random_panel};

    const S3: [f64; 3] = [0.2, 0.3, 0.5];

    #[test]
    fn size_weighted_examples() {
        assert!((size_weighted(&[1.0, 1.0, 1.0], &S3).unwrap() - 1.0).abs() < 1e-15);
        assert!((size_weighted(&[0.6, 0.3, 0.3], &S3).unwrap() - 0.36).abs() < 1e-15);
        assert!((size_weighted(&[1.0, 0.0, 0.0], &S3).unwrap() - 0.2).abs() < 1e-15);
        assert!(size_weighted(&[1.0, 0.0], &S3).is_err());
        assert!((equal_weighted(&[0.6, 0.3, 0.3]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn residuals_single_row() {
        let panel = PanelData::from_rows(&[vec![1.0, 2.0, 3.0]], S3.to_vec()).unwrap();
        let u = residuals(&panel, &CoefficientVector::homogeneous(0.5, 3)).unwrap();
        let expected = [-0.15, 0.85, 1.85];
        for (a, b) in u.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        let zero = residuals(&panel, &CoefficientVector::homogeneous(0.0, 3)).unwrap();
        assert_eq!(zero.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn moment_products_and_counts() {
        let u = DMatrix::from_row_slice(1, 3, &[2.0, 3.0, 5.0]);
        assert_eq!(pairwise_products(&u).as_slice(), &[6.0, 10.0, 15.0]);
        let panel = random_panel(11, 20, 1);
        let g = moment_function(&panel, &CoefficientVector::homogeneous(0.3, 11)).unwrap();
        assert_eq!(g.ncols(), 55);
    }

    #[test]
    fn weight_matrix_entries() {
        let g = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        assert_eq!(cue_weight_matrix(&g).diagonal, vec![1.0]);
        let g2 = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 0.5, -0.5, 1.0]);
        let w = cue_weight_matrix(&g2);
        let w3 = cue_weight_matrix(&(g2 * 3.0));
        for (a, b) in w.diagonal.iter().zip(&w3.diagonal) {
            assert!((a / 9.0 - b).abs() < 1e-15 * a);
        }
    }

    #[test]
    fn weight_floor_on_zero_column() {
        let g = DMatrix::from_column_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let w = cue_weight_matrix(&g);
        assert_eq!(w.floored, vec![1]);
        assert!(w.diagonal[1].is_finite());
        assert_eq!(w.quadratic_form(&[1.0, 0.0]), 1.0);
    }

    #[test]
    fn objective_zero_at_exact_root() {
        let phi = CoefficientVector::new(vec![0.3, 0.1, 0.5, -0.2]);
        let panel = hadamard_panel(&phi, &[0.4, 0.3, 0.2, 0.1], &[1.0, 2.0, 0.5, 1.5]);
        let obj = gmm_objective(&panel, &phi).unwrap();
        assert!(obj.value < 1e-28, "{}", obj.value);
    }

    #[test]
    fn sufficient_statistics_match_direct_route() {
        let panel = random_panel(5, 300, 7);
        let stats = MomentStatistics::new(&panel);
        for phi in [vec![0.1, 0.2, 0.3, 0.4, -0.5], vec![2.0, -1.0, 0.0, 0.5, 0.7]] {
            let cv = CoefficientVector::new(phi.clone());
            let direct = gmm_objective(&panel, &cv).unwrap().value;
            let fast = stats.objective(&phi);
            assert!((direct - fast).abs() <= 1e-10 * direct.abs(), "{direct} vs {fast}");
            let j1 = analytic_jacobian(&panel, &cv).unwrap();
            let j2 = stats.jacobian(&phi);
            assert!((j1 - j2).abs().max() < 1e-12);
        }
    }

    #[test]
    fn cue_gradient_matches_finite_differences() {
        let panel = random_panel(4, 200, 3);
        let stats = MomentStatistics::new(&panel);
        let phi = [0.2, -0.1, 0.4, 0.3];
        let (_, grad) = stats.objective_and_gradient(&phi);
        for k in 0..4 {
            let h = 1e-6;
            let mut up = phi;
            let mut dn = phi;
            up[k] += h;
            dn[k] -= h;
            let fd = (stats.objective(&up) - stats.objective(&dn)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn jacobian_sparsity() {
        let panel = random_panel(6, 50, 2);
        let jac = analytic_jacobian(&panel, &CoefficientVector::homogeneous(0.2, 6)).unwrap();
        for k in 0..6 {
            let nz = jac.column(k).iter().filter(|v| **v != 0.0).count();
            assert_eq!(nz, 5);
        }
    }

    #[test]
    fn population_moments_roots() {
        let phi = CoefficientVector::new(vec![0.6, 0.3, 0.3]);
        let s2 = ShockVariances::new(vec![1.0, 2.0, 0.5]).unwrap();
        let at_true = population_moments(&phi, &phi, &S3, &s2).unwrap();
        assert_eq!(at_true.max_abs(), 0.0);
        let check = spurious_root(&phi, &S3, &s2);
        let at_check = population_moments(&phi, &check, &S3, &s2).unwrap();
        assert!(at_check.max_abs() < 1e-12);
        let phi_s = phi.size_weighted(&S3);
        assert!((check.size_weighted(&S3) - (2.0 - phi_s)).abs() < 1e-12);
    }
}
