//! Data model: the observed panel, spillover coefficients, shock variances,
//! pairwise moment vectors and the admissible parameter space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RgivError};

/// Tolerance on `sum(sizes) == 1`.
pub const SIZE_SUM_TOL: f64 = 1e-10;

/// Observed outcomes `r_it` (T rows, n unit columns) together with the fixed
/// unit sizes `S_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    outcomes: DMatrix<f64>,
    sizes: Vec<f64>,
}

impl PanelData {
    /// Validates the panel: `T >= 1`, `n >= 3`, finite outcomes, sizes in
    /// (0, 1) summing to one. Sizes are never rescaled here.
    pub fn new(outcomes: DMatrix<f64>, sizes: Vec<f64>) -> Result<Self> {
        let (t, n) = outcomes.shape();
        if t < 1 {
            return Err(RgivError::InvalidPanel("panel has no periods".into()));
        }
        if n < 3 {
            return Err(RgivError::InvalidPanel(format!(
                "at least three units are required, got {n}"
            )));
        }
        if sizes.len() != n {
            return Err(RgivError::Dimension(format!(
                "{} sizes for {n} units",
                sizes.len()
            )));
        }
        validate_sizes(&sizes)?;
        if let Some(pos) = outcomes.iter().position(|v| !v.is_finite()) {
            return Err(RgivError::InvalidPanel(format!(
                "non-finite outcome at period {}, unit {}",
                pos % t,
                pos / t
            )));
        }
        Ok(Self { outcomes, sizes })
    }

    /// Builds a panel from row-major period records.
    pub fn from_rows(rows: &[Vec<f64>], sizes: Vec<f64>) -> Result<Self> {
        let n = sizes.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(RgivError::Dimension(format!(
                "row {bad} has {} entries, expected {n}",
                rows[bad].len()
            )));
        }
        let outcomes = DMatrix::from_fn(rows.len(), n, |t, i| rows[t][i]);
        Self::new(outcomes, sizes)
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn periods(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn units(&self) -> usize {
        self.outcomes.ncols()
    }

    /// Outcome series of one unit (contiguous, the matrix is column-major).
    pub fn unit(&self, i: usize) -> &[f64] {
        let t = self.periods();
        &self.outcomes.as_slice()[i * t..(i + 1) * t]
    }

    /// Size-weighted aggregate outcome `r_St` for every period.
    pub fn size_weighted_outcome(&self) -> Vec<f64> {
        let mut agg = vec![0.0; self.periods()];
        for (i, s) in self.sizes.iter().enumerate() {
            for (a, r) in agg.iter_mut().zip(self.unit(i)) {
                *a += s * r;
            }
        }
        agg
    }

    /// Returns a copy with every outcome multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.outcomes * c, self.sizes.clone())
    }

    /// Reorders units by `perm` (new unit `k` is old unit `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.units();
        if perm.len() != n {
            return Err(RgivError::Dimension("permutation length".into()));
        }
        let outcomes = DMatrix::from_fn(self.periods(), n, |t, k| self.outcomes[(t, perm[k])]);
        let sizes = perm.iter().map(|&p| self.sizes[p]).collect();
        Self::new(outcomes, sizes)
    }
}

fn validate_sizes(sizes: &[f64]) -> Result<()> {
    if let Some((i, s)) = sizes
        .iter()
        .enumerate()
        .find(|(_, s)| !(s.is_finite() && **s > 0.0 && **s < 1.0))
    {
        return Err(RgivError::InvalidPanel(format!(
            "size of unit {i} is {s}, must lie in (0, 1)"
        )));
    }
    let total: f64 = sizes.iter().sum();
    if (total - 1.0).abs() > SIZE_SUM_TOL {
        return Err(RgivError::InvalidPanel(format!(
            "sizes sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Spillover coefficients `phi_i`, one per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientVector(pub Vec<f64>);

impl CoefficientVector {
    pub fn new(phi: Vec<f64>) -> Self {
        Self(phi)
    }

    pub fn homogeneous(value: f64, n: usize) -> Self {
        Self(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Size-weighted coefficient `phi_S`.
    pub fn size_weighted(&self, sizes: &[f64]) -> f64 {
        self.0.iter().zip(sizes).map(|(p, s)| p * s).sum()
    }

    /// Equal-weighted coefficient `phi_E`.
    pub fn equal_weighted(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for CoefficientVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Idiosyncratic shock variances `sigma_i^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShockVariances(Vec<f64>);

impl ShockVariances {
    pub fn new(sigma2: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = sigma2
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(RgivError::InvalidParameter(format!(
                "shock variance of unit {i} is {v}, must be positive"
            )));
        }
        Ok(Self(sigma2))
    }

    pub fn from_std_devs(sigma: &[f64]) -> Result<Self> {
        Self::new(sigma.iter().map(|s| s * s).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `C_1 = sum_i S_i^2 sigma_i^2`.
    pub fn size_concentration(&self, sizes: &[f64]) -> f64 {
        self.0.iter().zip(sizes).map(|(v, s)| s * s * v).sum()
    }
}

/// Number of pairwise moments for `n` units.
pub fn moment_count(n: usize) -> usize {
    n * (n.saturating_sub(1)) / 2
}

/// Unit pairs `(i, j)`, `i < j`, in lexicographic order. This ordering is the
/// layout of every moment vector in the crate.
pub fn unit_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(moment_count(n));
    for i in 0..n {
        for j in i + 1..n {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Position of pair `(i, j)` (with `i < j`) in the lexicographic layout.
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Pairwise moment values ordered as [`unit_pairs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    units: usize,
    values: Vec<f64>,
}

impl MomentVector {
    pub fn new(units: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != moment_count(units) {
            return Err(RgivError::Dimension(format!(
                "{} moments for {units} units, expected {}",
                values.len(),
                moment_count(units)
            )));
        }
        Ok(Self { units, values })
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.values[pair_index(a, b, self.units)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Compact box of admissible coefficients together with the aggregate margin
/// `tau`: a vector is admissible when it lies in the box and
/// `phi_S <= 1 - tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub margin: f64,
}

impl ParameterSpace {
    pub const DEFAULT_BOUND: f64 = 10.0;
    pub const DEFAULT_MARGIN: f64 = 1e-6;

    pub fn new(box_lo: Vec<f64>, box_hi: Vec<f64>, margin: f64) -> Result<Self> {
        if box_lo.len() != box_hi.len() {
            return Err(RgivError::Dimension("box bound lengths differ".into()));
        }
        if box_lo.iter().zip(&box_hi).any(|(l, h)| !(l < h)) {
            return Err(RgivError::Config("box_lo must be below box_hi".into()));
        }
        if !(margin > 0.0) {
            return Err(RgivError::Config(format!("margin must be positive, got {margin}")));
        }
        Ok(Self {
            box_lo,
            box_hi,
            margin,
        })
    }

    /// Symmetric box `[-bound, bound]^n`.
    pub fn symmetric(n: usize, bound: f64, margin: f64) -> Result<Self> {
        Self::new(vec![-bound; n], vec![bound; n], margin)
    }

    pub fn dim(&self) -> usize {
        self.box_lo.len()
    }

    /// Upper bound on `phi_S`.
    pub fn aggregate_cap(&self) -> f64 {
        1.0 - self.margin
    }

    pub fn contains(&self, phi: &[f64], sizes: &[f64]) -> bool {
        phi.iter()
            .zip(self.box_lo.iter().zip(&self.box_hi))
            .all(|(p, (l, h))| p >= l && p <= h)
            && dot(phi, sizes) <= self.aggregate_cap() + 1e-15
    }

    /// Checks that the box intersects the half-space `phi_S <= 1 - tau`.
    pub fn check_feasible(&self, sizes: &[f64]) -> Result<()> {
        if dot(&self.box_lo, sizes) > self.aggregate_cap() {
            return Err(RgivError::Config(
                "box lies entirely outside phi_S <= 1 - tau".into(),
            ));
        }
        Ok(())
    }

    /// Euclidean projection onto the admissible set. The set is a box cut by
    /// one half-space; the projection is `clamp(x - lambda * S)` with the
    /// multiplier found by bisection.
    pub fn project(&self, x: &[f64], sizes: &[f64]) -> Vec<f64> {
        let clamp_at = |lambda: f64| -> Vec<f64> {
            x.iter()
                .zip(sizes)
                .zip(self.box_lo.iter().zip(&self.box_hi))
                .map(|((v, s), (l, h))| (v - lambda * s).clamp(*l, *h))
                .collect()
        };
        let cap = self.aggregate_cap();
        let inside = clamp_at(0.0);
        if dot(&inside, sizes) <= cap {
            return inside;
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while dot(&clamp_at(hi), sizes) > cap {
            hi *= 2.0;
            if hi > 1e12 {
                break;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if dot(&clamp_at(mid), sizes) > cap {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 * hi.max(1.0) {
                break;
            }
        }
        clamp_at(hi)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
