//! Minimizers used by the estimators: a Nelder-Mead simplex search with an
//! infeasibility barrier, a projected quasi-Newton polish, and Brent's method
//! for scalar problems.

use crate::model::{dot, ParameterSpace};

/// Result of a single local minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMinimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iters: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub initial_step: f64,
}

/// Nelder-Mead with standard coefficients (1, 2, 0.5, 0.5). Points outside the
/// admissible set evaluate to `+inf`, so the simplex never leaves it.
pub fn nelder_mead<F>(
    f: F,
    start: &[f64],
    space: &ParameterSpace,
    sizes: &[f64],
    opts: SimplexOptions,
) -> LocalMinimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let eval = |x: &[f64]| -> f64 {
        if space.contains(x, sizes) {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        } else {
            f64::INFINITY
        }
    };

    let x0 = space.project(start, sizes);
    let mut simplex: Vec<Vec<f64>> = vec![x0.clone()];
    for k in 0..n {
        let mut v = x0.clone();
        let step = opts.initial_step * x0[k].abs().max(1.0);
        v[k] += step;
        if !space.contains(&v, sizes) {
            v[k] = x0[k] - step;
        }
        if !space.contains(&v, sizes) {
            v = space.project(&v, sizes);
        }
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread_f = (values[n] - values[0]).abs();
        let spread_x = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread_f <= opts.f_tol && spread_x <= opts.x_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for (v, fv) in simplex.iter_mut().zip(values.iter_mut()).skip(1) {
            for (a, b) in v.iter_mut().zip(&best) {
                *a = b + 0.5 * (*a - b);
            }
            *fv = eval(v);
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    LocalMinimum {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PolishOptions {
    pub max_iters: usize,
    pub f_tol: f64,
    pub x_tol: f64,
}

/// Projected BFGS: steps `x <- P(x - alpha H grad)` with backtracking on the
/// projection arc, falling back to projected steepest descent when the
/// quasi-Newton direction does not decrease the objective.
pub fn projected_bfgs<F>(
    f: F,
    start: &[f64],
    space: &ParameterSpace,
    sizes: &[f64],
    opts: PolishOptions,
) -> LocalMinimum
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = start.len();
    let mut x = space.project(start, sizes);
    let (mut fx, mut gx) = f(&x);
    let mut h = identity(n);
    let mut iterations = 0;
    let mut converged = false;
    if !fx.is_finite() {
        return LocalMinimum {
            x,
            value: fx,
            iterations,
            converged,
        };
    }

    while iterations < opts.max_iters {
        iterations += 1;
        let direction = mat_vec(&h, &gx);
        let mut accepted = None;
        for use_newton in [true, false] {
            let dir = if use_newton { direction.clone() } else { gx.clone() };
            let scale = if use_newton {
                1.0
            } else {
                1.0 / gx.iter().map(|v| v.abs()).fold(1e-300, f64::max)
            };
            let mut alpha = scale;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a - alpha * d).collect();
                let trial = space.project(&trial, sizes);
                let (ft, gt) = f(&trial);
                let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                // Armijo condition on the projected step
                if ft.is_finite() && ft <= fx + 1e-4 * dot(&gx, &step) {
                    accepted = Some((trial, ft, gt, step));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fnew, gnew, step)) = accepted else {
            converged = true;
            break;
        };
        let df = fx - fnew;
        let dx = step.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let y: Vec<f64> = gnew.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &y);
        if sy > 1e-300 {
            bfgs_update(&mut h, &step, &y, sy);
        } else {
            h = identity(n);
        }
        x = xn;
        fx = fnew;
        gx = gnew;
        if df <= opts.f_tol && dx <= opts.x_tol {
            converged = true;
            break;
        }
        let pg = projected_gradient_norm(&x, &gx, space, sizes);
        if pg <= 1e-14 * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }
    LocalMinimum {
        x,
        value: fx,
        iterations,
        converged,
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], space: &ParameterSpace, sizes: &[f64]) -> f64 {
    let trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    let p = space.project(&trial, sizes);
    p.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let rho = 1.0 / sy;
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Brent's method on `[lo, hi]`, started from a coarse grid scan so the
/// bracket holds the best grid point.
pub fn scalar_minimize<F>(f: F, lo: f64, hi: f64, grid: usize, tol: f64, max_iters: usize) -> LocalMinimum
where
    F: Fn(f64) -> f64,
{
    let grid = grid.max(3);
    let step = (hi - lo) / (grid - 1) as f64;
    let pts: Vec<f64> = (0..grid).map(|k| lo + step * k as f64).collect();
    let vals: Vec<f64> = pts.iter().map(|&p| sanitize(f(p))).collect();
    let best = (0..grid)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    let a0 = pts[best.saturating_sub(1)];
    let b0 = pts[(best + 1).min(grid - 1)];
    let (x, fx, iterations, converged) = brent(|p| sanitize(f(p)), a0, b0, tol, max_iters);
    let (x, fx) = if vals[best] < fx { (pts[best], vals[best]) } else { (x, fx) };
    LocalMinimum {
        x: vec![x],
        value: fx,
        iterations,
        converged,
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn brent<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64, max_iters: usize) -> (f64, f64, usize, bool) {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for iter in 0..max_iters {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-15;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return (x, fx, iter, true);
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx, max_iters, false)
}
