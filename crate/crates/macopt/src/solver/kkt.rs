use super::constraints::{dot, LinearConstraintSet};
use crate::Real;

/// Relative slack below which a constraint counts as active.
const ACTIVE_TOL: f64 = 1e-7;

/// First-order optimality residuals for a concave maximization at `x`.
///
/// Returns `(stationarity, feasibility)`: feasibility is the worst constraint
/// violation, and stationarity is the infinity-norm of the part of the
/// gradient that no nonnegative combination of active outward normals can
/// absorb. Both are 0 exactly at a constrained maximum.
pub fn kkt_residual<R: Real>(grad: &[R], cons: &LinearConstraintSet<R>, x: &[R]) -> (R, R) {
    let dim = cons.dim();
    debug_assert_eq!(grad.len(), dim);
    debug_assert_eq!(x.len(), dim);
    let feasibility = cons.violation(x).max(R::zero());

    let tol = R::of(ACTIVE_TOL);
    let mut normals: Vec<Vec<R>> = Vec::new();
    for (a, b) in &cons.rows {
        if *b - dot(a, x) <= tol * (R::one() + b.abs()) {
            normals.push(a.clone());
        }
    }
    for k in 0..dim {
        let (lo, hi) = (cons.lower[k], cons.upper[k]);
        if hi.is_finite() && hi - x[k] <= tol * (R::one() + hi.abs()) {
            let mut e = vec![R::zero(); dim];
            e[k] = R::one();
            normals.push(e);
        }
        if lo.is_finite() && x[k] - lo <= tol * (R::one() + lo.abs()) {
            let mut e = vec![R::zero(); dim];
            e[k] = -R::one();
            normals.push(e);
        }
    }

    let residual = if normals.is_empty() {
        grad.to_vec()
    } else {
        nnls_residual(&normals, grad)
    };
    let stationarity = residual.iter().fold(R::zero(), |acc, r| acc.max(r.abs()));
    (stationarity, feasibility)
}

/// Residual of `min_{λ ≥ 0} ‖g − Σ λ_j n_j‖₂` by the Lawson–Hanson active-set
/// scheme. The column count here is tiny (active constraints only), so dense
/// normal equations are plenty.
fn nnls_residual<R: Real>(normals: &[Vec<R>], g: &[R]) -> Vec<R> {
    let m = normals.len();
    let mut lambda = vec![R::zero(); m];
    let mut passive = vec![false; m];
    let mut residual = g.to_vec();

    let scale = g.iter().fold(R::one(), |acc, v| acc.max(v.abs()));
    let eps = R::of(1e-12) * scale;

    for _ in 0..(3 * m + 10) {
        // Most-improving inactive column.
        let mut best: Option<(usize, R)> = None;
        for (j, n) in normals.iter().enumerate() {
            if passive[j] {
                continue;
            }
            let w = dot(n, &residual);
            if w > eps && best.map_or(true, |(_, bw)| w > bw) {
                best = Some((j, w));
            }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;

        // Inner loop: restore λ ≥ 0 on the passive set. Each blocked round
        // drops at least one column in exact arithmetic; the cap only guards
        // against float-edge cycling (the λ kept so far stays a valid dual
        // point, so the residual can only be overestimated, never under).
        for _ in 0..(2 * m + 2) {
            let z = solve_subproblem(normals, g, &passive);
            let mut alpha = R::one();
            let mut blocked = false;
            for (j, &zj) in z.iter().enumerate() {
                if passive[j] && zj <= R::zero() {
                    let denom = lambda[j] - zj;
                    if denom > R::zero() {
                        alpha = alpha.min(lambda[j] / denom);
                    } else {
                        alpha = R::zero();
                    }
                    blocked = true;
                }
            }
            if !blocked {
                lambda = z;
                break;
            }
            for j in 0..m {
                if passive[j] {
                    lambda[j] = lambda[j] + alpha * (z[j] - lambda[j]);
                    if lambda[j] <= R::of(1e-14) {
                        lambda[j] = R::zero();
                        passive[j] = false;
                    }
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }

        for (r, gk) in residual.iter_mut().zip(g) {
            *r = *gk;
        }
        for (j, n) in normals.iter().enumerate() {
            if lambda[j] != R::zero() {
                for (r, nk) in residual.iter_mut().zip(n) {
                    *r = *r - lambda[j] * *nk;
                }
            }
        }
    }
    residual
}

/// Least squares `min ‖g − Σ_{j∈passive} z_j n_j‖` via normal equations;
/// entries outside the passive set come back as 0.
fn solve_subproblem<R: Real>(normals: &[Vec<R>], g: &[R], passive: &[bool]) -> Vec<R> {
    let idx: Vec<usize> = (0..normals.len()).filter(|&j| passive[j]).collect();
    let k = idx.len();
    let mut a = vec![vec![R::zero(); k]; k];
    let mut rhs = vec![R::zero(); k];
    for (p, &jp) in idx.iter().enumerate() {
        rhs[p] = dot(&normals[jp], g);
        for (q, &jq) in idx.iter().enumerate() {
            a[p][q] = dot(&normals[jp], &normals[jq]);
        }
    }
    // Dead-pivot threshold: partial pivoting picks the column max, so a pivot
    // under this means the whole remaining column is negligible (a dependent
    // normal) and the column can be dropped rather than ridged — exact faces
    // then certify with residual 0 instead of a ridge-sized bias.
    let piv_tol =
        R::of(1e-13) * (R::one() + (0..k).fold(R::zero(), |acc, p| acc.max(a[p][p].abs())));

    // Gaussian elimination with partial pivoting.
    let mut z = rhs;
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        z.swap(col, pivot);
        let diag = a[col][col];
        if diag.abs() <= piv_tol {
            continue;
        }
        for row in col + 1..k {
            let factor = a[row][col] / diag;
            if factor == R::zero() {
                continue;
            }
            for c in col..k {
                a[row][c] = a[row][c] - factor * a[col][c];
            }
            z[row] = z[row] - factor * z[col];
        }
    }
    for col in (0..k).rev() {
        let mut acc = z[col];
        for c in col + 1..k {
            acc = acc - a[col][c] * z[c];
        }
        z[col] = if a[col][col].abs() > piv_tol { acc / a[col][col] } else { R::zero() };
    }

    let mut full = vec![R::zero(); normals.len()];
    for (p, &jp) in idx.iter().enumerate() {
        full[jp] = z[p];
    }
    full
}
