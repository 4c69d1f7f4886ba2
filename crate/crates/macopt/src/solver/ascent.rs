use super::{kkt_residual, LinearConstraintSet, SolveOptions, SolveReport, SolveStatus};
use crate::{Error, Real};

/// Sufficient-increase fraction of the line search.
const C1: f64 = 1e-4;
/// Step-size ceiling.
const MAX_STEP: f64 = 1e6;
/// Halvings per line search before declaring a stall.
const MAX_HALVINGS: usize = 60;
/// Outer iterations between full KKT certifications.
const KKT_CADENCE: usize = 16;
/// Relative movement below which an accepted step counts as a stall.
const STALL_TOL: f64 = 1e-12;
/// Consecutive stalls tolerated before giving up on the crawl.
const STALL_LIMIT: usize = 32;
/// Objective-memory window of the nonmonotone line search.
const MEMORY: usize = 10;

/// Maximizes a concave differentiable function over a linear constraint set
/// by spectral projected-gradient ascent: Barzilai–Borwein step seeding with
/// a nonmonotone (watchdog-window) line search along the projected path.
///
/// `value` and `gradient` must describe the same function; `gradient` writes
/// into its output slice. The start point is projected onto the feasible set
/// first, so any finite `x0` of the right dimension is acceptable. The
/// returned point is the best feasible iterate seen.
pub fn maximize_concave_linear<R: Real>(
    value: impl Fn(&[R]) -> R,
    gradient: impl Fn(&[R], &mut [R]),
    cons: &LinearConstraintSet<R>,
    x0: &[R],
    options: &SolveOptions<R>,
) -> Result<(Vec<R>, SolveReport<R>), Error> {
    assert_eq!(x0.len(), cons.dim(), "start point dimension mismatch");
    let mut x = x0.to_vec();
    cons.repair(&mut x)?;

    let mut fx = value(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective);
    }

    let mut grad = vec![R::zero(); x.len()];
    let mut y = vec![R::zero(); x.len()];
    let mut step = R::one();
    let c1 = R::of(C1);

    let mut iterations = 0usize;
    let mut stall_streak = 0usize;
    let mut prev_x = vec![R::zero(); x.len()];
    let mut prev_grad = vec![R::zero(); x.len()];
    let mut have_prev = false;
    let mut best_x = x.clone();
    let mut best_f = fx;
    let mut recent = [fx; MEMORY];
    let mut recent_at = 0usize;

    while iterations < options.max_iter {
        iterations += 1;
        gradient(&x, &mut grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective);
        }

        // Spectral (Barzilai–Borwein) step seed: sizing the trial step to
        // the curvature seen along the last move kills the cross-valley
        // zigzag that plain doubling crawls through on narrow ridges.
        if have_prev {
            let mut dx_dx = R::zero();
            let mut dx_dg = R::zero();
            for k in 0..x.len() {
                let dx = x[k] - prev_x[k];
                dx_dx = dx_dx + dx * dx;
                // ⟨Δx, −Δ∇f⟩ ≥ 0 when f is concave
                dx_dg = dx_dg + dx * (prev_grad[k] - grad[k]);
            }
            if dx_dg > R::zero() && dx_dx > R::zero() {
                step = (dx_dx / dx_dg).min(R::of(MAX_STEP));
            }
        }
        prev_x.copy_from_slice(&x);
        prev_grad.copy_from_slice(&grad);
        have_prev = true;

        // Line search along the projected-gradient path y(t) = P(x + t·∇f).
        // The spectral step needs room to wander, so acceptance compares
        // against the worst objective in a short memory window rather than
        // demanding monotone ascent.
        let floor = recent.iter().copied().fold(fx, R::min);
        let mut accepted = false;
        let mut fy = fx;
        for _ in 0..=MAX_HALVINGS {
            for (yk, (xk, gk)) in y.iter_mut().zip(x.iter().zip(&grad)) {
                *yk = *xk + step * *gk;
            }
            cons.project(&mut y);
            if cons.violation(&y) > options.feasibility {
                // the projection ran out of sweeps on a distant query;
                // shorter steps stay near the feasible iterate
                step = step * R::of(0.5);
                continue;
            }
            let along = y
                .iter()
                .zip(&x)
                .zip(&grad)
                .fold(R::zero(), |acc, ((yk, xk), gk)| acc + (*yk - *xk) * *gk);
            fy = value(&y);
            if fy.is_finite() && fy >= floor + c1 * along {
                accepted = true;
                break;
            }
            step = step * R::of(0.5);
        }

        if accepted {
            let progress = y
                .iter()
                .zip(&x)
                .fold(R::zero(), |acc, (yk, xk)| acc.max((*yk - *xk).abs()));
            x.copy_from_slice(&y);
            fx = fy;
            step = (step * R::of(2.0)).min(R::of(MAX_STEP));
            recent[recent_at] = fx;
            recent_at = (recent_at + 1) % MEMORY;
            if fx > best_f {
                best_f = fx;
                best_x.copy_from_slice(&x);
            }

            if progress <= R::of(STALL_TOL) * (R::one() + fx.abs()) {
                stall_streak += 1;
            } else {
                stall_streak = 0;
            }
            if iterations % KKT_CADENCE != 0 && stall_streak < STALL_LIMIT {
                continue;
            }
        }

        // Either a cadence point, a stall, or a failed line search: certify.
        gradient(&x, &mut grad);
        let (stat, feas) = kkt_residual(&grad, cons, &x);
        if stat <= options.tolerance && feas <= options.feasibility {
            return Ok((
                x,
                SolveReport {
                    status: SolveStatus::Optimal,
                    objective: fx,
                    stationarity_residual: stat,
                    feasibility_residual: feas,
                    iterations,
                },
            ));
        }
        if !accepted {
            // No step of any size improves on the memory window; the
            // certificate above is the best statement about this point.
            break;
        }
        if stall_streak >= STALL_LIMIT {
            // The iterates have stopped moving and the certificate still
            // fails. Either the optimum sits on a corner this test cannot
            // decide or the point is genuinely non-stationary — more
            // iterations change neither; leave the verdict to the caller.
            break;
        }
    }

    // The nonmonotone search may end below its own high-water mark; hand
    // back the best point, certified where it stands.
    if best_f > fx {
        x.copy_from_slice(&best_x);
        fx = best_f;
    }
    gradient(&x, &mut grad);
    let (stat, feas) = kkt_residual(&grad, cons, &x);
    let status = if stat <= options.tolerance && feas <= options.feasibility {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIterations
    };
    Ok((
        x,
        SolveReport {
            status,
            objective: fx,
            stationarity_residual: stat,
            feasibility_residual: feas,
            iterations,
        },
    ))
}
