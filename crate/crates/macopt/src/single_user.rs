//! Optimal one-user transmission schedule: how long to transmit, and at what
//! battery drain, to maximize `τ·ln(1 + g(d) − γ)` under the energy budget
//! `τ·d ≤ B` within a frame of length `T`.
//!
//! Concentrating the whole budget on one contiguous burst at constant drain
//! is optimal (the rate is concave in the drain), which collapses the
//! schedule to the scalar search over `τ` implemented here.

use crate::battery::UserParams;
use crate::solver::maximize_concave_1d;
use crate::{Error, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct SingleUserProblem<R: Real> {
    pub user: UserParams<R>,
    /// Frame length T, seconds.
    pub horizon: R,
}

impl<R: Real> SingleUserProblem<R> {
    pub fn new(user: UserParams<R>, horizon: R) -> Result<Self, Error> {
        if !horizon.is_finite() || horizon <= R::zero() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive (got {horizon})"
            )));
        }
        Ok(SingleUserProblem { user, horizon })
    }

    /// Total nats sent when transmitting for `tau` seconds and spending the
    /// whole budget (drain capped at the battery's peak).
    fn rate_at(&self, tau: R) -> R {
        let d0 = self.user.model.peak_discharge();
        let d = (self.user.battery_energy / tau).min(d0);
        let p = self.user.model.g(d) - self.user.circuit_cost;
        if p <= R::zero() {
            R::zero()
        } else {
            tau * p.ln_1p()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleUserSolution<R: Real> {
    /// τ*, seconds spent transmitting, in [0, T].
    pub duration: R,
    /// d*, battery drain while transmitting, in [0, D0].
    pub discharge: R,
    /// P* = g(d*) − γ, watts at the amplifier.
    pub transmit_power: R,
    /// Total nats over the frame.
    pub rate: R,
    /// False when the battery cannot out-deliver the circuit cost.
    pub feasible: bool,
}

impl<R: Real> SingleUserSolution<R> {
    fn infeasible() -> Self {
        SingleUserSolution {
            duration: R::zero(),
            discharge: R::zero(),
            transmit_power: R::zero(),
            rate: R::zero(),
            feasible: false,
        }
    }
}

/// Maximizes `τ·ln(1 + g(min(B/τ, D0)) − γ)` over `τ ∈ (0, T]`.
///
/// `tol` is the duration tolerance of the underlying golden-section search.
pub fn solve<R: Real>(problem: &SingleUserProblem<R>, tol: R) -> SingleUserSolution<R> {
    let user = &problem.user;
    let t = problem.horizon;
    let b = user.battery_energy;

    if !user.can_power_circuit() {
        return SingleUserSolution::infeasible();
    }
    let d0 = user.model.peak_discharge();

    // Budget so large the drain is capped at D0 even over the whole frame:
    // the objective is then linear in τ, so fill the frame.
    let cap_tau = if d0.is_finite() { b / d0 } else { R::zero() };
    if cap_tau >= t {
        let p = (user.model.g(d0) - user.circuit_cost).max(R::zero());
        return SingleUserSolution {
            duration: t,
            discharge: d0,
            transmit_power: p,
            rate: t * p.ln_1p(),
            feasible: true,
        };
    }

    // Durations beyond B/d_lo spread the budget so thin that delivered power
    // drops below the circuit cost; exclude them.
    let hi = match user.min_active_drain() {
        Some(d_lo) if d_lo > R::zero() => (b / d_lo).min(t),
        _ => t,
    };
    let lo = cap_tau.max(t * R::of(1e-12)).min(hi);

    let (tau, rate, _) = maximize_concave_1d(|tau| problem.rate_at(tau), lo, hi, tol)
        .expect("bracket is ordered by construction");
    let discharge = (b / tau).min(d0);
    let transmit_power = (user.model.g(discharge) - user.circuit_cost).max(R::zero());
    SingleUserSolution { duration: tau, discharge, transmit_power, rate: rate.max(R::zero()), feasible: true }
}

/// Grid-search oracle over `(τ, d)` pairs for the same problem; no structure
/// assumed beyond the constraints themselves.
pub fn brute_force<R: Real>(problem: &SingleUserProblem<R>, grid: usize) -> SingleUserSolution<R> {
    assert!(grid >= 10, "grid too coarse to mean anything");
    let user = &problem.user;
    let t = problem.horizon;
    let b = user.battery_energy;
    if !user.can_power_circuit() {
        return SingleUserSolution::infeasible();
    }

    // Interior optima satisfy S·ln S = d·g′(d) ≤ d with S = 1 + g(d) − γ,
    // which bounds d* below 4(1+γ) even for an ideal battery; the 4B/T term
    // covers budget-bound bursts. Either way D0 caps the useful drain.
    let d_max = user
        .model
        .peak_discharge()
        .min((R::of(4.0) * b / t).max(R::of(4.0) * (R::one() + user.circuit_cost)));

    use rayon::prelude::*;
    let step_t = t / R::of(grid as f64);
    let step_d = d_max / R::of(grid as f64);
    let best = (1..=grid)
        .into_par_iter()
        .map(|i| {
            let tau = step_t * R::of(i as f64);
            let mut local = (R::zero(), tau, R::zero());
            for j in 1..=grid {
                let d = step_d * R::of(j as f64);
                if tau * d > b {
                    break;
                }
                let p = (user.model.g(d) - user.circuit_cost).max(R::zero());
                let value = tau * p.ln_1p();
                if value > local.0 {
                    local = (value, tau, d);
                }
            }
            local
        })
        .reduce(
            || (R::zero(), R::zero(), R::zero()),
            |a, b| if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) > (a.1, a.2)) { b } else { a },
        );

    let (rate, duration, discharge) = best;
    let transmit_power = (user.model.g(discharge) - user.circuit_cost).max(R::zero());
    SingleUserSolution { duration, discharge, transmit_power, rate, feasible: true }
}

/// Residual of the interior first-order condition
/// `(1 + g(x) − γ)·ln(1 + g(x) − γ) = x·g′(x)` at `x = B/τ`.
///
/// Only meaningful strictly between the drain-cap corner `τ = B/D0` and the
/// frame edge `τ = T`; outside that range the optimum sits on a boundary and
/// the condition does not apply.
pub fn stationarity_residual<R: Real>(problem: &SingleUserProblem<R>, tau: R) -> Result<R, Error> {
    let user = &problem.user;
    let cap_tau = {
        let d0 = user.model.peak_discharge();
        if d0.is_finite() {
            user.battery_energy / d0
        } else {
            R::zero()
        }
    };
    if tau <= cap_tau || tau >= problem.horizon {
        return Err(Error::OutOfInteriorRange(tau.as_f64()));
    }
    let x = user.battery_energy / tau;
    let s = R::one() + user.model.g(x) - user.circuit_cost;
    Ok((s * s.ln() - x * user.model.dg(x)).abs())
}

/// How the optimal schedule responds to scaling the energy budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetScalingReport<R: Real> {
    /// Optimal drain d* = B/τ* for each budget, in input order.
    pub discharges: Vec<R>,
    /// Whether that instance's optimum was interior (boundary optima carry
    /// no information about the scaling law).
    pub interior: Vec<bool>,
    /// Relative spread of d* over the interior instances.
    pub relative_spread: R,
    /// True when every instance is interior and the spread is ≤ 1e−4:
    /// the optimal duration then grows linearly with the budget.
    pub passes: bool,
}

/// Solves the same user at several budgets and checks that the optimal drain
/// `d* = B/τ*` stays constant — equivalently, that τ* is linear in B.
pub fn budget_scaling_check<R: Real>(
    user: &UserParams<R>,
    horizon: R,
    budgets: &[R],
) -> Result<BudgetScalingReport<R>, Error> {
    if budgets.is_empty() {
        return Err(Error::InvalidParameter("need at least one budget".into()));
    }
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("budgets must be strictly ascending".into()));
    }

    let margin = R::of(1e-6) * horizon;
    let mut discharges = Vec::with_capacity(budgets.len());
    let mut interior = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let mut u = user.clone();
        u.battery_energy = b;
        let problem = SingleUserProblem::new(u, horizon)?;
        let sol = solve(&problem, R::of(1e-10) * horizon);
        let cap_tau = {
            let d0 = problem.user.model.peak_discharge();
            if d0.is_finite() {
                b / d0
            } else {
                R::zero()
            }
        };
        discharges.push(sol.discharge);
        interior.push(sol.feasible && sol.duration > cap_tau + margin && sol.duration < horizon - margin);
    }

    let inner: Vec<R> = discharges
        .iter()
        .zip(&interior)
        .filter_map(|(&d, &ok)| ok.then_some(d))
        .collect();
    let relative_spread = match inner.iter().copied().reduce(R::max) {
        Some(max) if max > R::zero() && inner.len() >= 2 => {
            let min = inner.iter().copied().reduce(R::min).unwrap();
            (max - min) / max
        }
        _ => R::zero(),
    };
    let all_interior = interior.iter().all(|&ok| ok);
    let passes = all_interior && interior.len() >= 2 && relative_spread <= R::of(1e-4);
    Ok(BudgetScalingReport { discharges, interior, relative_spread, passes })
}
