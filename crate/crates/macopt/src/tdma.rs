//! Time-sharing building blocks shared by the two-user and multi-user
//! schedulers.
//!
//! With orthogonal (one-at-a-time) access the frame problem separates: each
//! user contributes a concave rate-vs-duration curve, and the only coupling
//! is the shared frame length. The scheduler equalizes marginal rates across
//! users (water-filling in time), with special handling for the linear
//! segment each capped battery puts at the bottom of its curve.

use crate::battery::UserParams;
use crate::{Real, single_user};

/// Rate earned by one user as a function of its solo transmit duration,
/// spending the whole budget (drain capped at the battery peak).
///
/// The curve is concave; below `cap_tau = B/D0` the drain is pinned at the
/// peak and the curve is exactly linear with slope `flat_slope`.
pub(crate) struct UserCurve<R: Real> {
    user: UserParams<R>,
    cap_tau: R,
    flat_slope: R,
}

impl<R: Real> UserCurve<R> {
    /// `None` when the battery cannot out-deliver the circuit cost: the user
    /// can never contribute rate and is excluded from scheduling.
    pub(crate) fn new(user: &UserParams<R>) -> Option<Self> {
        if !user.can_power_circuit() {
            return None;
        }
        let d0 = user.model.peak_discharge();
        let (cap_tau, flat_slope) = if d0.is_finite() {
            (user.battery_energy / d0, (user.model.g(d0) - user.circuit_cost).ln_1p())
        } else {
            (R::zero(), R::infinity())
        };
        Some(UserCurve { user: user.clone(), cap_tau, flat_slope })
    }

    pub(crate) fn rate_at(&self, tau: R) -> R {
        if tau <= R::zero() {
            return R::zero();
        }
        let d0 = self.user.model.peak_discharge();
        let d = (self.user.battery_energy / tau).min(d0);
        let p = self.user.model.g(d) - self.user.circuit_cost;
        if p <= R::zero() {
            R::zero()
        } else {
            tau * p.ln_1p()
        }
    }

    /// d(rate)/dτ; constant on the capped segment, strictly decreasing after.
    pub(crate) fn slope_at(&self, tau: R) -> R {
        if tau <= self.cap_tau {
            return self.flat_slope;
        }
        let x = self.user.battery_energy / tau;
        let s = R::one() + self.user.model.g(x) - self.user.circuit_cost;
        if s <= R::zero() {
            return R::neg_infinity();
        }
        s.ln() - x * self.user.model.dg(x) / s
    }

    /// Largest τ ≤ `t_max` whose marginal rate still meets `mu`; 0 when even
    /// the flat segment falls short (the user drops out at this price).
    pub(crate) fn duration_at_marginal(&self, mu: R, t_max: R) -> R {
        if self.slope_at(t_max) >= mu {
            return t_max;
        }
        let lo0 = self.cap_tau.max(t_max * R::of(1e-15)).min(t_max);
        if self.slope_at(lo0) < mu {
            return R::zero();
        }
        let (mut lo, mut hi) = (lo0, t_max);
        for _ in 0..80 {
            let mid = (lo + hi) * R::of(0.5);
            if self.slope_at(mid) >= mu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Argmax of the curve on (0, t_max].
    pub(crate) fn peak_duration(&self, t_max: R) -> R {
        let problem = single_user::SingleUserProblem::new(self.user.clone(), t_max)
            .expect("t_max positive");
        single_user::solve(&problem, R::of(1e-11) * t_max).duration
    }
}

/// Splits `t_total` seconds among the users to maximize the summed rate.
/// Returns per-user durations (0 for excluded users) and the total rate.
///
/// Interior users end up with equal marginal rates μ*; users whose flat
/// segment sits exactly at μ* have set-valued best durations, so after the
/// price bisection the remaining time is split evenly among them (any split
/// is optimal — their marginals are identical constants).
pub(crate) fn equal_marginal_schedule<R: Real>(
    curves: &[Option<UserCurve<R>>],
    t_total: R,
) -> (Vec<R>, R) {
    let n = curves.len();
    let mut durations = vec![R::zero(); n];

    let peaks: Vec<R> = curves
        .iter()
        .map(|c| c.as_ref().map_or(R::zero(), |c| c.peak_duration(t_total)))
        .collect();
    let total_peak = peaks.iter().fold(R::zero(), |a, &b| a + b);
    if total_peak <= t_total {
        for (slot, peak) in durations.iter_mut().zip(&peaks) {
            *slot = *peak;
        }
    } else {
        let demand = |mu: R| -> Vec<R> {
            curves
                .iter()
                .map(|c| c.as_ref().map_or(R::zero(), |c| c.duration_at_marginal(mu, t_total)))
                .collect()
        };
        let sum = |d: &[R]| d.iter().fold(R::zero(), |a, &b| a + b);

        let tiny = t_total * R::of(1e-12);
        // Every curve's slope is maximal (and finite) at the top of its flat
        // segment, or at τ→0 for uncapped batteries.
        let mut mu_hi = R::one();
        for c in curves.iter().flatten() {
            mu_hi = mu_hi.max(c.slope_at(c.cap_tau.max(tiny)) + R::one());
        }
        let mut mu_lo = R::zero();
        for _ in 0..120 {
            let mu = (mu_lo + mu_hi) * R::of(0.5);
            if sum(&demand(mu)) >= t_total {
                mu_lo = mu;
            } else {
                mu_hi = mu;
            }
        }

        // Under-filled side first, then hand the gap to the users whose
        // demand jumps across the price (flat-segment users).
        let at_hi = demand(mu_hi);
        let at_lo = demand(mu_lo);
        durations.copy_from_slice(&at_hi);
        let mut leftover = t_total - sum(&at_hi);
        let mut jumpers: Vec<usize> = (0..n)
            .filter(|&u| at_lo[u] - at_hi[u] > tiny)
            .collect();
        jumpers.sort_by(|&a, &b| {
            let ha = at_lo[a] - at_hi[a];
            let hb = at_lo[b] - at_hi[b];
            ha.partial_cmp(&hb).unwrap()
        });
        let mut remaining = jumpers.len();
        for &u in &jumpers {
            let share = leftover / R::of(remaining as f64);
            let give = share.min(at_lo[u] - at_hi[u]);
            durations[u] = durations[u] + give;
            leftover = leftover - give;
            remaining -= 1;
        }
    }

    let total = curves
        .iter()
        .zip(&durations)
        .map(|(c, &tau)| c.as_ref().map_or(R::zero(), |c| c.rate_at(tau)))
        .fold(R::zero(), |a, b| a + b);
    (durations, total)
}
