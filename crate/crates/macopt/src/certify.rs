//! First-order optimality certificates for phase-frame schedules.
//!
//! The frame programs maximize Σᵢ τᵢ·vᵢ(eᵢ/τᵢ), a sum of perspectives of
//! concave rate densities. At a schedule that keeps phases closed (τᵢ = 0)
//! the feasible set has a *conical* corner: a gradient test cannot decide
//! optimality there, because whether opening a phase pays depends on the
//! best drain profile the phase could run at, not on the gradient at any
//! single profile. This module implements the correct test:
//!
//! - open phases pin the energy and time multipliers through the usual
//!   marginal conditions (with interval slack where caps or drain floors
//!   bind), and
//! - each closed phase is optimal to keep closed iff
//!   `max_d [vᵢ(d) − Σᵤ λᵤ·dᵤ] ≤ λ_T` with d ranging over the per-member
//!   drain boxes [d_lo, cap]. (Minimizing the phase's free cap and floor
//!   multipliers out of the Lagrangian turns the unconstrained supremum
//!   into exactly this box-constrained one.) The supremum is a small
//!   jointly-concave problem, solved by cyclic coordinate golden section.
//!
//! The returned residual is 0 exactly at a constrained maximum and grows
//! with the worst violated condition, so callers can threshold it the same
//! way they threshold a gradient norm.

use crate::battery::DischargeModel;
use crate::solver::maximize_concave_1d;
use crate::Real;

/// Relative slack below which a bound or row counts as active.
const ACTIVE_TOL: f64 = 1e-7;
/// Power-sum floor shared with the solver objectives (keeps ln1p defined).
const POWER_FLOOR: f64 = -0.999_999;

/// Rate density of one phase as a function of its members' drain levels.
pub(crate) trait PhaseDensity<R: Real> {
    fn value(&self, d: &[R]) -> R;
    /// Writes ∂v/∂dₖ for each member slot.
    fn grad(&self, d: &[R], out: &mut [R]);
}

/// One member's discharge curve and circuit cost.
pub(crate) struct MemberCurve<'a, R: Real> {
    pub gamma: R,
    pub model: &'a DischargeModel<R>,
}

/// v(d) = ln(1 + Σₖ (g(dₖ) − γₖ)): the plain sum-rate density.
pub(crate) struct SumDensity<'a, R: Real> {
    pub members: Vec<MemberCurve<'a, R>>,
}

impl<R: Real> SumDensity<'_, R> {
    fn power_sum(&self, d: &[R]) -> R {
        let mut p = R::zero();
        for (m, &dk) in self.members.iter().zip(d) {
            p = p + m.model.g(dk) - m.gamma;
        }
        p.max(R::of(POWER_FLOOR))
    }
}

impl<R: Real> PhaseDensity<R> for SumDensity<'_, R> {
    fn value(&self, d: &[R]) -> R {
        self.power_sum(d).ln_1p()
    }

    fn grad(&self, d: &[R], out: &mut [R]) {
        let s = R::one() + self.power_sum(d);
        for (k, m) in self.members.iter().enumerate() {
            out[k] = m.model.dg(d[k]) / s;
        }
    }
}

/// Sum-rate density plus `weight` times the favored member's clean rate
/// (what it would get with every other member cancelled ahead of it). Used
/// by the weighted boundary sweeps of the rate region.
pub(crate) struct FavoredSumDensity<'a, R: Real> {
    pub base: SumDensity<'a, R>,
    pub favored_slot: usize,
    pub weight: R,
}

impl<R: Real> PhaseDensity<R> for FavoredSumDensity<'_, R> {
    fn value(&self, d: &[R]) -> R {
        let m = &self.base.members[self.favored_slot];
        let clean = (m.model.g(d[self.favored_slot]) - m.gamma).max(R::of(POWER_FLOOR));
        self.base.value(d) + self.weight * clean.ln_1p()
    }

    fn grad(&self, d: &[R], out: &mut [R]) {
        self.base.grad(d, out);
        let m = &self.base.members[self.favored_slot];
        let clean = (m.model.g(d[self.favored_slot]) - m.gamma).max(R::of(POWER_FLOOR));
        out[self.favored_slot] = out[self.favored_slot]
            + self.weight * m.model.dg(d[self.favored_slot]) / (R::one() + clean);
    }
}

/// One phase of a snapped schedule. `tau = 0` means closed; drains are only
/// meaningful for open phases.
pub(crate) struct CertPhase<'a, R: Real> {
    pub tau: R,
    /// (user index, drain) per member slot, in the density's slot order.
    pub members: Vec<(usize, R)>,
    pub density: &'a dyn PhaseDensity<R>,
}

/// Per-user constants the certificate needs.
pub(crate) struct CertUser<R: Real> {
    pub budget: R,
    /// Total energy the schedule draws from this user.
    pub spent: R,
    /// Smallest drain covering the circuit cost (0 when γ = 0).
    pub d_lo: R,
    /// Drain cap enforced by the program rows (finite even for ideal
    /// batteries, where it is a synthetic never-binding bound).
    pub cap: R,
}

/// Energy multipliers extracted from the open phases, with the residual and
/// per-phase marginals accumulated along the way.
struct Multipliers<R: Real> {
    lambda: Vec<R>,
    residual: R,
    marginals: Vec<Vec<R>>,
}

/// Per-user λ interval [lo, hi] from the open phases: an interior drain pins
/// λ = m, a binding cap allows λ ∈ [0, m], a binding floor λ ∈ [m, ∞), and a
/// slack budget forces λ = 0. An empty intersection is a stationarity
/// violation of size lo − hi.
fn extract_multipliers<R: Real>(phases: &[CertPhase<R>], users: &[CertUser<R>]) -> Multipliers<R> {
    let act = R::of(ACTIVE_TOL);
    let mut residual = R::zero();
    let mut lo = vec![R::zero(); users.len()];
    let mut hi: Vec<R> = users
        .iter()
        .map(|u| {
            if u.budget - u.spent > act * (R::one() + u.budget) {
                R::zero()
            } else {
                R::infinity()
            }
        })
        .collect();

    let mut marginals: Vec<Vec<R>> = Vec::with_capacity(phases.len());
    for phase in phases {
        let drains: Vec<R> = phase.members.iter().map(|&(_, d)| d).collect();
        let mut m = vec![R::zero(); drains.len()];
        if phase.tau > R::zero() {
            phase.density.grad(&drains, &mut m);
            for (k, &(u, d)) in phase.members.iter().enumerate() {
                let at_cap = users[u].cap - d <= act * (R::one() + users[u].cap);
                let at_floor = d - users[u].d_lo <= act * (R::one() + users[u].d_lo);
                match (at_floor, at_cap) {
                    (true, true) => {} // degenerate d_lo ≈ cap: no information
                    (false, true) => hi[u] = hi[u].min(m[k]),
                    (true, false) => lo[u] = lo[u].max(m[k]),
                    (false, false) => {
                        lo[u] = lo[u].max(m[k]);
                        hi[u] = hi[u].min(m[k]);
                    }
                }
            }
        }
        marginals.push(m);
    }

    let mut lambda = vec![R::zero(); users.len()];
    for u in 0..users.len() {
        residual = residual.max(lo[u] - hi[u]);
        // The largest valid choice is the friendliest to the closed-phase
        // tests; an interval conflict is already in the residual.
        lambda[u] = if hi[u].is_finite() { hi[u].max(R::zero()) } else { lo[u] };
    }
    Multipliers { lambda, residual, marginals }
}

/// Duration marginal of an open phase: ∂/∂τ of τ·v(e/τ) at fixed e, plus the
/// τ coefficients of whichever cap/floor rows are active. Must equal the
/// duration multiplier at a maximum.
fn open_phase_balance<R: Real>(
    phase: &CertPhase<R>,
    m: &[R],
    users: &[CertUser<R>],
    lambda: &[R],
) -> R {
    let act = R::of(ACTIVE_TOL);
    let drains: Vec<R> = phase.members.iter().map(|&(_, d)| d).collect();
    let mut balance = phase.density.value(&drains);
    for (k, &(u, d)) in phase.members.iter().enumerate() {
        balance = balance - d * m[k];
        let at_cap = users[u].cap - d <= act * (R::one() + users[u].cap);
        let at_floor = d - users[u].d_lo <= act * (R::one() + users[u].d_lo);
        if at_cap && !at_floor {
            balance = balance + users[u].cap * (m[k] - lambda[u]).max(R::zero());
        }
        if at_floor && !at_cap {
            balance = balance - users[u].d_lo * (lambda[u] - m[k]).max(R::zero());
        }
    }
    balance
}

/// Duration balance of each open phase (None for closed ones) at the
/// multipliers the schedule pins: the marginal value of that phase's time.
/// Active-set pruning closes the phase with the smallest balance when a
/// point fails to certify.
pub(crate) fn open_phase_balances<R: Real>(
    phases: &[CertPhase<R>],
    users: &[CertUser<R>],
) -> Vec<Option<R>> {
    let Multipliers { lambda, marginals, .. } = extract_multipliers(phases, users);
    phases
        .iter()
        .zip(&marginals)
        .map(|(phase, m)| {
            (phase.tau > R::zero()).then(|| open_phase_balance(phase, m, users, &lambda))
        })
        .collect()
}

/// Stationarity residual of a snapped schedule sharing one time budget
/// (Σ τᵢ ≤ horizon); 0 at a constrained maximum.
///
/// Feasibility is the caller's business — this only measures how far the
/// point is from satisfying the first-order conditions.
pub(crate) fn frame_stationarity<R: Real>(
    phases: &[CertPhase<R>],
    users: &[CertUser<R>],
    horizon: R,
) -> R {
    let act = R::of(ACTIVE_TOL);
    let Multipliers { lambda, mut residual, marginals } = extract_multipliers(phases, users);

    // Time multiplier from the open phases' duration marginals. A phase
    // pinned at the whole horizon only lower-bounds its balance (its own
    // upper bound can absorb the excess); the others must agree exactly.
    let total_tau: R = phases.iter().fold(R::zero(), |a, p| a + p.tau);
    let time_slack = horizon - total_tau > act * (R::one() + horizon);
    let mut free_max = R::neg_infinity();
    let mut free_min = R::infinity();
    let mut pinned_min = R::infinity();
    for (phase, m) in phases.iter().zip(&marginals) {
        if phase.tau <= R::zero() {
            continue;
        }
        let balance = open_phase_balance(phase, m, users, &lambda);
        if phase.tau >= horizon * (R::one() - act) {
            pinned_min = pinned_min.min(balance);
        } else {
            free_max = free_max.max(balance);
            free_min = free_min.min(balance);
        }
    }

    let lambda_time = if time_slack {
        if free_max.is_finite() {
            residual = residual.max(free_max.abs()).max(free_min.abs());
        }
        if pinned_min.is_finite() {
            residual = residual.max(-pinned_min);
        }
        R::zero()
    } else if free_max.is_finite() {
        residual = residual.max(free_max - free_min); // balance spread
        residual = residual.max(-free_max); // λ_T ≥ 0
        residual = residual.max(free_max - pinned_min); // pinned needs μ ≥ 0
        free_max.min(pinned_min).max(R::zero())
    } else if pinned_min.is_finite() {
        pinned_min.max(R::zero())
    } else {
        R::zero()
    };

    // Closed phases: opening one must not pay at any feasible drain profile.
    for phase in phases {
        if phase.tau > R::zero() {
            continue;
        }
        let (gain, _) = best_opening_gain(phase, users, &lambda);
        residual = residual.max(gain - lambda_time);
    }

    residual
}

/// Closed phase whose best opening gain most exceeds the marginal value of
/// frame time, with the drain profile achieving it — the priced-in phase an
/// active-set opening move should reintroduce. `None` when every closed
/// phase prices out by `margin` (then closed phases are not what blocks the
/// certificate).
pub(crate) fn best_phase_to_open<R: Real>(
    phases: &[CertPhase<R>],
    users: &[CertUser<R>],
    horizon: R,
    margin: R,
) -> Option<(usize, Vec<R>)> {
    let act = R::of(ACTIVE_TOL);
    let Multipliers { lambda, marginals, .. } = extract_multipliers(phases, users);

    let total_tau: R = phases.iter().fold(R::zero(), |a, p| a + p.tau);
    let time_slack = horizon - total_tau > act * (R::one() + horizon);
    let mut free_max = R::neg_infinity();
    let mut pinned_min = R::infinity();
    for (phase, m) in phases.iter().zip(&marginals) {
        if phase.tau <= R::zero() {
            continue;
        }
        let balance = open_phase_balance(phase, m, users, &lambda);
        if phase.tau >= horizon * (R::one() - act) {
            pinned_min = pinned_min.min(balance);
        } else {
            free_max = free_max.max(balance);
        }
    }
    let lambda_time = if time_slack {
        R::zero()
    } else if free_max.is_finite() {
        free_max.min(pinned_min).max(R::zero())
    } else if pinned_min.is_finite() {
        pinned_min.max(R::zero())
    } else {
        R::zero()
    };

    let mut best: Option<(usize, R, Vec<R>)> = None;
    for (k, phase) in phases.iter().enumerate() {
        if phase.tau > R::zero() {
            continue;
        }
        let (gain, drains) = best_opening_gain(phase, users, &lambda);
        let excess = gain - lambda_time;
        if excess > margin && best.as_ref().is_none_or(|(_, g, _)| excess > *g) {
            best = Some((k, excess, drains));
        }
    }
    best.map(|(k, _, drains)| (k, drains))
}

/// Stationarity residual when each phase has its own duration bound
/// (τₖ ≤ limits[k]) instead of a shared time row — the phases are then
/// coupled only through the energy budgets. 0 at a constrained maximum.
pub(crate) fn windowed_stationarity<R: Real>(
    phases: &[CertPhase<R>],
    limits: &[R],
    users: &[CertUser<R>],
) -> R {
    let act = R::of(ACTIVE_TOL);
    let Multipliers { lambda, mut residual, marginals } = extract_multipliers(phases, users);

    for ((phase, m), &limit) in phases.iter().zip(&marginals).zip(limits) {
        if phase.tau > R::zero() {
            let balance = open_phase_balance(phase, m, users, &lambda);
            if phase.tau >= limit * (R::one() - act) {
                // pinned at the window's end: only μ ≥ 0 is required
                residual = residual.max(-balance);
            } else {
                residual = residual.max(balance.abs());
            }
        } else {
            // closed window: opening it must not pay at any drain profile
            let (gain, _) = best_opening_gain(phase, users, &lambda);
            residual = residual.max(gain);
        }
    }
    residual
}

/// Windowed counterpart of [`best_phase_to_open`]: time inside a closed
/// window has no opportunity cost (its duration bound is private), so any
/// closed window whose best opening gain clears `margin` prices in.
pub(crate) fn best_window_to_open<R: Real>(
    phases: &[CertPhase<R>],
    users: &[CertUser<R>],
    margin: R,
) -> Option<(usize, Vec<R>)> {
    let Multipliers { lambda, .. } = extract_multipliers(phases, users);
    let mut best: Option<(usize, R, Vec<R>)> = None;
    for (k, phase) in phases.iter().enumerate() {
        if phase.tau > R::zero() {
            continue;
        }
        let (gain, drains) = best_opening_gain(phase, users, &lambda);
        if gain > margin && best.as_ref().is_none_or(|(_, g, _)| gain > *g) {
            best = Some((k, gain, drains));
        }
    }
    best.map(|(k, _, drains)| (k, drains))
}

/// `max_d [v(d) − Σ λᵤ dᵤ]` over the per-member [d_lo, cap] boxes, by cyclic
/// coordinate golden section (the objective is jointly concave). Returns the
/// maximum and the drain profile achieving it.
fn best_opening_gain<R: Real>(
    phase: &CertPhase<R>,
    users: &[CertUser<R>],
    lambda: &[R],
) -> (R, Vec<R>) {
    let lows: Vec<R> = phase
        .members
        .iter()
        .map(|&(u, _)| users[u].d_lo.min(users[u].cap))
        .collect();
    let caps: Vec<R> = phase.members.iter().map(|&(u, _)| users[u].cap).collect();
    let mut d = lows.clone();
    let phi = |d: &[R]| -> R {
        let mut v = phase.density.value(d);
        for (k, &(u, _)) in phase.members.iter().enumerate() {
            v = v - lambda[u] * d[k];
        }
        v
    };

    let mut best = phi(&d);
    for _ in 0..30 {
        let before = best;
        for k in 0..d.len() {
            let (dk, value, _) = maximize_concave_1d(
                |x| {
                    let mut trial = d.clone();
                    trial[k] = x;
                    phi(&trial)
                },
                lows[k],
                caps[k],
                R::of(1e-10) * (R::one() + caps[k]),
            )
            .expect("drain interval is ordered");
            d[k] = dk;
            best = value;
        }
        if d.len() <= 1 || best - before <= R::of(1e-13) * (R::one() + best.abs()) {
            break;
        }
    }
    (best, d)
}
