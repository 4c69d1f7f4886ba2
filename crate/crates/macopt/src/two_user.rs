//! Two-user maximum sum-rates under NOMA, TDMA, and the hybrid frame.
//!
//! The frame has four phases: idle (1), user 1 alone (2), user 2 alone (3),
//! and both superposed (4). NOMA keeps only phase 4, TDMA only phases 2–3,
//! and the hybrid schedule optimizes over all of them at once.
//!
//! The hybrid program works in energy variables `e = τ·d`, `E = τ·P`
//! (the perspective transform), which makes every constraint linear and the
//! objective concave. Transmit energies are eliminated by binding their
//! constraint with equality — the objective is strictly increasing in them.

use crate::battery::UserParams;
use crate::certify::{
    best_phase_to_open, frame_stationarity, open_phase_balances, CertPhase, CertUser, MemberCurve,
    PhaseDensity, SumDensity,
};
use crate::solver::{
    maximize_concave_linear, LinearConstraintSet, SolveOptions, SolveReport, SolveStatus,
};
use crate::tdma::{equal_marginal_schedule, UserCurve};
use crate::{single_user, Error, Real};

/// Phase durations below this fraction of the frame are snapped to zero when
/// an allocation is rebuilt from solver output.
const SNAP_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoUserInstance<R: Real> {
    pub users: [UserParams<R>; 2],
    /// Frame length T, seconds.
    pub horizon: R,
}

impl<R: Real> TwoUserInstance<R> {
    pub fn new(users: [UserParams<R>; 2], horizon: R) -> Result<Self, Error> {
        if !horizon.is_finite() || horizon <= R::zero() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive (got {horizon})"
            )));
        }
        Ok(TwoUserInstance { users, horizon })
    }

    pub(crate) fn solo(&self, u: usize) -> single_user::SingleUserSolution<R> {
        let problem = single_user::SingleUserProblem::new(self.users[u].clone(), self.horizon)
            .expect("horizon validated");
        single_user::solve(&problem, R::of(1e-11) * self.horizon)
    }
}

/// One frame's schedule: durations and per-user energies for the four phases
/// (index 0 = idle phase, 1 = user-1 solo, 2 = user-2 solo, 3 = joint).
///
/// `drawn_energy[u][i]` is what leaves user u's battery in phase i+1;
/// `transmit_energy[u][i]` is what reaches the channel after discharge loss
/// and circuit cost.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAllocation<R: Real> {
    pub durations: [R; 4],
    pub drawn_energy: [[R; 4]; 2],
    pub transmit_energy: [[R; 4]; 2],
}

impl<R: Real> FrameAllocation<R> {
    pub fn empty() -> Self {
        FrameAllocation {
            durations: [R::zero(); 4],
            drawn_energy: [[R::zero(); 4]; 2],
            transmit_energy: [[R::zero(); 4]; 2],
        }
    }

    /// Sum-rate in nats: Σ_i τ_i·ln(1 + Σ_u E_i^(u)/τ_i).
    pub fn sum_rate(&self) -> R {
        let mut total = R::zero();
        for i in 0..4 {
            let tau = self.durations[i];
            if tau <= R::zero() {
                continue;
            }
            let e = self.transmit_energy[0][i] + self.transmit_energy[1][i];
            total = total + tau * (e / tau).ln_1p();
        }
        total
    }

    /// Checks every frame constraint at tolerance 1e−9.
    pub fn validate(&self, instance: &TwoUserInstance<R>) -> Result<(), Error> {
        let slack = R::of(1e-9);
        let total: R = self.durations.iter().fold(R::zero(), |a, &b| a + b);
        if total > instance.horizon + slack {
            return Err(Error::AllocationInvalid(format!(
                "durations sum to {total} > horizon {}",
                instance.horizon
            )));
        }
        if self.durations.iter().any(|&t| t < R::zero()) {
            return Err(Error::AllocationInvalid("negative duration".into()));
        }
        // (user, phase) pairs the frame structure forbids
        for (u, i) in [(0, 0), (1, 0), (1, 1), (0, 2)] {
            if self.drawn_energy[u][i] != R::zero() || self.transmit_energy[u][i] != R::zero() {
                return Err(Error::AllocationInvalid(format!(
                    "user {} must be silent in phase {}",
                    u + 1,
                    i + 1
                )));
            }
        }
        for u in 0..2 {
            let params = &instance.users[u];
            let spent: R = self.drawn_energy[u].iter().fold(R::zero(), |a, &b| a + b);
            if spent > params.battery_energy + slack {
                return Err(Error::AllocationInvalid(format!(
                    "user {} draws {spent} > budget {}",
                    u + 1,
                    params.battery_energy
                )));
            }
            let d0 = params.model.peak_discharge();
            for i in 0..4 {
                let (tau, e) = (self.durations[i], self.drawn_energy[u][i]);
                if e < -slack {
                    return Err(Error::AllocationInvalid("negative drawn energy".into()));
                }
                if d0.is_finite() && e > tau * d0 + slack {
                    return Err(Error::AllocationInvalid(format!(
                        "user {} exceeds the discharge cap in phase {}",
                        u + 1,
                        i + 1
                    )));
                }
                if tau > R::zero() {
                    // silent users (e = 0, or drain below the circuit cost)
                    // deliver nothing but owe nothing either
                    let limit =
                        (tau * (params.model.g(e / tau) - params.circuit_cost)).max(R::zero());
                    if self.transmit_energy[u][i] > limit + slack {
                        return Err(Error::AllocationInvalid(format!(
                            "user {} transmit energy exceeds delivered energy in phase {}",
                            u + 1,
                            i + 1
                        )));
                    }
                } else if self.transmit_energy[u][i] != R::zero() {
                    return Err(Error::AllocationInvalid(
                        "transmit energy in a zero-length phase".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Everyone transmits over the whole frame; the receiver separates users by
/// successive cancellation. Closed form.
pub fn noma_sum_rate<R: Real>(instance: &TwoUserInstance<R>) -> (R, FrameAllocation<R>) {
    let t = instance.horizon;
    let mut alloc = FrameAllocation::empty();
    alloc.durations[3] = t;
    let mut power_sum = R::zero();
    for (u, params) in instance.users.iter().enumerate() {
        let d = (params.battery_energy / t).min(params.model.peak_discharge());
        let p = params.model.g(d) - params.circuit_cost;
        if p > R::zero() {
            power_sum = power_sum + p;
            alloc.drawn_energy[u][3] = t * d;
            alloc.transmit_energy[u][3] = t * p;
        }
    }
    (t * power_sum.ln_1p(), alloc)
}

/// Users transmit in disjoint windows. Solved twice — by equal-marginal
/// water-filling over durations and by a scalar search over the window split
/// — and the two answers are cross-checked.
///
/// Returns the rate and the two transmit durations (τ₂, τ₃).
pub fn tdma_sum_rate<R: Real>(instance: &TwoUserInstance<R>, tol: R) -> (R, [R; 2]) {
    let t = instance.horizon;
    let curves: Vec<Option<UserCurve<R>>> =
        instance.users.iter().map(UserCurve::new).collect();
    let (durations, marginal_rate) = equal_marginal_schedule(&curves, t);

    // Independent route: give user 1 a window of w seconds and user 2 the
    // rest; each window is a single-user problem, and the split objective is
    // concave in w.
    let window_rate = |user: usize, w: R| -> R {
        if w <= R::zero() {
            return R::zero();
        }
        let problem = single_user::SingleUserProblem::new(instance.users[user].clone(), w)
            .expect("window positive");
        single_user::solve(&problem, R::of(1e-11) * t).rate
    };
    let (_, split_rate, _) =
        crate::solver::maximize_concave_1d(|w| window_rate(0, w) + window_rate(1, t - w), R::zero(), t, tol)
            .expect("interval [0, T] is ordered");

    debug_assert!(
        (marginal_rate - split_rate).abs() <= tol + R::of(1e-6) * (R::one() + marginal_rate.abs()),
        "time-sharing routes disagree: {marginal_rate} vs {split_rate}"
    );
    (marginal_rate.max(split_rate), [durations[0], durations[1]])
}

// Variable layout of the hybrid program.
pub(crate) const TAU2: usize = 0;
pub(crate) const TAU3: usize = 1;
pub(crate) const TAU4: usize = 2;
pub(crate) const E2: usize = 3; // user 1, solo phase
pub(crate) const E3: usize = 4; // user 2, solo phase
pub(crate) const E4A: usize = 5; // user 1, joint phase
pub(crate) const E4B: usize = 6; // user 2, joint phase
pub(crate) const PHASES: [(usize, &[(usize, usize)]); 3] =
    [(TAU2, &[(E2, 0)]), (TAU3, &[(E3, 1)]), (TAU4, &[(E4A, 0), (E4B, 1)])];

/// Per-user constants the hybrid objective needs.
pub(crate) struct ActiveUser<R: Real> {
    pub(crate) params: UserParams<R>,
    /// Smallest drain covering the circuit cost (keeps the per-phase power
    /// nonnegative through a linear constraint instead of a clamp).
    pub(crate) min_drain: R,
    pub(crate) peak: R,
    /// Finite drain bound used in the program rows. Equal to `peak` for
    /// lossy batteries; for lossless ones a synthetic level far above any
    /// optimal drain (those stay below ≈ 2e·(1+γ)) and above the drain that
    /// empties the budget in one frame. Tying energies to durations this way
    /// keeps solver iterates off the e > 0, τ = 0 rays, where the objective
    /// is discontinuous.
    pub(crate) cap: R,
}

pub(crate) fn active_user<R: Real>(params: &UserParams<R>, horizon: R) -> Option<ActiveUser<R>> {
    let min_drain = params.min_active_drain()?;
    if !params.can_power_circuit() {
        return None;
    }
    let peak = params.model.peak_discharge();
    let cap = if peak.is_finite() {
        peak
    } else {
        R::of(50.0) * (R::one() + params.circuit_cost)
            + R::of(2.0) * params.battery_energy / horizon
    };
    Some(ActiveUser { params: params.clone(), min_drain, peak, cap })
}

/// Maximum sum-rate over the full four-phase schedule.
///
/// Solves the perspective-form concave program by projected-gradient ascent
/// from several structured starts (uniform, NOMA-like, TDMA-like) and keeps
/// the best KKT-certified point.
pub fn hybrid_sum_rate<R: Real>(
    instance: &TwoUserInstance<R>,
    tol: R,
) -> Result<(R, FrameAllocation<R>, SolveReport<R>), Error> {
    hybrid_sum_rate_with(instance, &SolveOptions::with_tolerance(tol))
}

/// [`hybrid_sum_rate`] with full control of the ascent options (iteration
/// cap, feasibility target).
pub fn hybrid_sum_rate_with<R: Real>(
    instance: &TwoUserInstance<R>,
    options: &SolveOptions<R>,
) -> Result<(R, FrameAllocation<R>, SolveReport<R>), Error> {
    let tol = options.tolerance;
    let t = instance.horizon;
    let active: [Option<ActiveUser<R>>; 2] =
        [active_user(&instance.users[0], t), active_user(&instance.users[1], t)];

    match (&active[0], &active[1]) {
        (None, None) => {
            return Ok((R::zero(), FrameAllocation::empty(), trivial_report(R::zero())));
        }
        (Some(_), None) | (None, Some(_)) => {
            // Degenerate single-user schedule in the live user's solo phase.
            let u = if active[0].is_some() { 0 } else { 1 };
            let sol = instance.solo(u);
            let mut alloc = FrameAllocation::empty();
            let phase = 1 + u;
            alloc.durations[phase] = sol.duration;
            alloc.durations[0] = t - sol.duration;
            alloc.drawn_energy[u][phase] = sol.duration * sol.discharge;
            alloc.transmit_energy[u][phase] = sol.duration * sol.transmit_power;
            let rate = alloc.sum_rate();
            return Ok((rate, alloc, trivial_report(rate)));
        }
        (Some(_), Some(_)) => {}
    }
    let users = [active[0].as_ref().unwrap(), active[1].as_ref().unwrap()];
    let cons = frame_constraints(&users, t);

    let freeze = R::of(1e-9) * t;
    let value = |x: &[R]| hybrid_objective(&users, freeze, x, None);
    let gradient = |x: &[R], out: &mut [R]| {
        hybrid_objective(&users, freeze, x, Some(out));
    };

    let third = R::of(1.0 / 3.0);
    let eps = R::of(0.02);
    let starts = [
        [third, third, third],
        [eps, eps, R::one() - R::of(2.0) * eps],
        [R::of(0.49), R::of(0.49), eps],
    ];
    let densities = sum_densities(&users);
    let mut candidates: Vec<(R, FrameAllocation<R>, SolveReport<R>)> = Vec::new();
    for weights in starts {
        let x0 = seed_point(&users, t, weights);
        let (x, mut pg) = maximize_concave_linear(value, gradient, &cons, &x0, options)?;
        let mut y = snap_solution(&x, t);
        // Active-set moves on certification failure. Opening: a closed phase
        // whose best drain profile beats the marginal value of frame time
        // prices in, and the gradient flow can never reintroduce it (closed
        // phases have frozen partials) — seed it with a sliver and re-solve.
        // Pruning: otherwise close the open phase whose time is worth least,
        // since shutting a phase exactly is the one move projected gradients
        // crawl at. The certificate gates every step, so a wrong move only
        // wastes a candidate; each phase reopens at most once per start.
        let mut banned: Vec<usize> = Vec::new();
        let mut opened: Vec<usize> = Vec::new();
        loop {
            let alloc = rebuild_allocation(instance, &y);
            let rate = alloc.sum_rate();
            let report = certified_report_with(&users, &cons, &y, t, &pg, tol, &densities);
            let certified = report.status == SolveStatus::Optimal;
            candidates.push((rate, alloc, report));
            if certified {
                break;
            }
            let (cert_users, phases) = cert_parts(&users, &y, &densities);
            let reopen = best_phase_to_open(&phases, &cert_users, t, tol.max(R::of(1e-5)))
                .filter(|&(k, _)| !opened.contains(&k));
            let mut x1 = y.clone();
            if let Some((k, drains)) = reopen {
                opened.push(k);
                banned.retain(|&b| b != PHASES[k].0);
                open_sliver(&users, &mut x1, t, k, &drains);
            } else {
                let balances = open_phase_balances(&phases, &cert_users);
                let open: Vec<(usize, R)> = PHASES
                    .iter()
                    .zip(&balances)
                    .filter_map(|(&(tau_idx, _), b)| b.map(|b| (tau_idx, b)))
                    .collect();
                if open.len() <= 1 {
                    break;
                }
                let worst = open
                    .iter()
                    .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .expect("open set nonempty")
                    .0;
                banned.push(worst);
            }
            let mut pinned = cons.clone();
            for &(tau_idx, members) in PHASES.iter() {
                if !banned.contains(&tau_idx) {
                    continue;
                }
                pinned.bound(tau_idx, R::zero(), R::zero());
                x1[tau_idx] = R::zero();
                for &(e_idx, _) in members {
                    pinned.bound(e_idx, R::zero(), R::zero());
                    x1[e_idx] = R::zero();
                }
            }
            let (x2, pg2) = maximize_concave_linear(value, gradient, &pinned, &x1, options)?;
            y = snap_solution(&x2, t);
            pg = pg2;
        }
    }

    select_candidate(candidates, tol)
}

/// Reopens phase `k` in the point: carves out a time sliver (idle time
/// first, else a 2% shave off every open phase, which keeps their drains
/// intact) and runs the members at `drains`, each clipped to its user's
/// leftover budget. Small residual infeasibility is fine — the next solve
/// projects its start anyway.
pub(crate) fn open_sliver<R: Real>(
    users: &[&ActiveUser<R>; 2],
    x: &mut [R],
    t: R,
    k: usize,
    drains: &[R],
) {
    let total: R = PHASES.iter().fold(R::zero(), |a, &(tau_idx, _)| a + x[tau_idx]);
    let idle = (t - total).max(R::zero());
    let shave = if idle >= R::of(0.02) * t { R::zero() } else { R::of(0.02) };
    if shave > R::zero() {
        // Every program variable is a duration or an energy, so one uniform
        // rescale frees time while leaving every open phase's drains intact.
        for v in x.iter_mut() {
            *v = *v * (R::one() - shave);
        }
    }
    let sliver = (idle + shave * total).min(t);
    let (tau_idx, members) = PHASES[k];
    x[tau_idx] = sliver;
    for (&(e_idx, u), &d) in members.iter().zip(drains) {
        let budget = users[u].params.battery_energy;
        let elsewhere: R = PHASES
            .iter()
            .flat_map(|&(_, ms)| ms.iter())
            .filter(|&&(v, owner)| owner == u && v != e_idx)
            .fold(R::zero(), |a, &(v, _)| a + x[v]);
        x[e_idx] = (sliver * d).min((budget - elsewhere).max(R::zero()));
    }
}

pub(crate) fn one_hot<R: Real>(dim: usize, entries: &[(usize, R)]) -> Vec<R> {
    let mut row = vec![R::zero(); dim];
    for &(k, v) in entries {
        row[k] = v;
    }
    row
}

fn trivial_report<R: Real>(objective: R) -> SolveReport<R> {
    SolveReport {
        status: SolveStatus::Optimal,
        objective,
        stationarity_residual: R::zero(),
        feasibility_residual: R::zero(),
        iterations: 0,
    }
}

pub(crate) fn hybrid_objective_at<R: Real>(users: &[&ActiveUser<R>; 2], x: &[R]) -> R {
    hybrid_objective(users, R::zero(), x, None)
}

pub(crate) fn hybrid_gradient_at<R: Real>(
    users: &[&ActiveUser<R>; 2],
    freeze: R,
    x: &[R],
    out: &mut [R],
) {
    hybrid_objective(users, freeze, x, Some(out));
}

/// Objective (and gradient, when `grad` is given) of the reduced hybrid
/// program at x = (τ₂, τ₃, τ₄, e₂, e₃, e₄ᵃ, e₄ᵇ). Phases with τ ≤ `freeze`
/// get a zero gradient: the corner partials are meaningless (the floored
/// power makes them explode), and whether opening a closed phase pays is the
/// certificate's question, not the gradient's.
fn hybrid_objective<R: Real>(
    users: &[&ActiveUser<R>; 2],
    freeze: R,
    x: &[R],
    grad: Option<&mut [R]>,
) -> R {
    let mut total = R::zero();
    let mut g = grad;
    if let Some(out) = g.as_deref_mut() {
        out.fill(R::zero());
    }
    for (tau_idx, members) in PHASES {
        let tau = x[tau_idx].max(R::of(1e-300));
        let mut power = R::zero();
        for &(e_idx, u) in members {
            let d = x[e_idx].max(R::zero()) / tau;
            power = power + users[u].params.model.g(d) - users[u].params.circuit_cost;
        }
        let power = power.max(R::of(-0.999_999));
        total = total + tau * power.ln_1p();
        if x[tau_idx] <= freeze {
            continue;
        }
        if let Some(out) = g.as_deref_mut() {
            let s = R::one() + power;
            let mut tau_term = s.ln();
            for &(e_idx, u) in members {
                let d = x[e_idx].max(R::zero()) / tau;
                let slope = users[u].params.model.dg(d);
                out[e_idx] = slope / s;
                tau_term = tau_term - d * slope / s;
            }
            out[tau_idx] = tau_term;
        }
    }
    total
}

/// The feasible set of the four-phase frame in the reduced variables.
pub(crate) fn frame_constraints<R: Real>(
    users: &[&ActiveUser<R>; 2],
    t: R,
) -> LinearConstraintSet<R> {
    let mut cons = LinearConstraintSet::new(7);
    for tau in [TAU2, TAU3, TAU4] {
        cons.bound(tau, R::zero(), t);
    }
    for e in [E2, E3, E4A, E4B] {
        cons.bound(e, R::zero(), R::infinity());
    }
    cons.add_row(one_hot(7, &[(TAU2, R::one()), (TAU3, R::one()), (TAU4, R::one())]), t);
    cons.add_row(one_hot(7, &[(E2, R::one()), (E4A, R::one())]), users[0].params.battery_energy);
    cons.add_row(one_hot(7, &[(E3, R::one()), (E4B, R::one())]), users[1].params.battery_energy);
    for (tau, members) in PHASES {
        for &(e, u) in members {
            cons.add_row(one_hot(7, &[(e, R::one()), (tau, -users[u].cap)]), R::zero());
            if users[u].min_drain > R::zero() {
                cons.add_row(one_hot(7, &[(e, -R::one()), (tau, users[u].min_drain)]), R::zero());
            }
        }
    }
    cons
}

/// Feasible-ish start: durations from the weight profile, each budget spread
/// over the user's phases in proportion to duration. Projection onto the
/// constraint set cleans up whatever this gets wrong.
pub(crate) fn seed_point<R: Real>(users: &[&ActiveUser<R>; 2], t: R, weights: [R; 3]) -> Vec<R> {
    let tau = [weights[0] * t, weights[1] * t, weights[2] * t];
    let mut x = vec![R::zero(); 7];
    x[TAU2] = tau[0];
    x[TAU3] = tau[1];
    x[TAU4] = tau[2];
    let share = |total: R, a: R, b: R| if a + b > R::zero() { total * a / (a + b) } else { R::zero() };
    x[E2] = share(users[0].params.battery_energy, tau[0], tau[2]);
    x[E4A] = share(users[0].params.battery_energy, tau[2], tau[0]);
    x[E3] = share(users[1].params.battery_energy, tau[1], tau[2]);
    x[E4B] = share(users[1].params.battery_energy, tau[2], tau[1]);
    x
}

/// Snaps microscopically open phases shut (duration and member energies to
/// zero) and clips stray negative energies, in the solver's variable layout.
pub(crate) fn snap_solution<R: Real>(x: &[R], t: R) -> Vec<R> {
    let snap = R::of(SNAP_FRACTION) * t;
    let mut y = x.to_vec();
    for (tau_idx, members) in PHASES {
        if y[tau_idx] <= snap {
            y[tau_idx] = R::zero();
            for &(e_idx, _) in members {
                y[e_idx] = R::zero();
            }
        } else {
            for &(e_idx, _) in members {
                y[e_idx] = y[e_idx].max(R::zero());
            }
        }
    }
    y
}

/// The plain sum-rate density of each phase, in `PHASES` order.
pub(crate) fn sum_densities<'a, R: Real>(
    users: &[&'a ActiveUser<R>; 2],
) -> Vec<Box<dyn PhaseDensity<R> + 'a>> {
    let mut densities: Vec<Box<dyn PhaseDensity<R> + 'a>> = Vec::with_capacity(PHASES.len());
    for &(_, members) in PHASES.iter() {
        densities.push(Box::new(SumDensity {
            members: members
                .iter()
                .map(|&(_, u)| MemberCurve {
                    gamma: users[u].params.circuit_cost,
                    model: &users[u].params.model,
                })
                .collect(),
        }));
    }
    densities
}

/// Certificate view of a snapped point: per-user constants and per-phase
/// drain profiles over the given densities (in `PHASES` order).
pub(crate) fn cert_parts<'a, R: Real>(
    users: &[&ActiveUser<R>; 2],
    y: &[R],
    densities: &'a [Box<dyn PhaseDensity<R> + 'a>],
) -> (Vec<CertUser<R>>, Vec<CertPhase<'a, R>>) {
    let cert_users: Vec<CertUser<R>> = users
        .iter()
        .enumerate()
        .map(|(u, a)| {
            let spent = PHASES
                .iter()
                .flat_map(|&(_, members)| members)
                .filter(|&&(_, owner)| owner == u)
                .fold(R::zero(), |acc, &(e_idx, _)| acc + y[e_idx]);
            CertUser { budget: a.params.battery_energy, spent, d_lo: a.min_drain, cap: a.cap }
        })
        .collect();
    let phases: Vec<CertPhase<R>> = PHASES
        .iter()
        .zip(densities)
        .map(|(&(tau_idx, members), density)| {
            let tau = y[tau_idx];
            CertPhase {
                tau,
                members: members
                    .iter()
                    .map(|&(e_idx, u)| {
                        (u, if tau > R::zero() { y[e_idx] / tau } else { R::zero() })
                    })
                    .collect(),
                density: density.as_ref(),
            }
        })
        .collect();
    (cert_users, phases)
}

/// Certifies a snapped solver point with the frame certificate and folds the
/// verdict into the report — `densities` must match the objective actually
/// maximized (the weighted region sweeps tilt the favored user's phases).
/// The projected-gradient status is discarded: its linear test cannot decide
/// corner schedules, this one can.
pub(crate) fn certified_report_with<R: Real>(
    users: &[&ActiveUser<R>; 2],
    cons: &LinearConstraintSet<R>,
    y: &[R],
    t: R,
    pg: &SolveReport<R>,
    tol: R,
    densities: &[Box<dyn PhaseDensity<R> + '_>],
) -> SolveReport<R> {
    let (cert_users, phases) = cert_parts(users, y, densities);
    let stat = frame_stationarity(&phases, &cert_users, t);
    let feas = cons.violation(y);
    let cert_tol = tol.max(R::of(1e-5));
    SolveReport {
        status: if stat <= cert_tol && feas <= R::of(1e-8) {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIterations
        },
        objective: pg.objective,
        stationarity_residual: stat,
        feasibility_residual: feas,
        iterations: pg.iterations,
    }
}

/// Rebuilds a frame allocation from a solver point, snapping microscopically
/// open phases shut, and re-evaluates the rate on the snapped allocation so
/// the returned number is exactly the objective of the returned schedule.
pub(crate) fn rebuild_allocation<R: Real>(
    instance: &TwoUserInstance<R>,
    x: &[R],
) -> FrameAllocation<R> {
    let t = instance.horizon;
    let snap = R::of(SNAP_FRACTION) * t;
    let mut alloc = FrameAllocation::empty();
    for (tau_idx, members) in PHASES {
        let tau = x[tau_idx];
        let phase = tau_idx + 1;
        if tau <= snap {
            continue;
        }
        alloc.durations[phase] = tau;
        for &(e_idx, u) in members {
            let params = &instance.users[u];
            let e = x[e_idx].max(R::zero()).min(params.battery_energy);
            let p = (params.model.g(e / tau) - params.circuit_cost).max(R::zero());
            alloc.drawn_energy[u][phase] = e;
            alloc.transmit_energy[u][phase] = tau * p;
        }
    }
    let used: R = alloc.durations.iter().fold(R::zero(), |a, &b| a + b);
    alloc.durations[0] = (t - used).max(R::zero());
    alloc
}

/// Picks the best candidate, preferring certified points: an uncertified
/// point wins only if no certified point comes within `tol` of its value.
pub(crate) fn select_candidate<R: Real>(
    candidates: Vec<(R, FrameAllocation<R>, SolveReport<R>)>,
    tol: R,
) -> Result<(R, FrameAllocation<R>, SolveReport<R>), Error> {
    let best = candidates
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1).0.partial_cmp(&(b.1).0).unwrap())
        .map(|(k, _)| k)
        .expect("at least one candidate");
    let best_rate = candidates[best].0;

    let chosen = if candidates[best].2.status == SolveStatus::Optimal {
        best
    } else {
        match candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.2.status == SolveStatus::Optimal && c.0 >= best_rate - tol)
            .max_by(|a, b| (a.1).0.partial_cmp(&(b.1).0).unwrap())
        {
            Some((k, _)) => k,
            None => {
                let mut report = candidates[best].2;
                report.objective = best_rate;
                return Err(Error::SolverFailure(report.to_f64()));
            }
        }
    };
    let (rate, alloc, mut report) = candidates.into_iter().nth(chosen).expect("index in range");
    report.objective = rate;
    Ok((rate, alloc, report))
}

/// Exhaustive oracle: scans phase-duration triples on a simplex lattice and
/// solves the remaining concave energy subproblem exactly at each node.
pub fn brute_force_hybrid<R: Real>(instance: &TwoUserInstance<R>, resolution: usize) -> R {
    assert!(resolution >= 4, "resolution too coarse to mean anything");
    let t = instance.horizon;
    let active: [Option<ActiveUser<R>>; 2] =
        [active_user(&instance.users[0], t), active_user(&instance.users[1], t)];
    if active.iter().all(Option::is_none) {
        return R::zero();
    }

    use rayon::prelude::*;
    let grid: Vec<Vec<R>> = crate::solver::simplex_grid(3, t, resolution).collect();
    grid.par_iter()
        .map(|tau| inner_energy_rate(&active, tau).unwrap_or(R::zero()))
        .reduce(|| R::zero(), |a, b| a.max(b))
}

/// Best rate for fixed durations (τ₂, τ₃, τ₄): a concave program in the four
/// energy variables alone.
fn inner_energy_rate<R: Real>(active: &[Option<ActiveUser<R>>; 2], tau: &[R]) -> Option<R> {
    let mut cons = LinearConstraintSet::new(4);
    // e-variable k belongs to (phase, user): 0=(2,1), 1=(3,2), 2=(4,1), 3=(4,2)
    let owners = [(0usize, 0usize), (1, 1), (2, 0), (2, 1)];
    let mut budget_rows: [Vec<R>; 2] = [vec![R::zero(); 4], vec![R::zero(); 4]];
    for (k, &(phase, u)) in owners.iter().enumerate() {
        match &active[u] {
            Some(user) if tau[phase] > R::zero() => {
                cons.bound(k, tau[phase] * user.min_drain, R::infinity());
                if user.peak.is_finite() {
                    cons.add_row(one_hot(4, &[(k, R::one())]), tau[phase] * user.peak);
                }
                budget_rows[u][k] = R::one();
            }
            _ => {
                cons.bound(k, R::zero(), R::zero());
            }
        }
    }
    for u in 0..2 {
        if let Some(user) = &active[u] {
            cons.add_row(budget_rows[u].clone(), user.params.battery_energy);
        }
    }

    let phase_power = |x: &[R], phase: usize| -> R {
        let mut p = R::zero();
        for (k, &(ph, u)) in owners.iter().enumerate() {
            if ph == phase {
                if let Some(user) = &active[u] {
                    p = p + user.params.model.g(x[k].max(R::zero()) / tau[phase])
                        - user.params.circuit_cost;
                }
            }
        }
        p.max(R::of(-0.999_999))
    };
    let value = |x: &[R]| {
        let mut total = R::zero();
        for phase in 0..3 {
            if tau[phase] > R::zero() {
                total = total + tau[phase] * phase_power(x, phase).ln_1p();
            }
        }
        total
    };
    let gradient = |x: &[R], out: &mut [R]| {
        out.fill(R::zero());
        for (k, &(phase, u)) in owners.iter().enumerate() {
            if tau[phase] <= R::zero() {
                continue;
            }
            if let Some(user) = &active[u] {
                let s = R::one() + phase_power(x, phase);
                out[k] = user.params.model.dg(x[k].max(R::zero()) / tau[phase]) / s;
            }
        }
    };

    let mut x0 = vec![R::zero(); 4];
    for (k, &(phase, u)) in owners.iter().enumerate() {
        if let Some(user) = &active[u] {
            let t_active: R = owners
                .iter()
                .filter(|&&(p, w)| w == u && tau[p] > R::zero())
                .map(|&(p, _)| tau[p])
                .fold(R::zero(), |a, b| a + b);
            if t_active > R::zero() && tau[phase] > R::zero() {
                x0[k] = user.params.battery_energy * tau[phase] / t_active;
            }
        }
    }
    let options = SolveOptions::default();
    match maximize_concave_linear(value, gradient, &cons, &x0, &options) {
        Ok((x, _)) => Some(value(&x)),
        Err(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::DischargeModel;

    fn symmetric(r: f64, b: f64, gamma: f64) -> TwoUserInstance<f64> {
        let model = if r == 0.0 {
            DischargeModel::ideal()
        } else {
            DischargeModel::quadratic(r).unwrap()
        };
        let user = UserParams::new(b, gamma, model).unwrap();
        TwoUserInstance::new([user.clone(), user], 1.0).unwrap()
    }

    #[test]
    fn noma_closed_form() {
        let (rate, alloc) = noma_sum_rate(&symmetric(0.3, 1.25, 0.5));
        // g(1.25) = 1.0416667 ⇒ per-user power 0.5416667
        assert!((rate - (2.0833333333333335f64).ln()).abs() < 1e-12);
        assert!((crate::nats_to_bits(rate) - 1.058894).abs() < 1e-6);
        assert_eq!(alloc.durations, [0.0, 0.0, 0.0, 1.0]);
        alloc.validate(&symmetric(0.3, 1.25, 0.5)).unwrap();
        assert!((alloc.sum_rate() - rate).abs() < 1e-12);
    }

    #[test]
    fn noma_ideal_zero_cost() {
        let (rate, _) = noma_sum_rate(&symmetric(0.0, 1.0, 0.0));
        assert!((rate - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn noma_circuit_eats_everything() {
        // γ set exactly to the delivered power at full-frame drain
        let model = DischargeModel::quadratic(0.3).unwrap();
        let gamma = model.g(1.25);
        let user = UserParams::new(1.25, gamma, model).unwrap();
        let instance = TwoUserInstance::new([user.clone(), user], 1.0).unwrap();
        let (rate, _) = noma_sum_rate(&instance);
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn tdma_symmetric_closed_form() {
        let (rate, taus) = tdma_sum_rate(&symmetric(0.3, 1.25, 0.5), 1e-9);
        // equal split, d = 2.5, g(2.5) = 5/3
        assert!((rate - (1.0_f64 + 5.0 / 3.0 - 0.5).ln()).abs() < 1e-6, "{rate}");
        assert!((crate::nats_to_bits(rate) - 1.115477).abs() < 1e-5);
        assert!((taus[0] - 0.5).abs() < 1e-5);
        assert!((taus[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn tdma_dead_user_degenerates_to_solo() {
        let dead: UserParams<f64> =
            UserParams::new(1.25, 0.5, DischargeModel::quadratic(10.0).unwrap()).unwrap();
        let live = UserParams::new(1.25, 0.5, DischargeModel::ideal()).unwrap();
        let instance = TwoUserInstance::new([live.clone(), dead], 1.0).unwrap();
        let (rate, taus) = tdma_sum_rate(&instance, 1e-9);
        let solo = instance.solo(0);
        assert!((rate - solo.rate).abs() < 1e-6);
        assert!((taus[0] - solo.duration).abs() < 1e-4);
        assert_eq!(taus[1], 0.0);
    }

    #[test]
    fn hybrid_matches_reference_sum_rate() {
        let (rate, alloc, report) = hybrid_sum_rate(&symmetric(0.3, 1.25, 0.5), 1e-6).unwrap();
        assert!(report.is_optimal(), "{report}");
        assert!(
            (crate::nats_to_bits(rate) - 1.127923).abs() < 2e-3,
            "{} bits",
            crate::nats_to_bits(rate)
        );
        alloc.validate(&symmetric(0.3, 1.25, 0.5)).unwrap();
        assert!((alloc.sum_rate() - rate).abs() < 1e-9);
    }

    #[test]
    fn hybrid_collapses_when_strategies_tie() {
        // Ideal battery, no circuit cost: every strategy yields T·ln(1+2B/T).
        let instance = symmetric(0.0, 1.0, 0.0);
        let (rate, _, _) = hybrid_sum_rate(&instance, 1e-6).unwrap();
        assert!((rate - 3.0f64.ln()).abs() < 1e-5, "{rate}");
    }

    #[test]
    fn hybrid_dominates_both_pure_strategies() {
        for (r, gamma) in [(0.3, 0.5), (0.5, 0.5), (0.0, 0.3), (0.8, 0.1)] {
            let instance = symmetric(r, 1.25, gamma);
            let (hybrid, _, _) = hybrid_sum_rate(&instance, 1e-6).unwrap();
            let (noma, _) = noma_sum_rate(&instance);
            let (tdma, _) = tdma_sum_rate(&instance, 1e-8);
            assert!(hybrid >= noma - 1e-6, "r={r} γ={gamma}: {hybrid} < noma {noma}");
            assert!(hybrid >= tdma - 1e-6, "r={r} γ={gamma}: {hybrid} < tdma {tdma}");
        }
    }

    #[test]
    fn hybrid_with_one_dead_user_is_a_solo_schedule() {
        let dead: UserParams<f64> =
            UserParams::new(1.25, 0.5, DischargeModel::quadratic(10.0).unwrap()).unwrap();
        let live = UserParams::new(1.25, 0.5, DischargeModel::ideal()).unwrap();
        let instance = TwoUserInstance::new([dead, live.clone()], 1.0).unwrap();
        let (rate, alloc, _) = hybrid_sum_rate(&instance, 1e-6).unwrap();
        let solo = instance.solo(1);
        assert!((rate - solo.rate).abs() < 1e-9);
        assert!(alloc.durations[1] == 0.0 && alloc.durations[3] == 0.0);
        alloc.validate(&instance).unwrap();
    }

    #[test]
    fn brute_force_brackets_the_solver() {
        let instance = symmetric(0.3, 1.25, 0.5);
        let (hybrid, _, _) = hybrid_sum_rate(&instance, 1e-6).unwrap();
        let coarse = brute_force_hybrid(&instance, 8);
        let fine = brute_force_hybrid(&instance, 16);
        assert!(coarse <= fine + 1e-9, "refinement must not lose value");
        assert!(fine <= hybrid + 1e-5, "oracle above the optimum: {fine} vs {hybrid}");
        assert!(fine >= hybrid - 2e-2, "oracle too far below: {fine} vs {hybrid}");
    }

    #[test]
    fn allocation_validation_catches_violations() {
        let instance = symmetric(0.3, 1.25, 0.5);
        let (_, mut alloc) = noma_sum_rate(&instance);
        alloc.drawn_energy[0][3] = 10.0; // blow the budget
        assert!(matches!(alloc.validate(&instance), Err(Error::AllocationInvalid(_))));
        let (_, mut alloc) = noma_sum_rate(&instance);
        alloc.drawn_energy[0][0] = 0.1; // idle phase must stay silent
        assert!(alloc.validate(&instance).is_err());
    }
}
