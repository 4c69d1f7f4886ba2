//! General U-user scheduling over the power-set frame.
//!
//! A frame for U users has one phase per subset of users (2^U phases, the
//! empty set being idle time). Sum-rate maximization is the same perspective
//! program as the two-user case, just indexed by subset bitmasks. The
//! two-user module builds its four-phase program by hand; this module builds
//! the general one mechanically, which makes the U = 2 agreement between the
//! two a meaningful cross-check rather than a tautology.

use std::collections::BTreeSet;

use crate::battery::{DischargeModel, UserParams};
use crate::certify::{
    best_phase_to_open, frame_stationarity, open_phase_balances, CertPhase, CertUser, MemberCurve,
    PhaseDensity, SumDensity,
};
use crate::solver::{
    maximize_concave_linear, LinearConstraintSet, SolveOptions, SolveReport, SolveStatus,
};
use crate::tdma::{equal_marginal_schedule, UserCurve};
use crate::{Error, Real};

/// Hard cap: the frame has 2^U phases, so this is a memory/runtime guard,
/// not a modeling limit.
pub const MAX_USERS: usize = 8;

const SNAP_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiUserInstance<R: Real> {
    pub users: Vec<UserParams<R>>,
    pub horizon: R,
}

impl<R: Real> MultiUserInstance<R> {
    pub fn new(users: Vec<UserParams<R>>, horizon: R) -> Result<Self, Error> {
        if users.is_empty() {
            return Err(Error::InvalidParameter("at least one user required".into()));
        }
        if users.len() > MAX_USERS {
            return Err(Error::TooManyUsers { requested: users.len(), max: MAX_USERS });
        }
        if !horizon.is_finite() || horizon <= R::zero() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive (got {horizon})"
            )));
        }
        Ok(MultiUserInstance { users, horizon })
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }
}

/// One phase of the frame: the subset of users transmitting together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseSet {
    /// 1-based position in the frame (the idle phase is index 1).
    pub index: usize,
    /// Bit u set ⇔ user u (0-based) transmits in this phase.
    pub members: u32,
}

impl PhaseSet {
    pub fn contains(&self, user: usize) -> bool {
        self.members >> user & 1 == 1
    }

    pub fn cardinality(&self) -> usize {
        self.members.count_ones() as usize
    }

    pub fn users(&self) -> impl Iterator<Item = usize> + '_ {
        (0..32).filter(|&u| self.contains(u))
    }
}

/// All 2^U phases of the frame, idle set first, in bitmask order.
pub fn enumerate_phases(user_count: usize) -> Result<Vec<PhaseSet>, Error> {
    if user_count == 0 {
        return Err(Error::InvalidParameter("at least one user required".into()));
    }
    if user_count > MAX_USERS {
        return Err(Error::TooManyUsers { requested: user_count, max: MAX_USERS });
    }
    Ok((0..1u32 << user_count)
        .map(|members| PhaseSet { index: members as usize + 1, members })
        .collect())
}

/// A full U-user schedule. Vectors are indexed `[user]` then `[phase
/// bitmask]`; `durations` by phase bitmask alone (entry 0 = idle time).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiFrameAllocation<R: Real> {
    pub durations: Vec<R>,
    pub drawn_energy: Vec<Vec<R>>,
    pub transmit_energy: Vec<Vec<R>>,
}

impl<R: Real> MultiFrameAllocation<R> {
    pub fn empty(user_count: usize) -> Self {
        let phases = 1usize << user_count;
        MultiFrameAllocation {
            durations: vec![R::zero(); phases],
            drawn_energy: vec![vec![R::zero(); phases]; user_count],
            transmit_energy: vec![vec![R::zero(); phases]; user_count],
        }
    }

    pub fn user_count(&self) -> usize {
        self.drawn_energy.len()
    }

    /// Sum-rate in nats: Σ_i τ_i·ln(1 + Σ_u E_i^(u)/τ_i).
    pub fn sum_rate(&self) -> R {
        self.subset_rate_bound(u32::MAX)
    }

    /// The cut bound for a user subset evaluated at this schedule:
    /// Σ_i τ_i·ln(1 + Σ_{u ∈ S ∩ 𝒰_i} E_i^(u)/τ_i). Any achievable rate
    /// vector must satisfy Σ_{u ∈ S} R_u ≤ this, for every S.
    pub fn subset_rate_bound(&self, subset: u32) -> R {
        let mut total = R::zero();
        for (mask, &tau) in self.durations.iter().enumerate() {
            if tau <= R::zero() {
                continue;
            }
            let mut e = R::zero();
            for u in 0..self.user_count() {
                if subset >> u & 1 == 1 && mask >> u & 1 == 1 {
                    e = e + self.transmit_energy[u][mask];
                }
            }
            total = total + tau * (e / tau).ln_1p();
        }
        total
    }

    /// Cardinalities of the phases actually used (τ above `threshold`),
    /// idle time excluded.
    pub fn active_cardinalities(&self, threshold: R) -> BTreeSet<usize> {
        self.durations
            .iter()
            .enumerate()
            .skip(1)
            .filter(|&(_, &tau)| tau > threshold)
            .map(|(mask, _)| mask.count_ones() as usize)
            .collect()
    }

    /// Checks every frame constraint at tolerance 1e−9.
    pub fn validate(&self, instance: &MultiUserInstance<R>) -> Result<(), Error> {
        let slack = R::of(1e-9);
        let u_count = instance.user_count();
        let phases = 1usize << u_count;
        if self.durations.len() != phases || self.drawn_energy.len() != u_count {
            return Err(Error::AllocationInvalid("allocation shape mismatch".into()));
        }
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
        for (u, params) in instance.users.iter().enumerate() {
            let spent: R = self.drawn_energy[u].iter().fold(R::zero(), |a, &b| a + b);
            if spent > params.battery_energy + slack {
                return Err(Error::AllocationInvalid(format!(
                    "user {} draws {spent} > budget {}",
                    u + 1,
                    params.battery_energy
                )));
            }
            let d0 = params.model.peak_discharge();
            for mask in 0..phases {
                let (tau, e) = (self.durations[mask], self.drawn_energy[u][mask]);
                let is_member = mask >> u & 1 == 1;
                if !is_member && (e != R::zero() || self.transmit_energy[u][mask] != R::zero()) {
                    return Err(Error::AllocationInvalid(format!(
                        "user {} must be silent in phase {}",
                        u + 1,
                        mask + 1
                    )));
                }
                if e < -slack {
                    return Err(Error::AllocationInvalid("negative drawn energy".into()));
                }
                if d0.is_finite() && e > tau * d0 + slack {
                    return Err(Error::AllocationInvalid(format!(
                        "user {} exceeds the discharge cap in phase {}",
                        u + 1,
                        mask + 1
                    )));
                }
                if tau > R::zero() {
                    // silent users (e = 0, or drain below the circuit cost)
                    // deliver nothing but owe nothing either
                    let limit =
                        (tau * (params.model.g(e / tau) - params.circuit_cost)).max(R::zero());
                    if self.transmit_energy[u][mask] > limit + slack {
                        return Err(Error::AllocationInvalid(format!(
                            "user {} transmit energy exceeds delivered energy in phase {}",
                            u + 1,
                            mask + 1
                        )));
                    }
                } else if self.transmit_energy[u][mask] != R::zero() {
                    return Err(Error::AllocationInvalid(
                        "transmit energy in a zero-length phase".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-user constants needed while building the program.
struct ActiveUser<R: Real> {
    params: UserParams<R>,
    min_drain: R,
    /// Finite drain bound used in the program rows: the efficient-range peak
    /// for lossy batteries, a synthetic never-binding level for lossless ones
    /// (optimal drains stay below ≈ 2e·(1+γ)). Tying energies to durations
    /// keeps iterates off the e > 0, τ = 0 rays.
    cap: R,
}

fn screen_users<R: Real>(users: &[UserParams<R>], horizon: R) -> Vec<Option<ActiveUser<R>>> {
    users
        .iter()
        .map(|params| {
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
            Some(ActiveUser { params: params.clone(), min_drain, cap })
        })
        .collect()
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

/// Variable layout of the general program: one duration per usable phase,
/// one drawn-energy variable per (phase, member).
struct ProgramLayout {
    /// (bitmask, τ-variable index)
    phases: Vec<(u32, usize)>,
    /// (bitmask, user, e-variable index), grouped by phase
    energies: Vec<(u32, usize, usize)>,
    dim: usize,
}

fn layout(user_count: usize, feasible_mask: u32) -> ProgramLayout {
    let mut phases = Vec::new();
    let mut energies = Vec::new();
    let mut next = 0usize;
    for mask in 1..(1u32 << user_count) {
        // Phases containing an excluded user duplicate the phase without it.
        if mask & !feasible_mask != 0 {
            continue;
        }
        phases.push((mask, next));
        next += 1;
        for u in 0..user_count {
            if mask >> u & 1 == 1 {
                energies.push((mask, u, 0)); // var index assigned below
            }
        }
    }
    for slot in energies.iter_mut() {
        slot.2 = next;
        next += 1;
    }
    ProgramLayout { phases, energies, dim: next }
}

/// Maximum sum-rate over the full power-set frame.
pub fn hybrid_sum_rate_multi<R: Real>(
    instance: &MultiUserInstance<R>,
    tol: R,
) -> Result<(R, MultiFrameAllocation<R>, SolveReport<R>), Error> {
    hybrid_sum_rate_multi_with(instance, &SolveOptions::with_tolerance(tol))
}

/// [`hybrid_sum_rate_multi`] with full control of the ascent options
/// (iteration cap, feasibility target).
pub fn hybrid_sum_rate_multi_with<R: Real>(
    instance: &MultiUserInstance<R>,
    options: &SolveOptions<R>,
) -> Result<(R, MultiFrameAllocation<R>, SolveReport<R>), Error> {
    let tol = options.tolerance;
    let t = instance.horizon;
    let u_count = instance.user_count();
    let active = screen_users(&instance.users, t);
    let feasible_mask: u32 =
        active.iter().enumerate().filter(|(_, a)| a.is_some()).map(|(u, _)| 1u32 << u).sum();
    if feasible_mask == 0 {
        return Ok((R::zero(), MultiFrameAllocation::empty(u_count), trivial_report(R::zero())));
    }

    let map = layout(u_count, feasible_mask);
    let mut cons = LinearConstraintSet::new(map.dim);
    let mut time_row = vec![R::zero(); map.dim];
    for &(_, tau_var) in &map.phases {
        cons.bound(tau_var, R::zero(), t);
        time_row[tau_var] = R::one();
    }
    cons.add_row(time_row, t);
    for (u, entry) in active.iter().enumerate() {
        let Some(user) = entry else { continue };
        let mut budget_row = vec![R::zero(); map.dim];
        for &(_, _, e_var) in map.energies.iter().filter(|&&(_, owner, _)| owner == u) {
            cons.bound(e_var, R::zero(), R::infinity());
            budget_row[e_var] = R::one();
        }
        cons.add_row(budget_row, user.params.battery_energy);
    }
    for &(mask, u, e_var) in &map.energies {
        let user = active[u].as_ref().expect("members are feasible by construction");
        let tau_var = map.phases.iter().find(|&&(m, _)| m == mask).expect("phase exists").1;
        let mut cap_row = vec![R::zero(); map.dim];
        cap_row[e_var] = R::one();
        cap_row[tau_var] = -user.cap;
        cons.add_row(cap_row, R::zero());
        if user.min_drain > R::zero() {
            let mut row = vec![R::zero(); map.dim];
            row[e_var] = -R::one();
            row[tau_var] = user.min_drain;
            cons.add_row(row, R::zero());
        }
    }

    // Per-phase member lists resolved to variable indices, for the objective.
    let mut phase_terms: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for &(mask, tau_var) in &map.phases {
        let members: Vec<(usize, usize)> = map
            .energies
            .iter()
            .filter(|&&(m, _, _)| m == mask)
            .map(|&(_, u, e_var)| (e_var, u))
            .collect();
        phase_terms.push((tau_var, members));
    }

    let freeze = R::of(1e-9) * t;
    let value = |x: &[R]| objective(&active, &phase_terms, freeze, x, None);
    let gradient = |x: &[R], out: &mut [R]| {
        objective(&active, &phase_terms, freeze, x, Some(out));
    };

    // One start per phase cardinality (time concentrated on subsets of that
    // size) plus a uniform spread over all phases.
    let live = feasible_mask.count_ones() as usize;
    let mut starts: Vec<Vec<R>> = Vec::new();
    starts.push(seed(&map, &active, t, None));
    for cardinality in 1..=live {
        starts.push(seed(&map, &active, t, Some(cardinality)));
    }

    let densities = phase_densities(&active, &map);
    let mut candidates: Vec<(R, MultiFrameAllocation<R>, SolveReport<R>)> = Vec::new();
    for x0 in starts {
        let (x, mut pg) = maximize_concave_linear(value, gradient, &cons, &x0, options)?;
        let mut y = snap_point(&map, &x, t);
        // Active-set moves on certification failure. Opening: a closed phase
        // whose best drain profile beats the marginal value of frame time
        // prices in, and the gradient flow can never reintroduce it (closed
        // phases have frozen partials) — seed it with a sliver and re-solve.
        // Pruning: otherwise close the open phase whose time is worth least
        // and re-solve without it, since shutting a phase exactly is the one
        // move projected gradients crawl at. The certificate gates every
        // step, so a wrong move only wastes a candidate; each phase reopens
        // at most once per start, which bounds the loop.
        let mut banned: Vec<u32> = Vec::new();
        let mut opened: Vec<u32> = Vec::new();
        loop {
            let alloc = rebuild(instance, &map, &y);
            let rate = alloc.sum_rate();
            let report = certified_report(&active, &map, &cons, &y, t, &pg, tol, &densities);
            let certified = report.status == SolveStatus::Optimal;
            candidates.push((rate, alloc, report));
            if certified {
                break;
            }
            let (cert_users, phases) = cert_structures(&active, &map, &y, &densities);
            let reopen = best_phase_to_open(&phases, &cert_users, t, tol.max(R::of(1e-5)))
                .map(|(k, drains)| (map.phases[k].0, k, drains))
                .filter(|(mask, _, _)| !opened.contains(mask));
            let mut x1 = y.clone();
            if let Some((mask, k, drains)) = reopen {
                opened.push(mask);
                banned.retain(|&m| m != mask);
                open_sliver(&map, &active, &mut x1, t, k, &drains);
            } else {
                let balances = open_phase_balances(&phases, &cert_users);
                let open: Vec<(u32, R)> = map
                    .phases
                    .iter()
                    .zip(&balances)
                    .filter_map(|(&(mask, _), b)| b.map(|b| (mask, b)))
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
            for &(mask, tau_var) in &map.phases {
                if !banned.contains(&mask) {
                    continue;
                }
                pinned.bound(tau_var, R::zero(), R::zero());
                x1[tau_var] = R::zero();
                for &(_, _, e_var) in map.energies.iter().filter(|&&(m, _, _)| m == mask) {
                    pinned.bound(e_var, R::zero(), R::zero());
                    x1[e_var] = R::zero();
                }
            }
            let (x2, pg2) = maximize_concave_linear(value, gradient, &pinned, &x1, options)?;
            y = snap_point(&map, &x2, t);
            pg = pg2;
        }
    }

    // An uncertified best wins only if no certified point comes within tol.
    let best = candidates
        .iter()
        .enumerate()
        .max_by(|a, b| (a.1).0.partial_cmp(&(b.1).0).unwrap())
        .map(|(k, _)| k)
        .expect("at least one start");
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

/// Reopens layout phase `k` in the point: carves out a time sliver (idle
/// time first, else a 2% shave off every open phase, which keeps their
/// drains intact) and runs the members at `drains`, each clipped to its
/// user's leftover budget. Small residual infeasibility is fine — the next
/// solve projects its start anyway.
fn open_sliver<R: Real>(
    map: &ProgramLayout,
    active: &[Option<ActiveUser<R>>],
    x: &mut [R],
    t: R,
    k: usize,
    drains: &[R],
) {
    let total: R = map.phases.iter().fold(R::zero(), |a, &(_, v)| a + x[v]);
    let idle = (t - total).max(R::zero());
    let shave = if idle >= R::of(0.02) * t { R::zero() } else { R::of(0.02) };
    if shave > R::zero() {
        for &(_, tau_var) in &map.phases {
            x[tau_var] = x[tau_var] * (R::one() - shave);
        }
        for &(_, _, e_var) in &map.energies {
            x[e_var] = x[e_var] * (R::one() - shave);
        }
    }
    let sliver = (idle + shave * total).min(t);
    let (mask, tau_var) = map.phases[k];
    x[tau_var] = sliver;
    let members: Vec<(usize, usize)> = map
        .energies
        .iter()
        .filter(|&&(m, _, _)| m == mask)
        .map(|&(_, u, e_var)| (u, e_var))
        .collect();
    for ((u, e_var), &d) in members.into_iter().zip(drains) {
        let budget = active[u].as_ref().expect("member feasible").params.battery_energy;
        let elsewhere: R = map
            .energies
            .iter()
            .filter(|&&(_, owner, v)| owner == u && v != e_var)
            .fold(R::zero(), |a, &(_, _, v)| a + x[v]);
        x[e_var] = (sliver * d).min((budget - elsewhere).max(R::zero()));
    }
}

/// Snaps microscopically open phases shut (duration and member energies to
/// zero) and clips stray negative energies, in the program's variable layout.
fn snap_point<R: Real>(map: &ProgramLayout, x: &[R], t: R) -> Vec<R> {
    let snap = R::of(SNAP_FRACTION) * t;
    let mut y = x.to_vec();
    for &(mask, tau_var) in &map.phases {
        let closed = y[tau_var] <= snap;
        if closed {
            y[tau_var] = R::zero();
        }
        for &(_, _, e_var) in map.energies.iter().filter(|&&(m, _, _)| m == mask) {
            y[e_var] = if closed { R::zero() } else { y[e_var].max(R::zero()) };
        }
    }
    y
}

/// One boxed sum-rate density per layout phase, in layout order.
fn phase_densities<'a, R: Real>(
    active: &'a [Option<ActiveUser<R>>],
    map: &ProgramLayout,
) -> Vec<Box<dyn PhaseDensity<R> + 'a>> {
    let mut densities: Vec<Box<dyn PhaseDensity<R> + 'a>> = Vec::with_capacity(map.phases.len());
    for &(mask, _) in &map.phases {
        densities.push(Box::new(SumDensity {
            members: map
                .energies
                .iter()
                .filter(|&&(m, _, _)| m == mask)
                .map(|&(_, u, _)| {
                    let user = active[u].as_ref().expect("member feasible");
                    MemberCurve { gamma: user.params.circuit_cost, model: &user.params.model }
                })
                .collect(),
        }));
    }
    densities
}

/// Certificate view of a snapped point: per-user constants (indexed densely
/// over the screened-in users) and per-phase drain profiles.
fn cert_structures<'a, R: Real>(
    active: &[Option<ActiveUser<R>>],
    map: &ProgramLayout,
    y: &[R],
    densities: &'a [Box<dyn PhaseDensity<R> + 'a>],
) -> (Vec<CertUser<R>>, Vec<CertPhase<'a, R>>) {
    let mut cert_index = vec![usize::MAX; active.len()];
    let mut cert_users: Vec<CertUser<R>> = Vec::new();
    for (u, entry) in active.iter().enumerate() {
        let Some(user) = entry else { continue };
        cert_index[u] = cert_users.len();
        let spent = map
            .energies
            .iter()
            .filter(|&&(_, owner, _)| owner == u)
            .fold(R::zero(), |acc, &(_, _, e_var)| acc + y[e_var]);
        cert_users.push(CertUser {
            budget: user.params.battery_energy,
            spent,
            d_lo: user.min_drain,
            cap: user.cap,
        });
    }
    let phases: Vec<CertPhase<R>> = map
        .phases
        .iter()
        .zip(densities)
        .map(|(&(mask, tau_var), density)| {
            let tau = y[tau_var];
            CertPhase {
                tau,
                members: map
                    .energies
                    .iter()
                    .filter(|&&(m, _, _)| m == mask)
                    .map(|&(_, u, e_var)| {
                        (cert_index[u], if tau > R::zero() { y[e_var] / tau } else { R::zero() })
                    })
                    .collect(),
                density: density.as_ref(),
            }
        })
        .collect();
    (cert_users, phases)
}

/// Certifies a snapped solver point with the frame certificate and folds the
/// verdict into the report. The projected-gradient status is discarded: its
/// linear test cannot decide corner schedules, this one can.
fn certified_report<R: Real>(
    active: &[Option<ActiveUser<R>>],
    map: &ProgramLayout,
    cons: &LinearConstraintSet<R>,
    y: &[R],
    t: R,
    pg: &SolveReport<R>,
    tol: R,
    densities: &[Box<dyn PhaseDensity<R> + '_>],
) -> SolveReport<R> {
    let (cert_users, phases) = cert_structures(active, map, y, densities);
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

fn mask_of(map: &ProgramLayout, e_var: usize) -> u32 {
    map.energies.iter().find(|&&(_, _, v)| v == e_var).map(|&(m, _, _)| m).unwrap_or(0)
}

fn tau_var_of(map: &ProgramLayout, mask: u32) -> usize {
    map.phases.iter().find(|&&(m, _)| m == mask).map(|&(_, v)| v).unwrap_or(0)
}

fn objective<R: Real>(
    active: &[Option<ActiveUser<R>>],
    phase_terms: &[(usize, Vec<(usize, usize)>)],
    freeze: R,
    x: &[R],
    grad: Option<&mut [R]>,
) -> R {
    let mut total = R::zero();
    let mut g = grad;
    if let Some(out) = g.as_deref_mut() {
        out.fill(R::zero());
    }
    for (tau_var, members) in phase_terms {
        let tau = x[*tau_var].max(R::of(1e-300));
        let mut power = R::zero();
        for &(e_var, u) in members {
            let user = active[u].as_ref().expect("member feasible");
            let d = x[e_var].max(R::zero()) / tau;
            power = power + user.params.model.g(d) - user.params.circuit_cost;
        }
        let power = power.max(R::of(-0.999_999));
        total = total + tau * power.ln_1p();
        // A closed phase contributes nothing, and its partials at the corner
        // are meaningless (the floored power makes them explode); whether
        // opening it pays is the certificate's question, not the gradient's.
        if x[*tau_var] <= freeze {
            continue;
        }
        if let Some(out) = g.as_deref_mut() {
            let s = R::one() + power;
            let mut tau_term = s.ln();
            for &(e_var, u) in members {
                let user = active[u].as_ref().expect("member feasible");
                let d = x[e_var].max(R::zero()) / tau;
                let slope = user.params.model.dg(d);
                out[e_var] = slope / s;
                tau_term = tau_term - d * slope / s;
            }
            out[*tau_var] = tau_term;
        }
    }
    total
}

/// Start point: time on phases of one cardinality (or spread uniformly when
/// `cardinality` is None), budgets split over each user's phases by duration.
fn seed<R: Real>(
    map: &ProgramLayout,
    active: &[Option<ActiveUser<R>>],
    t: R,
    cardinality: Option<usize>,
) -> Vec<R> {
    let mut x = vec![R::zero(); map.dim];
    let chosen: Vec<&(u32, usize)> = match cardinality {
        Some(n) => map.phases.iter().filter(|(m, _)| m.count_ones() as usize == n).collect(),
        None => map.phases.iter().collect(),
    };
    if chosen.is_empty() {
        return x;
    }
    let share = t * R::of(0.98) / R::of(chosen.len() as f64);
    for &&(_, tau_var) in &chosen {
        x[tau_var] = share;
    }
    for (u, entry) in active.iter().enumerate() {
        let Some(user) = entry else { continue };
        let mine: Vec<usize> = map
            .energies
            .iter()
            .filter(|&&(_, owner, _)| owner == u)
            .map(|&(_, _, e_var)| e_var)
            .collect();
        let t_active: R = map
            .energies
            .iter()
            .filter(|&&(_, owner, _)| owner == u)
            .map(|&(mask, _, _)| x[tau_var_of(map, mask)])
            .fold(R::zero(), |a, b| a + b);
        if t_active <= R::zero() {
            continue;
        }
        for e_var in mine {
            let tau = x[tau_var_of(map, mask_of(map, e_var))];
            x[e_var] = user.params.battery_energy * tau / t_active;
        }
    }
    x
}

fn rebuild<R: Real>(
    instance: &MultiUserInstance<R>,
    map: &ProgramLayout,
    x: &[R],
) -> MultiFrameAllocation<R> {
    let t = instance.horizon;
    let snap = R::of(SNAP_FRACTION) * t;
    let mut alloc = MultiFrameAllocation::empty(instance.user_count());
    for &(mask, tau_var) in &map.phases {
        let tau = x[tau_var];
        if tau <= snap {
            continue;
        }
        alloc.durations[mask as usize] = tau;
        for &(m, u, e_var) in map.energies.iter().filter(|&&(m, _, _)| m == mask) {
            let params = &instance.users[u];
            let e = x[e_var].max(R::zero()).min(params.battery_energy);
            let p = (params.model.g(e / tau) - params.circuit_cost).max(R::zero());
            alloc.drawn_energy[u][m as usize] = e;
            alloc.transmit_energy[u][m as usize] = tau * p;
        }
    }
    let used: R = alloc.durations.iter().fold(R::zero(), |a, &b| a + b);
    alloc.durations[0] = (t - used).max(R::zero());
    alloc
}

/// Everyone transmits over the whole frame. Closed form.
pub fn noma_sum_rate_multi<R: Real>(instance: &MultiUserInstance<R>) -> R {
    let t = instance.horizon;
    let mut power_sum = R::zero();
    for params in &instance.users {
        let d = (params.battery_energy / t).min(params.model.peak_discharge());
        let p = params.model.g(d) - params.circuit_cost;
        if p > R::zero() {
            power_sum = power_sum + p;
        }
    }
    t * power_sum.ln_1p()
}

/// Disjoint windows sized by equal-marginal water-filling.
///
/// Returns the rate and each user's transmit duration.
pub fn tdma_sum_rate_multi<R: Real>(instance: &MultiUserInstance<R>, _tol: R) -> (R, Vec<R>) {
    let curves: Vec<Option<UserCurve<R>>> =
        instance.users.iter().map(UserCurve::new).collect();
    let (durations, rate) = equal_marginal_schedule(&curves, instance.horizon);
    (rate, durations)
}

/// The three strategies' sum-rates for identical users with no circuit cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingWitness<R: Real> {
    pub tdma: R,
    pub noma: R,
    pub hybrid: R,
}

/// Computes the strict strategy ordering TDMA < NOMA ≤ Hybrid that holds for
/// identical zero-circuit-cost users on a strictly concave battery.
///
/// TDMA and NOMA come from closed forms (each user drains U·B/T in its
/// window, or B/T over the whole frame); the hybrid value comes from the
/// full solver. Requires U·B/T within the battery's efficient range.
pub fn zero_circuit_ordering<R: Real>(
    user_count: usize,
    battery_energy: R,
    model: &DischargeModel<R>,
    horizon: R,
) -> Result<OrderingWitness<R>, Error> {
    let user = UserParams::new(battery_energy, R::zero(), model.clone())?;
    let instance = MultiUserInstance::new(vec![user; user_count], horizon)?;
    let t = horizon;
    let u = R::of(user_count as f64);
    let pooled_drain = u * battery_energy / t;
    if pooled_drain > model.peak_discharge() {
        return Err(Error::PreconditionViolated(format!(
            "pooled drain {pooled_drain} exceeds the efficient discharge range"
        )));
    }
    let tdma = t * model.g(pooled_drain).ln_1p();
    let noma = t * (u * model.g(battery_energy / t)).ln_1p();
    let (hybrid, _, _) = hybrid_sum_rate_multi(&instance, R::of(1e-8))?;
    Ok(OrderingWitness { tdma, noma, hybrid })
}

/// True when the used phase cardinalities are at most two consecutive
/// integers — the structure optimal schedules always have.
pub fn cardinalities_consecutive(profile: &BTreeSet<usize>) -> bool {
    match (profile.iter().next(), profile.iter().next_back()) {
        (Some(&lo), Some(&hi)) => profile.len() <= 2 && hi - lo <= 1,
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::single_user;
    use crate::two_user::{self, TwoUserInstance};

    fn quad_user(b: f64, gamma: f64, r: f64) -> UserParams<f64> {
        let model = if r == 0.0 {
            DischargeModel::ideal()
        } else {
            DischargeModel::quadratic(r).unwrap()
        };
        UserParams::new(b, gamma, model).unwrap()
    }

    #[test]
    fn phase_enumeration_is_bitmask_ordered() {
        let phases = enumerate_phases(3).unwrap();
        assert_eq!(phases.len(), 8);
        assert_eq!(phases[0].index, 1);
        assert_eq!(phases[0].cardinality(), 0);
        assert_eq!(phases[7].members, 0b111);
        assert_eq!(phases[5].users().collect::<Vec<_>>(), vec![0, 2]);
        assert!(enumerate_phases(9).is_err());
        assert!(enumerate_phases(0).is_err());
    }

    #[test]
    fn single_user_frame_matches_dedicated_solver() {
        let user = quad_user(1.25, 0.5, 0.3);
        let instance = MultiUserInstance::new(vec![user.clone()], 1.0).unwrap();
        let (rate, alloc, report) = hybrid_sum_rate_multi(&instance, 1e-8).unwrap();
        assert!(report.is_optimal(), "{report}");
        let problem = single_user::SingleUserProblem::new(user, 1.0).unwrap();
        let solo = single_user::solve(&problem, 1e-12);
        assert!((rate - solo.rate).abs() < 1e-7, "{rate} vs {}", solo.rate);
        alloc.validate(&instance).unwrap();
    }

    #[test]
    fn two_user_frame_matches_hand_built_program() {
        for (r, gamma) in [(0.3, 0.5), (0.5, 0.2)] {
            let user = quad_user(1.25, gamma, r);
            let multi = MultiUserInstance::new(vec![user.clone(), user.clone()], 1.0).unwrap();
            let pair = TwoUserInstance::new([user.clone(), user], 1.0).unwrap();
            let (rate_multi, alloc, _) = hybrid_sum_rate_multi(&multi, 1e-8).unwrap();
            let (rate_pair, _, _) = two_user::hybrid_sum_rate(&pair, 1e-8).unwrap();
            assert!(
                (rate_multi - rate_pair).abs() < 1e-6,
                "r={r} γ={gamma}: {rate_multi} vs {rate_pair}"
            );
            alloc.validate(&multi).unwrap();
            assert!((alloc.sum_rate() - rate_multi).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_forms_match_two_user_module() {
        let user = quad_user(1.25, 0.5, 0.3);
        let multi = MultiUserInstance::new(vec![user.clone(), user.clone()], 1.0).unwrap();
        let pair = TwoUserInstance::new([user.clone(), user], 1.0).unwrap();
        assert!((noma_sum_rate_multi(&multi) - two_user::noma_sum_rate(&pair).0).abs() < 1e-12);
        let (rate_multi, durations) = tdma_sum_rate_multi(&multi, 1e-9);
        let (rate_pair, _) = two_user::tdma_sum_rate(&pair, 1e-9);
        assert!((rate_multi - rate_pair).abs() < 1e-9);
        assert_eq!(durations.len(), 2);
    }

    #[test]
    fn subset_bound_is_monotone_and_caps_at_sum_rate() {
        let user = quad_user(1.25, 0.5, 0.3);
        let instance =
            MultiUserInstance::new(vec![user.clone(), user.clone(), user], 1.0).unwrap();
        let (rate, alloc, _) = hybrid_sum_rate_multi(&instance, 1e-7).unwrap();
        let full = alloc.subset_rate_bound(0b111);
        assert!((full - rate).abs() < 1e-9);
        for s in 1u32..8 {
            let sub = alloc.subset_rate_bound(s);
            assert!(sub <= full + 1e-12);
            for t in 1u32..8 {
                if s & t == s {
                    assert!(alloc.subset_rate_bound(t) >= sub - 1e-12);
                }
            }
        }
    }

    #[test]
    fn excluded_user_does_not_distort_the_schedule() {
        let dead = quad_user(1.25, 0.5, 10.0);
        let live = quad_user(1.25, 0.5, 0.3);
        assert!(!dead.can_power_circuit());
        let with_dead =
            MultiUserInstance::new(vec![live.clone(), dead, live.clone()], 1.0).unwrap();
        let without = MultiUserInstance::new(vec![live.clone(), live], 1.0).unwrap();
        let (rate_with, alloc, _) = hybrid_sum_rate_multi(&with_dead, 1e-8).unwrap();
        let (rate_without, _, _) = hybrid_sum_rate_multi(&without, 1e-8).unwrap();
        assert!((rate_with - rate_without).abs() < 1e-6);
        alloc.validate(&with_dead).unwrap();
        assert!(alloc.drawn_energy[1].iter().all(|&e| e == 0.0));
    }

    #[test]
    fn ordering_witness_is_strict_for_concave_batteries() {
        let model = DischargeModel::quadratic(0.5).unwrap();
        let witness = zero_circuit_ordering(2, 0.5, &model, 1.0).unwrap();
        assert!(witness.tdma < witness.noma - 1e-4, "{witness:?}");
        assert!(witness.noma <= witness.hybrid + 1e-6, "{witness:?}");
    }

    #[test]
    fn ordering_witness_rejects_out_of_range_drains() {
        let model = DischargeModel::quadratic(1.0).unwrap();
        // D0 = 1.125; pooled drain 3·1.25 = 3.75 > D0
        let err = zero_circuit_ordering(3, 1.25, &model, 1.0).unwrap_err();
        assert!(matches!(err, Error::PreconditionViolated(_)));
    }

    #[test]
    fn active_profile_of_reference_schedule_is_consecutive() {
        let user = quad_user(1.25, 0.5, 0.3);
        let instance = MultiUserInstance::new(vec![user.clone(), user], 1.0).unwrap();
        let (_, alloc, _) = hybrid_sum_rate_multi(&instance, 1e-8).unwrap();
        let profile = alloc.active_cardinalities(1e-6);
        assert!(cardinalities_consecutive(&profile), "{profile:?}");
        assert!(!profile.is_empty());
    }

    #[test]
    fn consecutive_check_rejects_gaps() {
        let gap: BTreeSet<usize> = [1, 3].into_iter().collect();
        assert!(!cardinalities_consecutive(&gap));
        let triple: BTreeSet<usize> = [1, 2, 3].into_iter().collect();
        assert!(!cardinalities_consecutive(&triple));
        let pair: BTreeSet<usize> = [2, 3].into_iter().collect();
        assert!(cardinalities_consecutive(&pair));
        assert!(cardinalities_consecutive(&BTreeSet::new()));
    }
}
