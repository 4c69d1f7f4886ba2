//! Two-user achievable rate regions.
//!
//! The hybrid region boundary runs from (0, C²) to (C¹, 0) through four
//! marked points: A and D are the interference-limited corners (one user
//! pinned at its solo optimum), and B–C is the straight maximum-sum-rate
//! segment swept out by the decode order in the joint phase. The curved
//! stretches A–B and C–D come from weighted sum-rate maximization: a point
//! with user u's clean rate held at a target is the maximizer of
//! λ·R_u + R_sum for the right dual weight λ ≥ 0, found by bisection.

use crate::battery::DischargeModel;
use crate::certify::{
    best_phase_to_open, best_window_to_open, open_phase_balances, windowed_stationarity,
    CertPhase, CertUser, FavoredSumDensity, MemberCurve, PhaseDensity, SumDensity,
};
use crate::solver::{maximize_concave_linear, LinearConstraintSet, SolveOptions, SolveStatus};
use crate::two_user::{
    self, active_user, frame_constraints, rebuild_allocation, seed_point, snap_solution,
    ActiveUser, FrameAllocation, TwoUserInstance, E2, E3, E4A, E4B, TAU2, TAU3, TAU4,
};
use crate::{Error, Real, Strategy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint<R: Real> {
    pub r1: R,
    pub r2: R,
}

impl<R: Real> RatePoint<R> {
    pub fn new(r1: R, r2: R) -> Self {
        RatePoint { r1, r2 }
    }

    /// Same point with both coordinates converted from nats to bits.
    pub fn in_bits(self) -> Self {
        let scale = R::of(std::f64::consts::LOG2_E);
        RatePoint { r1: self.r1 * scale, r2: self.r2 * scale }
    }
}

/// The four marked points of the hybrid boundary, in boundary order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CornerLabel {
    /// User 2 at its solo optimum, user 1 interference-limited.
    A,
    /// Left end of the maximum-sum segment (user 1 decoded first).
    B,
    /// Right end of the maximum-sum segment (user 2 decoded first).
    C,
    /// User 1 at its solo optimum, user 2 interference-limited.
    D,
}

impl std::fmt::Display for CornerLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// A boundary polyline, r1 non-decreasing, with the marked points'
/// positions. Rates are in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionBoundary<R: Real> {
    pub points: Vec<RatePoint<R>>,
    pub labels: Vec<(CornerLabel, usize)>,
}

impl<R: Real> RegionBoundary<R> {
    pub fn max_r1(&self) -> R {
        self.points.iter().map(|p| p.r1).fold(R::zero(), |a, b| a.max(b))
    }

    /// Height of the boundary at `r1`, by linear interpolation along the
    /// polyline. Vertical stretches report their upper end. `None` outside
    /// the traced range.
    pub fn r2_at(&self, r1: R) -> Option<R> {
        let tiny = R::of(1e-12) * (R::one() + self.max_r1());
        let first = self.points.first()?;
        if r1 < first.r1 - tiny || r1 > self.max_r1() + tiny {
            return None;
        }
        let mut best: Option<R> = None;
        if (r1 - first.r1).abs() <= tiny {
            best = Some(first.r2);
        }
        for pair in self.points.windows(2) {
            let (p, q) = (pair[0], pair[1]);
            let (lo, hi) = (p.r1.min(q.r1), p.r1.max(q.r1));
            if r1 < lo - tiny || r1 > hi + tiny {
                continue;
            }
            let value = if hi - lo <= tiny {
                p.r2.max(q.r2)
            } else {
                let theta = ((r1 - p.r1) / (q.r1 - p.r1)).max(R::zero()).min(R::one());
                p.r2 + theta * (q.r2 - p.r2)
            };
            best = Some(best.map_or(value, |b: R| b.max(value)));
        }
        best
    }

    /// True when every vertex of `other` lies inside this region, up to
    /// `tol` in rate.
    pub fn contains(&self, other: &RegionBoundary<R>, tol: R) -> bool {
        other.points.iter().all(|p| {
            if p.r1 > self.max_r1() + tol {
                return false;
            }
            let r1 = p.r1.min(self.max_r1());
            match self.r2_at(r1) {
                Some(height) => p.r2 <= height + tol,
                None => false,
            }
        })
    }
}

/// Rate split of a maximum-sum allocation as the joint phase's decode order
/// sweeps from user 2 first (`alpha` = 0, point C) to user 1 first
/// (`alpha` = 1, point B). Every split has the same sum — the B–C segment.
pub fn sum_segment_point<R: Real>(alloc: &FrameAllocation<R>, alpha: R) -> RatePoint<R> {
    debug_assert!(alpha >= -R::of(1e-12) && alpha <= R::one() + R::of(1e-12));
    let solo = |tau: R, e: R| if tau > R::zero() { tau * (e / tau).ln_1p() } else { R::zero() };
    let r1_solo = solo(alloc.durations[1], alloc.transmit_energy[0][1]);
    let r2_solo = solo(alloc.durations[2], alloc.transmit_energy[1][2]);

    let tau = alloc.durations[3];
    let (mut r1_joint, mut r2_joint) = (R::zero(), R::zero());
    if tau > R::zero() {
        let (e1, e2) = (alloc.transmit_energy[0][3], alloc.transmit_energy[1][3]);
        let total = tau + e1 + e2;
        // user u decoded first sees the other as noise; decoded second it
        // gets the clean channel
        let r1_first = (total / (tau + e2)).ln();
        let r1_second = (e1 / tau).ln_1p();
        let r2_first = (total / (tau + e1)).ln();
        let r2_second = (e2 / tau).ln_1p();
        r1_joint = tau * (alpha * r1_first + (R::one() - alpha) * r1_second);
        r2_joint = tau * (alpha * r2_second + (R::one() - alpha) * r2_first);
    }
    RatePoint::new(r1_solo + r1_joint, r2_solo + r2_joint)
}

/// The boundary corner where `user`'s rate is maximized subject to the peer
/// transmitting its solo-optimal schedule: `user` = 0 gives corner A,
/// `user` = 1 gives corner D.
///
/// The favored user splits its budget between the peer's transmission window
/// (decoded first, so the peer's power appears as noise) and the remaining
/// frame time (clean channel).
pub fn corner_peer_max<R: Real>(
    instance: &TwoUserInstance<R>,
    user: usize,
    tol: R,
) -> Result<RatePoint<R>, Error> {
    assert!(user < 2, "user index out of range");
    let peer = 1 - user;
    let peer_solo = instance.solo(peer);
    if !peer_solo.feasible {
        return Err(Error::PeerInfeasible);
    }
    let ordered = |mine: R| {
        if user == 0 {
            RatePoint::new(mine, peer_solo.rate)
        } else {
            RatePoint::new(peer_solo.rate, mine)
        }
    };
    let Some(me) = active_user(&instance.users[user], instance.horizon) else {
        return Ok(ordered(R::zero()));
    };

    let t = instance.horizon;
    let noise = R::one() + peer_solo.transmit_power;
    let tiny = R::of(1e-12) * t;
    // (window length, interference level) per phase the user may occupy
    let mut windows: Vec<(R, R)> = Vec::new();
    if peer_solo.duration > tiny {
        windows.push((peer_solo.duration, noise));
    }
    let solo_window = (t - peer_solo.duration).max(R::zero());
    if solo_window > tiny {
        windows.push((solo_window, R::one()));
    }
    if windows.is_empty() {
        return Ok(ordered(R::zero()));
    }

    let n = windows.len();
    let mut cons = LinearConstraintSet::new(2 * n);
    let mut budget_row = vec![R::zero(); 2 * n];
    for (k, &(t_max, _)) in windows.iter().enumerate() {
        let (tau_var, e_var) = (k, n + k);
        cons.bound(tau_var, R::zero(), t_max);
        cons.bound(e_var, R::zero(), R::infinity());
        budget_row[e_var] = R::one();
        let mut row = vec![R::zero(); 2 * n];
        row[e_var] = R::one();
        row[tau_var] = -me.cap;
        cons.add_row(row, R::zero());
        if me.min_drain > R::zero() {
            let mut row = vec![R::zero(); 2 * n];
            row[e_var] = -R::one();
            row[tau_var] = me.min_drain;
            cons.add_row(row, R::zero());
        }
    }
    cons.add_row(budget_row, me.params.battery_energy);

    let gamma = me.params.circuit_cost;
    let freeze = R::of(1e-9) * t;
    let value = |x: &[R]| {
        let mut total = R::zero();
        for (k, &(_, w)) in windows.iter().enumerate() {
            let tau = x[k].max(R::of(1e-300));
            let d = x[n + k].max(R::zero()) / tau;
            let s = (w + me.params.model.g(d) - gamma).max(R::of(1e-6) * w);
            total = total + tau * (s / w).ln();
        }
        total
    };
    let gradient = |x: &[R], out: &mut [R]| {
        out.fill(R::zero());
        for (k, &(_, w)) in windows.iter().enumerate() {
            // closed windows keep a zero gradient: the corner partials are
            // meaningless, and reopening is judged by the certificate
            if x[k] <= freeze {
                continue;
            }
            let tau = x[k].max(R::of(1e-300));
            let d = x[n + k].max(R::zero()) / tau;
            let s = (w + me.params.model.g(d) - gamma).max(R::of(1e-6) * w);
            let slope = me.params.model.dg(d);
            out[n + k] = slope / s;
            out[k] = (s / w).ln() - d * slope / s;
        }
    };

    // budget concentrated per window, plus an even spread
    let mut starts: Vec<Vec<R>> = Vec::new();
    for heavy in 0..=n {
        let mut x0 = vec![R::zero(); 2 * n];
        for (k, &(t_max, _)) in windows.iter().enumerate() {
            x0[k] = t_max * R::of(0.9);
            let share = if heavy == n {
                R::one() / R::of(n as f64)
            } else if heavy == k {
                R::of(0.95)
            } else {
                R::of(0.05)
            };
            x0[n + k] = me.params.battery_energy * share;
        }
        starts.push(x0);
    }

    let options = SolveOptions { tolerance: tol.max(R::of(1e-10)), ..SolveOptions::default() };
    let limits: Vec<R> = windows.iter().map(|&(t_max, _)| t_max).collect();
    let densities: Vec<NoisyDensity<R>> = windows
        .iter()
        .map(|&(_, w)| NoisyDensity { gamma, noise: w, model: &me.params.model })
        .collect();
    // snap microscopically open windows shut
    let snap = R::of(1e-6) * t;
    let snap_windows = |x: &[R]| {
        let mut y = x.to_vec();
        for k in 0..n {
            if y[k] <= snap {
                y[k] = R::zero();
                y[n + k] = R::zero();
            } else {
                y[n + k] = y[n + k].max(R::zero());
            }
        }
        y
    };
    let window_rate = |y: &[R]| {
        let mut rate = R::zero();
        for (k, &(_, w)) in windows.iter().enumerate() {
            if y[k] <= R::zero() {
                continue;
            }
            let e = y[n + k].min(me.params.battery_energy);
            let p = (me.params.model.g(e / y[k]) - gamma).max(R::zero());
            rate = rate + y[k] * (p / w).ln_1p();
        }
        rate
    };
    let cert_view = |y: &[R]| {
        let phases: Vec<CertPhase<R>> = windows
            .iter()
            .enumerate()
            .map(|(k, _)| CertPhase {
                tau: y[k],
                members: vec![(
                    0,
                    if y[k] > R::zero() { y[n + k] / y[k] } else { R::zero() },
                )],
                density: &densities[k],
            })
            .collect();
        let spent = (0..n).fold(R::zero(), |acc, k| acc + y[n + k]);
        let user = [CertUser {
            budget: me.params.battery_energy,
            spent,
            d_lo: me.min_drain,
            cap: me.cap,
        }];
        (phases, user)
    };

    let mut best: Option<(R, bool, crate::solver::SolveReport<f64>)> = None;
    for x0 in starts {
        let (x, mut pg) = maximize_concave_linear(value, gradient, &cons, &x0, &options)?;
        let mut y = snap_windows(&x);
        // reopen a closed window the certificate prices in, or close the
        // least valuable one and re-solve when certification fails — the
        // ascent can neither reopen a window (frozen partials) nor shut one
        // exactly, so both moves belong to this loop
        let mut banned: Vec<usize> = Vec::new();
        let mut opened: Vec<usize> = Vec::new();
        loop {
            let rate = window_rate(&y);
            let (phases, cert_user) = cert_view(&y);
            let stat = windowed_stationarity(&phases, &limits, &cert_user);
            let feas = cons.violation(&y);
            let optimal = stat <= tol.max(R::of(1e-5)) && feas <= R::of(1e-8);
            let report = crate::solver::SolveReport {
                status: if optimal { SolveStatus::Optimal } else { SolveStatus::MaxIterations },
                objective: rate,
                stationarity_residual: stat,
                feasibility_residual: feas,
                iterations: pg.iterations,
            }
            .to_f64();

            let better = match &best {
                None => true,
                Some((best_rate, best_optimal, _)) => {
                    (optimal && !*best_optimal && rate >= *best_rate - tol)
                        || (optimal == *best_optimal && rate > *best_rate)
                }
            };
            if better {
                best = Some((rate, optimal, report));
            }
            if optimal {
                break;
            }
            let reopen = best_window_to_open(&phases, &cert_user, tol.max(R::of(1e-5)))
                .filter(|&(k, _)| limits[k] > R::zero() && !opened.contains(&k));
            let mut x1 = y.clone();
            if let Some((k, drains)) = reopen {
                opened.push(k);
                banned.retain(|&b| b != k);
                // reopen the window outright at the certificate's drain,
                // clipped to the leftover budget; shrinking it back is
                // interior motion the ascent handles fine
                x1[k] = limits[k];
                let elsewhere =
                    (0..n).filter(|&j| j != k).fold(R::zero(), |a, j| a + x1[n + j]);
                x1[n + k] = (limits[k] * drains[0])
                    .min((me.params.battery_energy - elsewhere).max(R::zero()));
            } else {
                let balances = open_phase_balances(&phases, &cert_user);
                let open: Vec<(usize, R)> =
                    (0..n).filter_map(|k| balances[k].map(|b| (k, b))).collect();
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
            for &k in &banned {
                pinned.bound(k, R::zero(), R::zero());
                pinned.bound(n + k, R::zero(), R::zero());
                x1[k] = R::zero();
                x1[n + k] = R::zero();
            }
            let (x2, pg2) = maximize_concave_linear(value, gradient, &pinned, &x1, &options)?;
            y = snap_windows(&x2);
            pg = pg2;
        }
    }
    let (rate, optimal, report) = best.expect("at least one start");
    if !optimal {
        return Err(Error::SolverFailure(report));
    }
    Ok(ordered(rate))
}

/// Rate density of one user transmitting against fixed interference:
/// v(d) = ln(1 + (g(d) − γ)/noise) with noise = 1 + interference power.
struct NoisyDensity<'a, R: Real> {
    gamma: R,
    noise: R,
    model: &'a DischargeModel<R>,
}

impl<R: Real> PhaseDensity<R> for NoisyDensity<'_, R> {
    fn value(&self, d: &[R]) -> R {
        let p = ((self.model.g(d[0]) - self.gamma) / self.noise).max(R::of(-0.999_999));
        p.ln_1p()
    }

    fn grad(&self, d: &[R], out: &mut [R]) {
        let p = ((self.model.g(d[0]) - self.gamma) / self.noise).max(R::of(-0.999_999));
        out[0] = self.model.dg(d[0]) / (self.noise * (R::one() + p));
    }
}

/// Decode-order α that gives the favored user the clean channel in the
/// joint phase.
fn clean_alpha<R: Real>(favored: usize) -> R {
    if favored == 0 {
        R::zero()
    } else {
        R::one()
    }
}

/// Solves max λ·R_fav + R_sum over the frame and reports the boundary point
/// and the favored user's clean rate.
fn weighted_boundary_solve<R: Real>(
    instance: &TwoUserInstance<R>,
    users: &[&ActiveUser<R>; 2],
    cons: &LinearConstraintSet<R>,
    favored: usize,
    lambda: R,
    warm: Option<&[R]>,
    tol: R,
) -> Result<(Vec<R>, RatePoint<R>), Error> {
    let t = instance.horizon;
    // the favored user's (duration, energy) variable pairs
    let mine: [(usize, usize); 2] =
        if favored == 0 { [(TAU2, E2), (TAU4, E4A)] } else { [(TAU3, E3), (TAU4, E4B)] };
    let fav = users[favored];
    let gamma = fav.params.circuit_cost;

    let freeze = R::of(1e-9) * t;
    let clean_rate = |x: &[R]| {
        let mut total = R::zero();
        for &(tau_var, e_var) in &mine {
            let tau = x[tau_var].max(R::of(1e-300));
            let d = x[e_var].max(R::zero()) / tau;
            total = total + tau * (fav.params.model.g(d) - gamma).max(R::of(-0.999_999)).ln_1p();
        }
        total
    };
    let value = |x: &[R]| two_user::hybrid_objective_at(users, x) + lambda * clean_rate(x);
    let gradient = |x: &[R], out: &mut [R]| {
        two_user::hybrid_gradient_at(users, freeze, x, out);
        for &(tau_var, e_var) in &mine {
            // matches the base objective: closed phases keep a zero gradient
            if x[tau_var] <= freeze {
                continue;
            }
            let tau = x[tau_var].max(R::of(1e-300));
            let d = x[e_var].max(R::zero()) / tau;
            let s = R::one() + (fav.params.model.g(d) - gamma).max(R::of(-0.999_999));
            let slope = fav.params.model.dg(d);
            out[e_var] = out[e_var] + lambda * slope / s;
            out[tau_var] = out[tau_var] + lambda * (s.ln() - d * slope / s);
        }
    };

    let options = SolveOptions { tolerance: tol, ..SolveOptions::default() };
    let mut attempts: Vec<Vec<R>> = Vec::new();
    if let Some(x0) = warm {
        attempts.push(x0.to_vec());
    }
    let third = R::of(1.0 / 3.0);
    attempts.push(seed_point(users, t, [third, third, third]));
    attempts.push(seed_point(users, t, [R::of(0.02), R::of(0.02), R::of(0.96)]));
    attempts.push(seed_point(users, t, [R::of(0.49), R::of(0.49), R::of(0.02)]));

    // the certifier's densities must include the λ-tilt on the favored
    // user's phases, matching `value` exactly
    let mut densities: Vec<Box<dyn PhaseDensity<R> + '_>> =
        Vec::with_capacity(two_user::PHASES.len());
    for &(_, members) in two_user::PHASES.iter() {
        let base = SumDensity {
            members: members
                .iter()
                .map(|&(_, u)| MemberCurve {
                    gamma: users[u].params.circuit_cost,
                    model: &users[u].params.model,
                })
                .collect(),
        };
        match members.iter().position(|&(_, u)| u == favored) {
            Some(slot) if lambda > R::zero() => densities.push(Box::new(FavoredSumDensity {
                base,
                favored_slot: slot,
                weight: lambda,
            })),
            _ => densities.push(Box::new(base)),
        }
    }

    let mut fallback: Option<(R, crate::solver::SolveReport<R>)> = None;
    for x0 in attempts {
        let (x, pg) = maximize_concave_linear(value, gradient, cons, &x0, &options)?;
        let mut y = snap_solution(&x, t);
        let mut pg = pg;
        let mut banned: Vec<usize> = Vec::new();
        let mut opened: Vec<usize> = Vec::new();
        loop {
            let report =
                two_user::certified_report_with(users, cons, &y, t, &pg, tol, &densities);
            if report.status == SolveStatus::Optimal {
                let alloc = rebuild_allocation(instance, &y);
                let point = sum_segment_point(&alloc, clean_alpha(favored));
                return Ok((y, point));
            }
            let v = value(&y);
            if fallback.as_ref().is_none_or(|(fv, _)| v > *fv) {
                fallback = Some((v, report));
            }
            // reopen a closed phase the certificate prices in (the ascent
            // cannot: closed phases have frozen partials); otherwise close
            // the weakest open phase exactly and retry — swinging a duration
            // through zero is the other move the ascent crawls at
            let (cert_users, phases) = two_user::cert_parts(users, &y, &densities);
            let reopen = best_phase_to_open(&phases, &cert_users, t, tol.max(R::of(1e-5)))
                .filter(|&(k, _)| !opened.contains(&k));
            let mut x1 = y.clone();
            if let Some((k, drains)) = reopen {
                opened.push(k);
                banned.retain(|&b| b != k);
                two_user::open_sliver(users, &mut x1, t, k, &drains);
            } else {
                let balances = open_phase_balances(&phases, &cert_users);
                let open: Vec<(usize, R)> = balances
                    .iter()
                    .enumerate()
                    .filter_map(|(k, b)| b.map(|bal| (k, bal)))
                    .collect();
                if open.len() <= 1 {
                    break;
                }
                let (worst, _) = open
                    .iter()
                    .copied()
                    .fold(open[0], |acc, cur| if cur.1 < acc.1 { cur } else { acc });
                banned.push(worst);
            }
            let mut pinned = cons.clone();
            for &k in &banned {
                let (tau_var, members) = two_user::PHASES[k];
                pinned.bound(tau_var, R::zero(), R::zero());
                x1[tau_var] = R::zero();
                for &(e_var, _) in members {
                    pinned.bound(e_var, R::zero(), R::zero());
                    x1[e_var] = R::zero();
                }
            }
            let (x2, pg2) = maximize_concave_linear(value, gradient, &pinned, &x1, &options)?;
            y = snap_solution(&x2, t);
            pg = pg2;
        }
    }
    let (_, report) = fallback.expect("at least one attempt");
    Err(Error::SolverFailure(report.to_f64()))
}

/// Boundary points on the curved arc where the favored user's clean rate is
/// pinned to each target (nats). Used for arc A–B with `favored` = 1 and arc
/// C–D with `favored` = 0.
pub fn boundary_arc<R: Real>(
    instance: &TwoUserInstance<R>,
    favored: usize,
    targets: &[R],
    tol: R,
) -> Result<Vec<RatePoint<R>>, Error> {
    assert!(favored < 2, "user index out of range");
    let peer = 1 - favored;
    let active = [
        active_user(&instance.users[0], instance.horizon),
        active_user(&instance.users[1], instance.horizon),
    ];
    if active[peer].is_none() {
        return Err(Error::PeerInfeasible);
    }
    if active[favored].is_none() {
        return Err(Error::InvalidParameter(
            "favored user cannot power its circuit".into(),
        ));
    }
    let users = [active[0].as_ref().unwrap(), active[1].as_ref().unwrap()];
    let cons = frame_constraints(&users, instance.horizon);
    let fav_rate = |p: &RatePoint<R>| if favored == 0 { p.r1 } else { p.r2 };

    // achievable range: from the favored rate at the sum optimum up to solo
    let (x_sum, point_sum) =
        weighted_boundary_solve(instance, &users, &cons, favored, R::zero(), None, tol)?;
    let lo = fav_rate(&point_sum);
    let hi = instance.solo(favored).rate;
    let slack = R::of(1e-6) * (R::one() + hi) + tol;
    for &target in targets {
        if target < lo - slack || target > hi + slack {
            return Err(Error::TargetOutOfRange {
                target: target.as_f64(),
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
    }

    let tol_rate = (tol + R::of(1e-9)) * (R::one() + hi);
    let mut warm = x_sum.clone();
    let mut points = Vec::with_capacity(targets.len());
    for &target in targets {
        if target <= lo + tol_rate {
            points.push(point_sum);
            continue;
        }
        // bracket the dual weight by doubling, then bisect
        let mut lo_end = (R::zero(), point_sum);
        let mut hi_end: Option<(R, RatePoint<R>)> = None;
        let mut lambda = R::one();
        let mut x_here = warm.clone();
        while hi_end.is_none() && lambda <= R::of(1e6) {
            let (x, point) =
                weighted_boundary_solve(instance, &users, &cons, favored, lambda, Some(&x_here), tol)?;
            x_here = x;
            if fav_rate(&point) >= target {
                hi_end = Some((lambda, point));
            } else {
                lo_end = (lambda, point);
                lambda = lambda * R::of(2.0);
            }
        }
        let Some(mut hi_end) = hi_end else {
            // target within slack of the solo corner; the cap solve is as
            // close as the dual path gets
            let (x, point) = weighted_boundary_solve(
                instance, &users, &cons, favored, R::of(1e6), Some(&x_here), tol,
            )?;
            warm = x;
            points.push(point);
            continue;
        };

        let mut found = None;
        for _ in 0..80 {
            if hi_end.0 - lo_end.0 <= R::of(1e-12) * (R::one() + hi_end.0) {
                break;
            }
            let mid = (lo_end.0 + hi_end.0) * R::of(0.5);
            let (x, point) =
                weighted_boundary_solve(instance, &users, &cons, favored, mid, Some(&x_here), tol)?;
            x_here = x;
            if (fav_rate(&point) - target).abs() <= tol_rate {
                found = Some(point);
                break;
            }
            if fav_rate(&point) >= target {
                hi_end = (mid, point);
            } else {
                lo_end = (mid, point);
            }
        }
        warm = x_here;
        let point = found.unwrap_or_else(|| {
            // the dual path jumped across the target: both ends are boundary
            // points, and their chord is achievable by time sharing
            let (pa, pb) = (lo_end.1, hi_end.1);
            let denom = fav_rate(&pb) - fav_rate(&pa);
            if denom.abs() <= R::of(1e-15) {
                return pb;
            }
            let theta = ((target - fav_rate(&pa)) / denom).max(R::zero()).min(R::one());
            RatePoint::new(
                pa.r1 + theta * (pb.r1 - pa.r1),
                pa.r2 + theta * (pb.r2 - pa.r2),
            )
        });
        points.push(point);
    }
    Ok(points)
}

/// Evenly spaced interior values strictly between `from` and `to`.
fn interior_targets<R: Real>(from: R, to: R, count: usize) -> Vec<R> {
    let n = count + 1;
    (1..n).map(|k| from + (to - from) * R::of(k as f64) / R::of(n as f64)).collect()
}

/// Traces the boundary polyline of one strategy's achievable region.
/// `arc_points` controls how many interior points sample each curved arc of
/// the hybrid boundary (the pure strategies ignore it for shape, TDMA uses
/// it for sweep density).
pub fn trace_region<R: Real>(
    instance: &TwoUserInstance<R>,
    arc_points: usize,
    strategy: Strategy,
) -> Result<RegionBoundary<R>, Error> {
    match strategy {
        Strategy::Noma => Ok(trace_noma(instance)),
        Strategy::Tdma => Ok(trace_tdma(instance, arc_points)),
        Strategy::Hybrid => trace_hybrid(instance, arc_points),
    }
}

fn trace_noma<R: Real>(instance: &TwoUserInstance<R>) -> RegionBoundary<R> {
    let t = instance.horizon;
    let (sum, alloc) = two_user::noma_sum_rate(instance);
    let c1 = t * (alloc.transmit_energy[0][3] / t).ln_1p();
    let c2 = t * (alloc.transmit_energy[1][3] / t).ln_1p();
    let raw = [
        RatePoint::new(R::zero(), c2),
        RatePoint::new(sum - c2, c2),
        RatePoint::new(c1, sum - c1),
        RatePoint::new(c1, R::zero()),
    ];
    let mut points: Vec<RatePoint<R>> = Vec::new();
    for p in raw {
        if points.last().map_or(true, |q: &RatePoint<R>| {
            (q.r1 - p.r1).abs() + (q.r2 - p.r2).abs() > R::of(1e-12)
        }) {
            points.push(p);
        }
    }
    RegionBoundary { points, labels: Vec::new() }
}

fn trace_tdma<R: Real>(instance: &TwoUserInstance<R>, arc_points: usize) -> RegionBoundary<R> {
    let t = instance.horizon;
    let samples = (2 * arc_points).max(32);
    let window_rate = |user: usize, w: R| -> R {
        if w <= R::zero() {
            return R::zero();
        }
        let problem =
            crate::single_user::SingleUserProblem::new(instance.users[user].clone(), w)
                .expect("window positive");
        crate::single_user::solve(&problem, R::of(1e-11) * t).rate
    };
    let mut points = Vec::with_capacity(samples + 1);
    for k in 0..=samples {
        let w = t * R::of(k as f64) / R::of(samples as f64);
        points.push(RatePoint::new(window_rate(0, w), window_rate(1, t - w)));
    }
    RegionBoundary { points, labels: Vec::new() }
}

fn trace_hybrid<R: Real>(
    instance: &TwoUserInstance<R>,
    arc_points: usize,
) -> Result<RegionBoundary<R>, Error> {
    let tol = R::of(1e-8);
    let solo = [instance.solo(0), instance.solo(1)];
    match (solo[0].feasible, solo[1].feasible) {
        (false, false) => {
            return Ok(RegionBoundary {
                points: vec![RatePoint::new(R::zero(), R::zero())],
                labels: Vec::new(),
            })
        }
        (false, true) => {
            return Ok(RegionBoundary {
                points: vec![
                    RatePoint::new(R::zero(), solo[1].rate),
                    RatePoint::new(R::zero(), R::zero()),
                ],
                labels: Vec::new(),
            })
        }
        (true, false) => {
            return Ok(RegionBoundary {
                points: vec![
                    RatePoint::new(R::zero(), R::zero()),
                    RatePoint::new(solo[0].rate, R::zero()),
                ],
                labels: Vec::new(),
            })
        }
        (true, true) => {}
    }

    let (_, alloc, _) = two_user::hybrid_sum_rate(instance, tol)?;
    let b = sum_segment_point(&alloc, R::one());
    let c = sum_segment_point(&alloc, R::zero());
    let a = corner_peer_max(instance, 0, tol)?;
    let d = corner_peer_max(instance, 1, tol)?;

    let gap = R::of(1e-7) * (R::one() + solo[0].rate + solo[1].rate);
    let arc_ab = if arc_points > 0 && a.r2 - b.r2 > gap {
        // favored user 2's clean rate runs from C² down toward B
        boundary_arc(instance, 1, &interior_targets(a.r2, b.r2, arc_points), tol)?
    } else {
        Vec::new()
    };
    let arc_cd = if arc_points > 0 && d.r1 - c.r1 > gap {
        boundary_arc(instance, 0, &interior_targets(c.r1, d.r1, arc_points), tol)?
    } else {
        Vec::new()
    };

    let mut tagged: Vec<(RatePoint<R>, Option<CornerLabel>)> = Vec::new();
    tagged.push((RatePoint::new(R::zero(), solo[1].rate), None));
    tagged.push((a, Some(CornerLabel::A)));
    tagged.extend(arc_ab.into_iter().map(|p| (p, None)));
    tagged.push((b, Some(CornerLabel::B)));
    tagged.push((c, Some(CornerLabel::C)));
    tagged.extend(arc_cd.into_iter().map(|p| (p, None)));
    tagged.push((d, Some(CornerLabel::D)));
    tagged.push((RatePoint::new(solo[0].rate, R::zero()), None));

    // drop solver jitter that breaks the r1↑ / r2↓ sweep
    let tiny = R::of(1e-9) * (R::one() + solo[0].rate + solo[1].rate);
    let mut points: Vec<(RatePoint<R>, Option<CornerLabel>)> = Vec::with_capacity(tagged.len());
    let mut labels = Vec::new();
    for (p, tag) in tagged {
        while let Some(&(last, _)) = points.last() {
            let keep_last = p.r1 >= last.r1 - tiny && p.r2 <= last.r2 + tiny;
            if keep_last {
                break;
            }
            // the newcomer contradicts the sweep: prefer keeping labeled
            // points over arc samples
            if tag.is_some() {
                let dropped: (RatePoint<R>, Option<CornerLabel>) = points.pop().unwrap();
                if let Some(old) = dropped.1 {
                    labels.retain(|&(l, _)| l != old);
                }
            } else {
                break;
            }
        }
        let admissible = points.last().map_or(true, |&(last, _): &(RatePoint<R>, _)| {
            p.r1 >= last.r1 - tiny && p.r2 <= last.r2 + tiny
        });
        if admissible {
            if let Some(label) = tag {
                labels.push((label, points.len()));
            }
            points.push((p, tag));
        }
    }
    Ok(RegionBoundary { points: points.into_iter().map(|(p, _)| p).collect(), labels })
}
