//! Structural properties that must hold on whole input ranges, not just at
//! pinned anchors: discharge-curve shape, agreement between independent
//! solution routes, and invariants of certified schedules on random
//! instances. Tolerances are stated next to each assertion.

use std::collections::BTreeSet;

use macopt::battery::{DischargeModel, UserParams};
use macopt::multi_user::{self, MultiUserInstance};
use macopt::region::sum_segment_point;
use macopt::single_user::{self, SingleUserProblem};
use macopt::solver::{
    maximize_concave_1d, maximize_concave_linear, LinearConstraintSet, SolveOptions,
};
use macopt::two_user::{self, TwoUserInstance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quad_user(b: f64, gamma: f64, r: f64) -> UserParams<f64> {
    UserParams::new(b, gamma, DischargeModel::quadratic(r).unwrap()).unwrap()
}

fn random_user(rng: &mut ChaCha8Rng) -> UserParams<f64> {
    let b = rng.gen_range(0.1..3.0);
    let gamma = rng.gen_range(0.0..0.8);
    let r = rng.gen_range(0.05..1.0);
    quad_user(b, gamma, r)
}

proptest! {
    // g is trapped between 0 and the ideal line, rises up to the peak, and
    // is concave; the analytic slope matches a central difference.
    #[test]
    fn quadratic_curve_shape(r in 0.05f64..2.0, frac in 1e-3f64..1.0) {
        let model = DischargeModel::quadratic(r).unwrap();
        let d0 = model.peak_discharge();
        let d = frac * 2.0 * d0;

        let g = model.delivered(d).unwrap();
        prop_assert!(g >= 0.0);
        prop_assert!(g <= d + 1e-12 * (1.0 + d));

        if d < d0 {
            let step = d0 * 1e-4;
            let ahead = model.delivered((d + step).min(d0)).unwrap();
            prop_assert!(ahead >= g - 1e-12, "not monotone below the peak: {g} then {ahead}");
        }

        // midpoint concavity over the whole clamped domain
        let other = (1.0 - frac) * 2.0 * d0;
        let mid = model.delivered(0.5 * (d + other)).unwrap();
        let chord = 0.5 * (g + model.delivered(other).unwrap());
        prop_assert!(mid >= chord - 1e-9 * (1.0 + chord));

        // slope vs central difference, away from the clamp kink at 2·D0
        if d < 1.9 * d0 {
            let h = d0 * 1e-6;
            let fd = (model.delivered(d + h).unwrap() - model.delivered((d - h).max(0.0)).unwrap())
                / (d + h - (d - h).max(0.0));
            let ds = model.slope(d).unwrap();
            prop_assert!((ds - fd).abs() <= 1e-6 * (1.0 + ds.abs()), "slope {ds} vs fd {fd}");
        }

        prop_assert!(model.slope(d0).unwrap().abs() <= 1e-8);
        prop_assert!((model.delivered(d0).unwrap() - d0 / 2.0).abs() <= 1e-12 * (1.0 + d0));
    }

    // The smallest drain covering a target delivers exactly that target.
    #[test]
    fn min_drain_inverts_the_curve(r in 0.05f64..2.0, frac in 0.0f64..1.0) {
        let model = DischargeModel::quadratic(r).unwrap();
        let target = frac * model.peak_delivered();
        let d = model.min_drain_for(target).expect("target below the peak");
        prop_assert!((model.delivered(d).unwrap() - target).abs() <= 1e-9 * (1.0 + target));
    }

    // A tabulated model built from quadratic samples reproduces the source
    // at the nodes and never exceeds it in between (chords under concavity).
    #[test]
    fn tabulated_chords_stay_under_the_source(r in 0.1f64..1.0, frac in 0.0f64..1.0) {
        let source = DischargeModel::quadratic(r).unwrap();
        let d0 = source.peak_discharge();
        let nodes: Vec<(f64, f64)> = (0..=8)
            .map(|k| {
                let d = 2.0 * d0 * k as f64 / 8.0;
                (d, source.delivered(d).unwrap())
            })
            .collect();
        let table = DischargeModel::tabulated(nodes.clone()).unwrap();
        for &(d, g) in &nodes {
            prop_assert!((table.delivered(d).unwrap() - g).abs() <= 1e-12 * (1.0 + g));
        }
        let d = frac * 2.0 * d0;
        let chord = table.delivered(d).unwrap();
        prop_assert!(chord <= source.delivered(d).unwrap() + 1e-12);
    }

    // Golden section against the closed-form vertex of a random parabola.
    #[test]
    fn golden_section_finds_parabola_peaks(
        center in -5.0f64..5.0,
        curvature in 0.1f64..10.0,
        lo in -8.0f64..-6.0,
        hi in 6.0f64..8.0,
    ) {
        let f = |x: f64| -curvature * (x - center) * (x - center);
        let (x, _, _) = maximize_concave_1d(f, lo, hi, 1e-10).unwrap();
        let expect = center.clamp(lo, hi);
        prop_assert!((x - expect).abs() <= 1e-8 * (1.0 + expect.abs()), "{x} vs {expect}");
    }

    // Projected ascent on separable box-constrained quadratics, where the
    // optimum is the clamped vertex.
    #[test]
    fn projected_ascent_solves_box_quadratics(
        c in prop::array::uniform4(-3.0f64..3.0),
        a in prop::array::uniform4(0.2f64..5.0),
    ) {
        let value = |x: &[f64]| -> f64 {
            (0..4).map(|k| -a[k] * (x[k] - c[k]) * (x[k] - c[k])).sum()
        };
        let gradient = |x: &[f64], out: &mut [f64]| {
            for k in 0..4 {
                out[k] = -2.0 * a[k] * (x[k] - c[k]);
            }
        };
        let mut cons = LinearConstraintSet::new(4);
        for k in 0..4 {
            cons.bound(k, -1.0, 2.0);
        }
        let options = SolveOptions::with_tolerance(1e-10);
        let (x, report) = maximize_concave_linear(value, gradient, &cons, &[0.0; 4], &options).unwrap();
        prop_assert!(report.is_optimal(), "{report:?}");
        for k in 0..4 {
            let expect = c[k].clamp(-1.0, 2.0);
            prop_assert!((x[k] - expect).abs() <= 1e-6, "slot {k}: {} vs {expect}", x[k]);
        }
    }
}

// Water-filling over a simplex row: identical logs must split the budget
// evenly, a case with a known answer that exercises row projection.
#[test]
fn projected_ascent_waterfills_identical_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.gen_range(2..=5usize);
        let s = rng.gen_range(0.5..4.0f64);
        let value = |x: &[f64]| -> f64 { x.iter().map(|&e| e.max(0.0).ln_1p()).sum() };
        let gradient = |x: &[f64], out: &mut [f64]| {
            for k in 0..x.len() {
                out[k] = 1.0 / (1.0 + x[k].max(0.0));
            }
        };
        let mut cons = LinearConstraintSet::new(n);
        for k in 0..n {
            cons.bound(k, 0.0, f64::INFINITY);
        }
        cons.add_row(vec![1.0; n], s);
        let options = SolveOptions::with_tolerance(1e-10);
        let (x, report) =
            maximize_concave_linear(value, gradient, &cons, &vec![0.1; n], &options).unwrap();
        assert!(report.is_optimal(), "{report:?}");
        for &e in &x {
            assert!((e - s / n as f64).abs() <= 1e-6, "uneven fill {x:?} for budget {s}");
        }
    }
}

// The hybrid schedule can realize both pure strategies, so its certified
// value dominates them; the allocation it returns satisfies every frame
// constraint; and the sum rate does not depend on the decode order.
#[test]
fn hybrid_dominates_pure_strategies_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..12 {
        let t = rng.gen_range(0.5..2.0);
        let instance =
            TwoUserInstance::new([random_user(&mut rng), random_user(&mut rng)], t).unwrap();
        let (hybrid, alloc, report) =
            two_user::hybrid_sum_rate(&instance, 1e-8).unwrap_or_else(|e| {
                panic!("instance {k}: {e}");
            });
        assert!(report.is_optimal(), "instance {k}: {report:?}");
        alloc.validate(&instance).unwrap_or_else(|e| panic!("instance {k}: {e}"));

        let (noma, _) = two_user::noma_sum_rate(&instance);
        let (tdma, _) = two_user::tdma_sum_rate(&instance, 1e-10);
        assert!(hybrid >= noma - 1e-6, "instance {k}: hybrid {hybrid} < noma {noma}");
        assert!(hybrid >= tdma - 1e-6, "instance {k}: hybrid {hybrid} < tdma {tdma}");

        for alpha in [0.0, 0.3, 0.7, 1.0] {
            let point = sum_segment_point(&alloc, alpha);
            let sum = point.r1 + point.r2;
            assert!(
                (sum - hybrid).abs() <= 1e-9 * (1.0 + hybrid),
                "instance {k}: decode order {alpha} moved the sum: {sum} vs {hybrid}"
            );
        }
    }
}

// The hand-built four-phase program and the mechanical power-set program
// must certify the same value on two users.
#[test]
fn two_user_and_multi_user_solvers_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for k in 0..10 {
        let t = rng.gen_range(0.5..2.0);
        let users = [random_user(&mut rng), random_user(&mut rng)];
        let pair = TwoUserInstance::new(users.clone(), t).unwrap();
        let multi = MultiUserInstance::new(users.to_vec(), t).unwrap();
        let (a, _, _) = two_user::hybrid_sum_rate(&pair, 1e-8).unwrap();
        let (b, _, _) = multi_user::hybrid_sum_rate_multi(&multi, 1e-8).unwrap();
        assert!((a - b).abs() <= 1e-6 * (1.0 + a), "instance {k}: {a} vs {b}");
    }
}

// Subset cut bounds evaluated at one schedule: growing the subset cannot
// shrink the bound, and a disjoint union is bounded by the parts (the log
// is subadditive over nonnegative powers).
#[test]
fn subset_bounds_are_monotone_and_subadditive() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for k in 0..6 {
        let t = rng.gen_range(0.5..2.0);
        let users: Vec<UserParams<f64>> = (0..3).map(|_| random_user(&mut rng)).collect();
        let instance = MultiUserInstance::new(users, t).unwrap();
        let (_, alloc, _) = multi_user::hybrid_sum_rate_multi(&instance, 1e-8)
            .unwrap_or_else(|e| panic!("instance {k}: {e}"));
        for s in 0u32..8 {
            for sup in 0u32..8 {
                if s & sup == s {
                    assert!(
                        alloc.subset_rate_bound(s) <= alloc.subset_rate_bound(sup) + 1e-12,
                        "instance {k}: bound not monotone on {s:03b} ⊆ {sup:03b}"
                    );
                }
                if s & sup == 0 {
                    let whole = alloc.subset_rate_bound(s | sup);
                    let parts = alloc.subset_rate_bound(s) + alloc.subset_rate_bound(sup);
                    assert!(
                        whole <= parts + 1e-12,
                        "instance {k}: {s:03b} ∪ {sup:03b}: {whole} > {parts}"
                    );
                }
            }
        }
    }
}

// More battery can only help, a hungrier circuit can only hurt.
#[test]
fn rates_respond_monotonically_to_resources() {
    let mut rng = ChaCha8Rng::seed_from_u64(59);
    for k in 0..8 {
        let t = rng.gen_range(0.5..2.0);
        let base = [random_user(&mut rng), random_user(&mut rng)];
        let (rate, _, _) =
            two_user::hybrid_sum_rate(&TwoUserInstance::new(base.clone(), t).unwrap(), 1e-8)
                .unwrap();

        let mut richer = base.clone();
        richer[0] = UserParams::new(
            base[0].battery_energy * 1.2,
            base[0].circuit_cost,
            base[0].model.clone(),
        )
        .unwrap();
        let (up, _, _) =
            two_user::hybrid_sum_rate(&TwoUserInstance::new(richer, t).unwrap(), 1e-8).unwrap();
        assert!(up >= rate - 1e-6, "instance {k}: bigger battery lowered {rate} to {up}");

        let mut hungrier = base.clone();
        hungrier[1] = UserParams::new(
            base[1].battery_energy,
            base[1].circuit_cost + 0.1,
            base[1].model.clone(),
        )
        .unwrap();
        let (down, _, _) =
            two_user::hybrid_sum_rate(&TwoUserInstance::new(hungrier, t).unwrap(), 1e-8).unwrap();
        assert!(down <= rate + 1e-6, "instance {k}: higher circuit cost raised {rate} to {down}");

        // single-user route: same monotonicity from an independent solver
        let solo = SingleUserProblem::new(base[0].clone(), t).unwrap();
        let solo_up = SingleUserProblem::new(
            UserParams::new(
                base[0].battery_energy * 1.5,
                base[0].circuit_cost,
                base[0].model.clone(),
            )
            .unwrap(),
            t,
        )
        .unwrap();
        let r0 = single_user::solve(&solo, 1e-11).rate;
        let r1 = single_user::solve(&solo_up, 1e-11).rate;
        assert!(r1 >= r0 - 1e-9, "instance {k}: single-user rate fell {r0} -> {r1}");
    }
}

// Phase-cardinality structure of certified schedules, on instances drawn
// independently of the acceptance sweep.
#[test]
fn certified_schedules_use_consecutive_cardinalities() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    for k in 0..6 {
        let t = rng.gen_range(0.5..2.0);
        let users: Vec<UserParams<f64>> = (0..3).map(|_| random_user(&mut rng)).collect();
        let instance = MultiUserInstance::new(users, t).unwrap();
        let (_, alloc, report) = multi_user::hybrid_sum_rate_multi(&instance, 1e-8)
            .unwrap_or_else(|e| panic!("instance {k}: {e}"));
        assert!(report.is_optimal(), "instance {k}: {report:?}");
        let profile: BTreeSet<usize> = alloc.active_cardinalities(1e-6 * t);
        assert!(
            multi_user::cardinalities_consecutive(&profile),
            "instance {k}: cardinalities {profile:?}"
        );
    }
}
