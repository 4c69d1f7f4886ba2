//! Release gate: every reference check in one place, one verdict line each.
//!
//! Pinned values come from closed forms where one exists and from
//! independent high-resolution searches otherwise; tolerances are absolute
//! in the stated unit. Run with `--nocapture` to see the per-check lines on
//! success.

use macopt::battery::{DischargeModel, UserParams};
use macopt::multi_user::{self, cardinalities_consecutive, MultiUserInstance};
use macopt::region::{self, RegionBoundary};
use macopt::single_user::{self, SingleUserProblem};
use macopt::two_user::{self, TwoUserInstance};
use macopt::{nats_to_bits, Strategy};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn quad_user(b: f64, gamma: f64, r: f64) -> UserParams<f64> {
    UserParams::new(b, gamma, DischargeModel::quadratic(r).unwrap()).unwrap()
}

/// The symmetric reference setup: B = 1.25 J, γ = 0.5 W, T = 1 s.
fn pair_instance(r: f64) -> TwoUserInstance<f64> {
    TwoUserInstance::new([quad_user(1.25, 0.5, r), quad_user(1.25, 0.5, r)], 1.0).unwrap()
}

fn trio_instance(r: f64) -> MultiUserInstance<f64> {
    MultiUserInstance::new(vec![quad_user(1.25, 0.5, r); 3], 1.0).unwrap()
}

struct Gate {
    next: usize,
    failures: Vec<String>,
}

impl Gate {
    fn run(&mut self, label: &str, body: impl FnOnce() -> Result<String, String>) {
        let id = self.next;
        self.next += 1;
        let clock = Instant::now();
        let outcome = body();
        let secs = clock.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[{id:2}] pass  {label}  ({secs:.1}s; {detail})"),
            Err(reason) => {
                println!("[{id:2}] FAIL  {label}  ({secs:.1}s; {reason})");
                self.failures.push(format!("[{id:2}] {label}: {reason}"));
            }
        }
    }
}

/// Checks a (parameter, pinned bits) sweep against `rate`, reporting the
/// worst deviation.
fn sweep_check(
    rows: &[(f64, f64)],
    tol: f64,
    mut rate: impl FnMut(f64) -> Result<f64, String>,
) -> Result<String, String> {
    let mut worst = 0.0f64;
    for &(r, want) in rows {
        let got = rate(r)?;
        let dev = (got - want).abs();
        if dev > tol {
            return Err(format!("r = {r}: got {got:.9} bits, pinned {want} ± {tol:.0e}"));
        }
        worst = worst.max(dev);
    }
    Ok(format!("worst deviation {worst:.1e} bits, tol {tol:.0e}"))
}

fn near(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: got {got:.9}, pinned {want} ± {tol:.0e}"))
    }
}

/// Largest amount (bits) by which `inner` pokes out of `outer`, sampled at
/// 50 evenly spaced abscissas.
fn containment_excess(outer: &RegionBoundary<f64>, inner: &RegionBoundary<f64>) -> Result<f64, String> {
    let top = inner.max_r1();
    let mut excess = f64::NEG_INFINITY;
    for k in 0..50 {
        let x = top * k as f64 / 49.0;
        let want = inner.r2_at(x).ok_or(format!("inner boundary unreadable at r1 = {x}"))?;
        let have = outer
            .r2_at(x.min(outer.max_r1()))
            .ok_or(format!("outer boundary unreadable at r1 = {x}"))?;
        excess = excess.max(nats_to_bits(want - have));
    }
    excess = excess.max(nats_to_bits(inner.max_r1() - outer.max_r1()));
    Ok(excess)
}

#[test]
fn acceptance_gate() {
    let mut gate = Gate { next: 1, failures: Vec::new() };

    gate.run("three-user noma sum-rate sweep", || {
        let rows = [(0.0, 1.700440), (0.3, 1.392317), (0.6, 1.000000), (0.9, 0.459432)];
        sweep_check(&rows, 1e-6, |r| {
            Ok(nats_to_bits(multi_user::noma_sum_rate_multi(&trio_instance(r))))
        })
    });

    gate.run("three-user tdma sum-rate sweep", || {
        let rows = [(0.0, 2.087463), (0.2, 1.584962), (0.6, 0.523562), (1.0, 0.087463)];
        sweep_check(&rows, 1e-4, |r| {
            Ok(nats_to_bits(multi_user::tdma_sum_rate_multi(&trio_instance(r), 1e-9).0))
        })
    });

    gate.run("three-user hybrid sum-rate sweep", || {
        let rows = [(0.0, 2.087463), (0.04, 2.000000), (0.5, 1.162913), (1.0, 0.247928)];
        sweep_check(&rows, 1e-3, |r| {
            let (rate, _, _) = multi_user::hybrid_sum_rate_multi(&trio_instance(r), 1e-8)
                .map_err(|e| format!("r = {r}: {e}"))?;
            Ok(nats_to_bits(rate))
        })
    });

    gate.run("two-user r 0.3 sum-rate anchors", || {
        let instance = pair_instance(0.3);
        let (noma_sum, alloc) = two_user::noma_sum_rate(&instance);
        // corner where user 1 gets the clean channel
        let clean = alloc.transmit_energy[0][3].ln_1p();
        near(nats_to_bits(clean), 0.624491, 1e-4, "noma corner r1")?;
        near(nats_to_bits(noma_sum - clean), 0.434403, 1e-4, "noma corner r2")?;
        let (hybrid, _, _) =
            two_user::hybrid_sum_rate(&instance, 1e-8).map_err(|e| e.to_string())?;
        near(nats_to_bits(hybrid), 1.127923, 1e-3, "hybrid sum")?;
        let (tdma, _) = two_user::tdma_sum_rate(&instance, 1e-9);
        near(nats_to_bits(tdma), 1.11548, 1e-3, "tdma sum")?;
        Ok(format!(
            "corner ({:.6}, {:.6}), hybrid {:.6}, tdma {:.6} bits",
            nats_to_bits(clean),
            nats_to_bits(noma_sum - clean),
            nats_to_bits(hybrid),
            nats_to_bits(tdma)
        ))
    });

    gate.run("two-user r 0.5 sum-rate anchors", || {
        let instance = pair_instance(0.5);
        let (noma_sum, _) = two_user::noma_sum_rate(&instance);
        near(nats_to_bits(noma_sum), 0.852443, 1e-4, "noma sum")?;
        let (hybrid, _, _) =
            two_user::hybrid_sum_rate(&instance, 1e-8).map_err(|e| e.to_string())?;
        near(nats_to_bits(hybrid), 0.864521, 1e-3, "hybrid sum")?;
        let problem = SingleUserProblem::new(quad_user(1.25, 0.5, 0.5), 1.0).unwrap();
        let solo = single_user::solve(&problem, 1e-11).rate;
        near(nats_to_bits(solo), 0.491761, 1e-3, "solo axis intercept")?;
        Ok(format!(
            "noma {:.6}, hybrid {:.6}, intercept {:.6} bits",
            nats_to_bits(noma_sum),
            nats_to_bits(hybrid),
            nats_to_bits(solo)
        ))
    });

    gate.run("single-user solver vs exhaustive grid", || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for i in 0..50 {
            let r = rng.gen_range(0.0..1.0);
            let b = rng.gen_range(0.1..5.0);
            let gamma = rng.gen_range(0.0..1.0);
            let t = rng.gen_range(0.5..2.0);
            let problem = SingleUserProblem::new(quad_user(b, gamma, r), t).unwrap();
            let fast = single_user::solve(&problem, 1e-11 * t).rate;
            let slow = single_user::brute_force(&problem, 2000).rate;
            if slow > fast + 1e-9 {
                return Err(format!(
                    "instance {i} (r {r:.3}, B {b:.3}, γ {gamma:.3}, T {t:.3}): \
                     grid found {slow:.9} above solver {fast:.9}"
                ));
            }
            let dev = fast - slow;
            if dev > 2e-3 {
                return Err(format!(
                    "instance {i} (r {r:.3}, B {b:.3}, γ {gamma:.3}, T {t:.3}): \
                     solver {fast:.9} vs grid {slow:.9}, gap {dev:.1e} nats"
                ));
            }
            worst = worst.max(dev);
        }
        Ok(format!("50 instances, worst solver−grid gap {worst:.1e} nats"))
    });

    gate.run("optimal drain constant under budget scaling", || {
        let user = UserParams::new(1.0, 0.5, DischargeModel::ideal()).unwrap();
        let report = single_user::budget_scaling_check(&user, 10.0, &[0.5, 1.0, 1.5, 2.0])
            .map_err(|e| e.to_string())?;
        if !report.passes {
            return Err(format!(
                "drains {:?}, interior {:?}, spread {:.1e}",
                report.discharges, report.interior, report.relative_spread
            ));
        }
        Ok(format!("relative drain spread {:.1e} over four budgets", report.relative_spread))
    });

    gate.run("zero-circuit ordering tdma < noma ≤ hybrid", || {
        let mut min_margin = f64::INFINITY;
        for users in [2usize, 3] {
            for k in 1..=10 {
                let r = k as f64 / 10.0;
                let model = DischargeModel::quadratic(r).unwrap();
                // keep the pooled tdma drain inside the efficient range
                let d0 = model.peak_discharge();
                let b = (0.9 * d0 / users as f64).min(1.25);
                let w = multi_user::zero_circuit_ordering(users, b, &model, 1.0)
                    .map_err(|e| format!("U = {users}, r = {r}: {e}"))?;
                let margin = nats_to_bits(w.noma - w.tdma);
                if margin <= 1e-4 {
                    return Err(format!(
                        "U = {users}, r = {r}: tdma {:.9} not below noma {:.9}",
                        nats_to_bits(w.tdma),
                        nats_to_bits(w.noma)
                    ));
                }
                if w.hybrid < w.noma - 1e-6 {
                    return Err(format!(
                        "U = {users}, r = {r}: hybrid {:.9} below noma {:.9}",
                        nats_to_bits(w.hybrid),
                        nats_to_bits(w.noma)
                    ));
                }
                min_margin = min_margin.min(margin);
            }
        }
        Ok(format!("20 instances, smallest tdma→noma margin {min_margin:.1e} bits"))
    });

    gate.run("active phase cardinalities stay consecutive", || {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut profiles = Vec::new();
        for users in [2usize, 3] {
            for i in 0..5 {
                let t = rng.gen_range(0.5..2.0);
                let params: Vec<_> = (0..users)
                    .map(|_| {
                        quad_user(
                            rng.gen_range(0.1..3.0),
                            rng.gen_range(0.0..0.8),
                            rng.gen_range(0.05..1.0),
                        )
                    })
                    .collect();
                let instance = MultiUserInstance::new(params, t).unwrap();
                let (_, alloc, _) = multi_user::hybrid_sum_rate_multi(&instance, 1e-8)
                    .map_err(|e| format!("U = {users}, instance {i}: {e}"))?;
                let profile = alloc.active_cardinalities(1e-6 * t);
                if !cardinalities_consecutive(&profile) {
                    return Err(format!("U = {users}, instance {i}: cardinalities {profile:?}"));
                }
                profiles.push(format!("{profile:?}"));
            }
        }
        Ok(format!("10 instances, profiles {}", profiles.join(" ")))
    });

    gate.run("two-user hybrid solver vs simplex oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut worst = 0.0f64;
        for i in 0..3 {
            let t = rng.gen_range(0.5..2.0);
            let params = [
                quad_user(rng.gen_range(0.1..3.0), rng.gen_range(0.0..0.8), rng.gen_range(0.05..1.0)),
                quad_user(rng.gen_range(0.1..3.0), rng.gen_range(0.0..0.8), rng.gen_range(0.05..1.0)),
            ];
            let instance = TwoUserInstance::new(params, t).unwrap();
            let (fast, _, _) = two_user::hybrid_sum_rate(&instance, 1e-8)
                .map_err(|e| format!("instance {i}: {e}"))?;
            let slow = two_user::brute_force_hybrid(&instance, 20);
            if slow > fast + 1e-5 {
                return Err(format!(
                    "instance {i}: lattice {:.9} above solver {:.9} bits",
                    nats_to_bits(slow),
                    nats_to_bits(fast)
                ));
            }
            let below = nats_to_bits(fast - slow);
            if below > 5e-3 {
                return Err(format!(
                    "instance {i}: lattice trails solver by {below:.1e} bits (> 5e-3)"
                ));
            }
            worst = worst.max(below);
        }
        Ok(format!("3 instances, lattice within {worst:.1e} bits of the solver"))
    });

    gate.run("decode-order sweep keeps the sum constant", || {
        let instance = pair_instance(0.3);
        let (_, alloc, _) =
            two_user::hybrid_sum_rate(&instance, 1e-8).map_err(|e| e.to_string())?;
        let base = region::sum_segment_point(&alloc, 0.0);
        let sum = base.r1 + base.r2;
        let mut worst = 0.0f64;
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let p = region::sum_segment_point(&alloc, alpha);
            let dev = (p.r1 + p.r2 - sum).abs();
            if dev > 1e-9 {
                return Err(format!("α = {alpha}: sum drifts by {dev:.1e} nats"));
            }
            worst = worst.max(dev);
        }
        Ok(format!("five decode orders, sum drift ≤ {worst:.1e} nats"))
    });

    gate.run("pure-strategy regions inside the hybrid region", || {
        let mut worst = f64::NEG_INFINITY;
        for r in [0.3, 0.5] {
            let instance = pair_instance(r);
            let hybrid = region::trace_region(&instance, 24, Strategy::Hybrid)
                .map_err(|e| format!("r = {r}: {e}"))?;
            for strategy in [Strategy::Noma, Strategy::Tdma] {
                let pure = region::trace_region(&instance, 24, strategy)
                    .map_err(|e| format!("r = {r}, {strategy}: {e}"))?;
                let excess = containment_excess(&hybrid, &pure)
                    .map_err(|e| format!("r = {r}, {strategy}: {e}"))?;
                if excess > 1e-4 {
                    return Err(format!(
                        "r = {r}: {strategy} boundary pokes out by {excess:.1e} bits"
                    ));
                }
                worst = worst.max(excess);
            }
        }
        Ok(format!("100 abscissas per strategy, worst excess {worst:.1e} bits"))
    });

    assert!(
        gate.failures.is_empty(),
        "acceptance gate failed:\n{}",
        gate.failures.join("\n")
    );
}
