//! Battery discharge models.
//!
//! A transmitter drains its battery internally at `d` watts but the load only
//! sees `g(d)` watts, where `g` is concave, `g(0) = 0`, and `g(d) ≤ d`. The
//! drain level maximizing delivered power is the peak discharge `D0`.

use crate::{Error, Real};

/// Default quadratic loss coefficient κ.
///
/// The reference curves this crate reproduces are generated with κ = 4/9, not
/// the rounded 0.44 sometimes quoted alongside them (e.g. the three-user NOMA
/// sum-rate at r = 0.6 equals exactly 1 bit only for κ = 4/9).
pub const DEFAULT_LOSS_COEFFICIENT: f64 = 4.0 / 9.0;

/// Relative tolerance for the concavity check on tabulated samples.
const CONCAVITY_TOL: f64 = 1e-9;

/// The discharge function g(d): delivered watts as a function of drain watts.
#[derive(Debug, Clone, PartialEq)]
pub enum DischargeModel<R: Real> {
    /// Lossless battery: g(d) = d.
    Ideal,
    /// g(d) = d − κ·r·d², clamped at 0 once d exceeds 2·D0 (where the
    /// parabola goes negative).
    Quadratic { resistance: R, coefficient: R },
    /// Piecewise-linear interpolation through (d, g(d)) samples; beyond the
    /// last sample the final segment is extended and clamped at 0.
    Tabulated { samples: Vec<(R, R)> },
}

impl<R: Real> DischargeModel<R> {
    pub fn ideal() -> Self {
        DischargeModel::Ideal
    }

    /// Quadratic model with the default loss coefficient.
    pub fn quadratic(resistance: R) -> Result<Self, Error> {
        Self::quadratic_with_coefficient(resistance, R::of(DEFAULT_LOSS_COEFFICIENT))
    }

    pub fn quadratic_with_coefficient(resistance: R, coefficient: R) -> Result<Self, Error> {
        let model = DischargeModel::Quadratic { resistance, coefficient };
        model.validate()?;
        Ok(model)
    }

    /// Builds a tabulated model; samples must start at (0, 0), have strictly
    /// increasing drain values, satisfy g(d) ≤ d, and be concave.
    pub fn tabulated(samples: Vec<(R, R)>) -> Result<Self, Error> {
        let model = DischargeModel::Tabulated { samples };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), Error> {
        match self {
            DischargeModel::Ideal => Ok(()),
            DischargeModel::Quadratic { resistance, coefficient } => {
                if !resistance.is_finite() || *resistance < R::zero() {
                    return Err(Error::InvalidModel(format!(
                        "resistance must be finite and nonnegative (got {resistance})"
                    )));
                }
                if !coefficient.is_finite() || *coefficient < R::zero() {
                    return Err(Error::InvalidModel(format!(
                        "loss coefficient must be finite and nonnegative (got {coefficient})"
                    )));
                }
                Ok(())
            }
            DischargeModel::Tabulated { samples } => validate_samples(samples),
        }
    }

    /// g(d), clamped at 0 where the model would go negative.
    pub fn delivered(&self, d: R) -> Result<R, Error> {
        Ok(self.delivered_flagged(d)?.0)
    }

    /// g(d) together with a flag marking clamped or extrapolated evaluation
    /// (quadratic beyond 2·D0, tabulated beyond the last sample).
    pub fn delivered_flagged(&self, d: R) -> Result<(R, bool), Error> {
        if d < R::zero() {
            return Err(Error::NegativeDischarge(d.as_f64()));
        }
        Ok(match self {
            DischargeModel::Ideal => (d, false),
            DischargeModel::Quadratic { resistance, coefficient } => {
                let raw = d - *coefficient * *resistance * d * d;
                if raw < R::zero() {
                    (R::zero(), true)
                } else {
                    (raw, false)
                }
            }
            DischargeModel::Tabulated { samples } => {
                let last = samples[samples.len() - 1].0;
                let raw = interp(samples, d);
                if raw < R::zero() {
                    (R::zero(), true)
                } else {
                    (raw, d > last)
                }
            }
        })
    }

    /// g′(d). Quadratic: 1 − 2κrd (0 in the clamped region); tabulated:
    /// central finite difference on the interpolant.
    pub fn slope(&self, d: R) -> Result<R, Error> {
        if d < R::zero() {
            return Err(Error::NegativeDischarge(d.as_f64()));
        }
        Ok(self.dg(d))
    }

    /// Peak discharge D0 = argmax g. Ideal (and zero-loss quadratic) batteries
    /// return the +∞ sentinel; callers must treat it as "no cap".
    pub fn peak_discharge(&self) -> R {
        match self {
            DischargeModel::Ideal => R::infinity(),
            DischargeModel::Quadratic { resistance, coefficient } => {
                let kr = *coefficient * *resistance;
                if kr <= R::zero() {
                    R::infinity()
                } else {
                    (R::of(2.0) * kr).recip()
                }
            }
            DischargeModel::Tabulated { samples } => {
                // A piecewise-linear concave function peaks at a node; the
                // golden refinement between the node's neighbors only matters
                // if float noise shifted the winner.
                let mut best = 0usize;
                for (k, s) in samples.iter().enumerate() {
                    if s.1 > samples[best].1 {
                        best = k;
                    }
                }
                let lo = if best == 0 { samples[0].0 } else { samples[best - 1].0 };
                let hi = if best + 1 < samples.len() {
                    samples[best + 1].0
                } else {
                    samples[best].0
                };
                golden_refine(|d| interp(samples, d), lo, hi)
            }
        }
    }

    /// g(D0), the maximum deliverable power (+∞ for ideal batteries).
    pub fn peak_delivered(&self) -> R {
        match self {
            DischargeModel::Ideal => R::infinity(),
            DischargeModel::Quadratic { resistance, coefficient } => {
                let kr = *coefficient * *resistance;
                if kr <= R::zero() {
                    R::infinity()
                } else {
                    (R::of(4.0) * kr).recip()
                }
            }
            DischargeModel::Tabulated { .. } => self.g(self.peak_discharge()),
        }
    }

    /// Smallest drain d with g(d) = target, or `None` if even the peak cannot
    /// deliver it. Used to keep active users above their circuit cost.
    pub fn min_drain_for(&self, target: R) -> Option<R> {
        if target <= R::zero() {
            return Some(R::zero());
        }
        match self {
            DischargeModel::Ideal => Some(target),
            DischargeModel::Quadratic { resistance, coefficient } => {
                let kr = *coefficient * *resistance;
                if kr <= R::zero() {
                    return Some(target);
                }
                let disc = R::one() - R::of(4.0) * kr * target;
                if disc < R::zero() {
                    return None;
                }
                Some((R::one() - disc.sqrt()) / (R::of(2.0) * kr))
            }
            DischargeModel::Tabulated { .. } => {
                if self.peak_delivered() < target {
                    return None;
                }
                let (mut lo, mut hi) = (R::zero(), self.peak_discharge());
                for _ in 0..200 {
                    let mid = (lo + hi) * R::of(0.5);
                    if self.g(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(hi)
            }
        }
    }

    /// Infallible g for solver hot paths; clamps tiny negative drains to 0.
    pub(crate) fn g(&self, d: R) -> R {
        let d = d.max(R::zero());
        match self {
            DischargeModel::Ideal => d,
            DischargeModel::Quadratic { resistance, coefficient } => {
                (d - *coefficient * *resistance * d * d).max(R::zero())
            }
            DischargeModel::Tabulated { samples } => interp(samples, d).max(R::zero()),
        }
    }

    /// Infallible g′ for solver hot paths.
    pub(crate) fn dg(&self, d: R) -> R {
        let d = d.max(R::zero());
        match self {
            DischargeModel::Ideal => R::one(),
            DischargeModel::Quadratic { resistance, coefficient } => {
                let kr = *coefficient * *resistance;
                if kr > R::zero() && d >= (kr).recip() {
                    // clamped region beyond 2·D0
                    R::zero()
                } else {
                    R::one() - R::of(2.0) * kr * d
                }
            }
            DischargeModel::Tabulated { samples } => {
                let h = R::of(1e-6) * d.max(R::one());
                if d > h {
                    (interp(samples, d + h) - interp(samples, d - h)) / (R::of(2.0) * h)
                } else {
                    (interp(samples, d + h) - interp(samples, d)) / h
                }
            }
        }
    }
}

fn validate_samples<R: Real>(samples: &[(R, R)]) -> Result<(), Error> {
    if samples.len() < 2 {
        return Err(Error::InvalidModel("need at least 2 samples".into()));
    }
    if samples.iter().any(|(d, g)| !d.is_finite() || !g.is_finite()) {
        return Err(Error::InvalidModel("samples must be finite".into()));
    }
    if samples[0].0 != R::zero() || samples[0].1 != R::zero() {
        return Err(Error::InvalidModel("first sample must be (0, 0)".into()));
    }
    let tol = R::of(CONCAVITY_TOL);
    let mut prev_slope = R::infinity();
    for w in samples.windows(2) {
        let (d0, g0) = w[0];
        let (d1, g1) = w[1];
        if d1 <= d0 {
            return Err(Error::InvalidModel("drain values must be strictly increasing".into()));
        }
        if g1 > d1 + tol * d1.max(R::one()) {
            return Err(Error::InvalidModel(format!(
                "delivered power exceeds drain at d = {d1}"
            )));
        }
        let slope = (g1 - g0) / (d1 - d0);
        if slope > prev_slope + tol {
            return Err(Error::InvalidModel(format!(
                "samples are not concave near d = {d1}"
            )));
        }
        prev_slope = slope;
    }
    Ok(())
}

/// Piecewise-linear interpolation; beyond the last sample the final segment
/// is extended (concavity-preserving).
fn interp<R: Real>(samples: &[(R, R)], d: R) -> R {
    let n = samples.len();
    if d >= samples[n - 1].0 {
        let (d0, g0) = samples[n - 2];
        let (d1, g1) = samples[n - 1];
        return g1 + (g1 - g0) / (d1 - d0) * (d - d1);
    }
    // first segment with right endpoint above d
    let mut lo = 0usize;
    let mut hi = n - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if samples[mid].0 <= d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (d0, g0) = samples[lo];
    let (d1, g1) = samples[hi];
    g0 + (g1 - g0) / (d1 - d0) * (d - d0)
}

fn golden_refine<R: Real>(f: impl Fn(R) -> R, mut a: R, mut b: R) -> R {
    let invphi = R::of(0.618_033_988_749_894_9);
    let tol = R::of(1e-12) * b.max(R::one());
    let mut x1 = b - invphi * (b - a);
    let mut x2 = a + invphi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = f(x1);
        }
    }
    (a + b) * R::of(0.5)
}

/// One transmitter: energy budget, circuit cost, and discharge model.
#[derive(Debug, Clone, PartialEq)]
pub struct UserParams<R: Real> {
    /// B, joules available over the frame.
    pub battery_energy: R,
    /// γ, watts drawn by the electronics whenever the user transmits.
    pub circuit_cost: R,
    pub model: DischargeModel<R>,
}

impl<R: Real> UserParams<R> {
    pub fn new(battery_energy: R, circuit_cost: R, model: DischargeModel<R>) -> Result<Self, Error> {
        if !battery_energy.is_finite() || battery_energy <= R::zero() {
            return Err(Error::InvalidParameter(format!(
                "battery_energy must be positive (got {battery_energy})"
            )));
        }
        if !circuit_cost.is_finite() || circuit_cost < R::zero() {
            return Err(Error::InvalidParameter(format!(
                "circuit_cost must be nonnegative (got {circuit_cost})"
            )));
        }
        model.validate()?;
        Ok(UserParams { battery_energy, circuit_cost, model })
    }

    /// Whether the battery can deliver more than the circuit cost at all.
    pub fn can_power_circuit(&self) -> bool {
        self.model.peak_delivered() > self.circuit_cost
    }

    /// Smallest drain at which delivered power covers the circuit cost.
    pub fn min_active_drain(&self) -> Option<R> {
        self.model.min_drain_for(self.circuit_cost)
    }
}
