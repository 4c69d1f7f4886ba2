use super::{SolveReport, SolveStatus};
use crate::{Error, Real};

const INVPHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes a concave scalar function on `[lo, hi]` by golden-section
/// search. Endpoints are always candidates, so boundary optima are exact.
///
/// The reported stationarity residual is the final bracket width: for a
/// concave function the argmax lies inside the bracket, so the width bounds
/// the argument error directly.
pub fn maximize_concave_1d<R: Real>(
    f: impl Fn(R) -> R,
    lo: R,
    hi: R,
    tol: R,
) -> Result<(R, R, SolveReport<R>), Error> {
    if lo > hi {
        return Err(Error::EmptyInterval { lo: lo.as_f64(), hi: hi.as_f64() });
    }
    // Non-finite values (possible at domain edges) lose every comparison.
    let eval = |x: R| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            R::neg_infinity()
        }
    };

    let invphi = R::of(INVPHI);
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - invphi * (b - a);
    let mut x2 = a + invphi * (b - a);
    let mut f1 = eval(x1);
    let mut f2 = eval(x2);
    let mut iterations = 0usize;
    // Each iteration shrinks the bracket by the golden ratio, so even a
    // [0, 1e9] bracket hits 1e-15 width within ~120 steps.
    let max_iter = 400;
    while b - a > tol && iterations < max_iter {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = eval(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = eval(x1);
        }
        iterations += 1;
    }

    let mid = (a + b) * R::of(0.5);
    let mut best = (mid, eval(mid));
    for cand in [lo, hi] {
        let v = eval(cand);
        if v > best.1 {
            best = (cand, v);
        }
    }

    let width = b - a;
    let report = SolveReport {
        status: if width <= tol { SolveStatus::Optimal } else { SolveStatus::MaxIterations },
        objective: best.1,
        stationarity_residual: width,
        feasibility_residual: R::zero(),
        iterations,
    };
    Ok((best.0, best.1, report))
}
