use crate::{Error, Real};

/// Box bounds plus inequality rows `a·x ≤ b`.
///
/// This is the whole constraint language the frame problems need: energy
/// budgets, the time budget, and per-phase discharge caps are all linear
/// after the perspective transform.
#[derive(Debug, Clone)]
pub struct LinearConstraintSet<R: Real> {
    pub(crate) lower: Vec<R>,
    pub(crate) upper: Vec<R>,
    pub(crate) rows: Vec<(Vec<R>, R)>,
}

/// Dykstra sweep cap; cycling this long means the set is (nearly) empty.
const MAX_SWEEPS: usize = 10_000;
/// Per-sweep movement threshold that ends the projection.
const SWEEP_TOL: f64 = 1e-10;

impl<R: Real> LinearConstraintSet<R> {
    /// Unconstrained set of the given dimension; tighten with [`bound`] and
    /// [`add_row`].
    ///
    /// [`bound`]: LinearConstraintSet::bound
    /// [`add_row`]: LinearConstraintSet::add_row
    pub fn new(dim: usize) -> Self {
        LinearConstraintSet {
            lower: vec![R::neg_infinity(); dim],
            upper: vec![R::infinity(); dim],
            rows: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Sets `lo ≤ x[k] ≤ hi`.
    pub fn bound(&mut self, k: usize, lo: R, hi: R) -> &mut Self {
        assert!(lo <= hi, "bound {k}: lower {lo} exceeds upper {hi}");
        self.lower[k] = lo;
        self.upper[k] = hi;
        self
    }

    /// Adds the inequality `coeffs·x ≤ rhs`.
    pub fn add_row(&mut self, coeffs: Vec<R>, rhs: R) -> &mut Self {
        assert_eq!(coeffs.len(), self.dim(), "row length must match dimension");
        self.rows.push((coeffs, rhs));
        self
    }

    /// Maximum violation at `x` (0 when feasible).
    pub fn violation(&self, x: &[R]) -> R {
        let mut worst = R::zero();
        for (k, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[k] - v).max(v - self.upper[k]);
        }
        for (a, b) in &self.rows {
            worst = worst.max(dot(a, x) - *b);
        }
        worst
    }

    /// Projects `x` onto the feasible set (Dykstra's cyclic scheme over the
    /// box and each half-space).
    ///
    /// Each half-space correction is parallel to its row normal, so a single
    /// scalar per row carries it between sweeps; only the box needs a dense
    /// correction vector.
    pub fn project(&self, x: &mut [R]) {
        debug_assert_eq!(x.len(), self.dim());
        if self.rows.is_empty() {
            self.clip_box(x);
            return;
        }
        let norms: Vec<R> = self.rows.iter().map(|(a, _)| dot(a, a)).collect();
        let mut row_corr = vec![R::zero(); self.rows.len()];
        let mut box_corr = vec![R::zero(); x.len()];
        let tol = R::of(SWEEP_TOL);

        for _ in 0..MAX_SWEEPS {
            let mut moved = R::zero();

            for (j, (a, b)) in self.rows.iter().enumerate() {
                if norms[j] <= R::zero() {
                    continue;
                }
                // y = x + previous correction; project y onto a·x ≤ b
                let excess = dot(a, x) + row_corr[j] * norms[j] - *b;
                let t = (excess / norms[j]).max(R::zero());
                let shift = row_corr[j] - t;
                if shift != R::zero() {
                    for (xi, ai) in x.iter_mut().zip(a) {
                        *xi = *xi + shift * *ai;
                    }
                    moved = moved.max(shift.abs() * norms[j].sqrt());
                }
                row_corr[j] = t;
            }

            for (k, xi) in x.iter_mut().enumerate() {
                let y = *xi + box_corr[k];
                let clipped = y.max(self.lower[k]).min(self.upper[k]);
                moved = moved.max((clipped - *xi).abs());
                box_corr[k] = y - clipped;
                *xi = clipped;
            }

            if moved <= tol && self.violation(x) <= tol {
                break;
            }
        }
    }

    /// Projects `x` and verifies the result is feasible; a residual violation
    /// means the constraint set is (numerically) empty.
    pub fn repair(&self, x: &mut [R]) -> Result<(), Error> {
        self.project(x);
        let v = self.violation(x);
        if v > R::of(1e-8) {
            return Err(Error::InfeasibleStart(v.as_f64()));
        }
        Ok(())
    }

    fn clip_box(&self, x: &mut [R]) {
        for (k, xi) in x.iter_mut().enumerate() {
            *xi = (*xi).max(self.lower[k]).min(self.upper[k]);
        }
    }
}

pub(crate) fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).fold(R::zero(), |acc, (x, y)| acc + *x * *y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_projection_clips() {
        let mut cons = LinearConstraintSet::new(2);
        cons.bound(0, 0.0, 1.0).bound(1, -1.0, 1.0);
        let mut x = vec![2.0, -3.0];
        cons.project(&mut x);
        assert_eq!(x, vec![1.0, -1.0]);
        assert_eq!(cons.violation(&x), 0.0);
    }

    #[test]
    fn halfspace_projection_is_orthogonal() {
        let mut cons = LinearConstraintSet::<f64>::new(2);
        cons.add_row(vec![1.0, 1.0], 1.0);
        let mut x = vec![1.0, 1.0];
        cons.project(&mut x);
        assert!((x[0] - 0.5).abs() < 1e-9);
        assert!((x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn box_and_row_combination() {
        // (1.2, 0.6): only the row binds, so the answer is the plain
        // half-space projection (0.8, 0.2).
        let mut cons = LinearConstraintSet::<f64>::new(2);
        cons.bound(0, 0.0, 1.0).bound(1, 0.0, 1.0).add_row(vec![1.0, 1.0], 1.0);
        let mut x = vec![1.2, 0.6];
        cons.project(&mut x);
        assert!((x[0] - 0.8).abs() < 1e-8, "{x:?}");
        assert!((x[1] - 0.2).abs() < 1e-8, "{x:?}");

        // (2, 0.4): box and row bind together at the corner (1, 0); the
        // residual (1, 0.4) splits into 0.6·e₀ + 0.4·(1,1), all ≥ 0, so the
        // corner is the true projection (not the naive clip-then-slide point).
        let mut x = vec![2.0, 0.4];
        cons.project(&mut x);
        assert!((x[0] - 1.0).abs() < 1e-8, "{x:?}");
        assert!(x[1].abs() < 1e-8, "{x:?}");
    }

    #[test]
    fn violation_reports_worst_offence() {
        let mut cons = LinearConstraintSet::<f64>::new(2);
        cons.bound(0, 0.0, 1.0).bound(1, 0.0, 1.0).add_row(vec![1.0, 1.0], 1.0);
        assert_eq!(cons.violation(&[0.25, 0.25]), 0.0);
        assert!((cons.violation(&[1.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!((cons.violation(&[-0.5, 0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_set_fails_repair() {
        let mut cons = LinearConstraintSet::new(1);
        cons.bound(0, 0.0, 1.0).add_row(vec![1.0], -1.0); // x ≤ −1 vs x ≥ 0
        let mut x = vec![0.5];
        assert!(matches!(cons.repair(&mut x), Err(Error::InfeasibleStart(_))));
    }

    #[test]
    fn feasible_point_is_untouched() {
        let mut cons = LinearConstraintSet::new(3);
        cons.bound(0, 0.0, 1.0).bound(1, 0.0, 1.0).bound(2, 0.0, 1.0);
        cons.add_row(vec![1.0, 1.0, 1.0], 2.0);
        let mut x = vec![0.3, 0.3, 0.3];
        cons.project(&mut x);
        assert_eq!(x, vec![0.3, 0.3, 0.3]);
    }
}
