//! Concave-maximization machinery shared by every problem in the crate:
//! golden-section search, projected-gradient ascent over linear constraints,
//! KKT residual certification, and simplex-grid enumeration for brute-force
//! oracles.

mod ascent;
mod constraints;
mod golden;
mod kkt;
mod simplex;

pub use ascent::maximize_concave_linear;
pub use constraints::LinearConstraintSet;
pub use golden::maximize_concave_1d;
pub use kkt::kkt_residual;
pub use simplex::{simplex_grid, SimplexGrid};

use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Residuals met their tolerances.
    Optimal,
    /// Iteration budget exhausted first; residuals in the report say how far
    /// off the point still is.
    MaxIterations,
    /// The constraint set admits no point (detected during start repair).
    Infeasible,
}

/// What a solve produced, and how much it should be trusted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport<R: Real> {
    pub status: SolveStatus,
    pub objective: R,
    /// Infinity-norm of the gradient projected onto the feasible cone.
    pub stationarity_residual: R,
    /// Maximum constraint violation at the returned point.
    pub feasibility_residual: R,
    pub iterations: usize,
}

impl<R: Real> SolveReport<R> {
    pub fn to_f64(&self) -> SolveReport<f64> {
        SolveReport {
            status: self.status,
            objective: self.objective.as_f64(),
            stationarity_residual: self.stationarity_residual.as_f64(),
            feasibility_residual: self.feasibility_residual.as_f64(),
            iterations: self.iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

impl<R: Real> std::fmt::Display for SolveReport<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:?} (objective {}, stationarity {:e}, feasibility {:e}, {} iterations)",
            self.status,
            self.objective,
            self.stationarity_residual.as_f64(),
            self.feasibility_residual.as_f64(),
            self.iterations
        )
    }
}

/// Solver tolerances. The defaults suit every problem size in this crate
/// (at most a few dozen variables).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<R: Real> {
    /// Stationarity target for an `Optimal` verdict.
    pub tolerance: R,
    /// Feasibility target for an `Optimal` verdict.
    pub feasibility: R,
    pub max_iter: usize,
}

impl<R: Real> Default for SolveOptions<R> {
    fn default() -> Self {
        SolveOptions { tolerance: R::of(1e-6), feasibility: R::of(1e-9), max_iter: 100_000 }
    }
}

impl<R: Real> SolveOptions<R> {
    pub fn with_tolerance(tolerance: R) -> Self {
        SolveOptions { tolerance, ..Self::default() }
    }
}
