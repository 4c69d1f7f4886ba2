//! Sum-rates and rate regions for Gaussian multiple-access channels whose
//! transmitters run off non-ideal batteries.
//!
//! Each transmitter drains its battery at some rate `d` but only receives
//! `g(d) ≤ d` watts at the power amplifier (concave discharge loss), and pays
//! a constant circuit cost `γ` whenever it transmits. Under a total energy
//! budget `B` and a frame length `T`, the crate computes:
//!
//! - the optimal single-user transmission schedule ([`single_user`]),
//! - two-user maximum sum-rates under NOMA, TDMA, and the hybrid frame that
//!   mixes solo and superposed phases ([`two_user`]),
//! - the full two-user rate-region boundary ([`region`]),
//! - the `U`-user generalization over all `2^U` subset phases ([`multi_user`]).
//!
//! All rates are held in nats internally; convert with [`nats_to_bits`] at the
//! reporting layer. The core is generic over the scalar type via [`Real`];
//! the `*64` aliases at the crate root fix `f64` for ordinary use.

pub mod battery;
mod certify;
pub mod multi_user;
pub mod region;
pub mod single_user;
pub mod solver;
mod tdma;
pub mod two_user;

mod real;

pub use real::Real;

use solver::SolveReport;

/// Multiple-access strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Noma,
    Tdma,
    Hybrid,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Noma => write!(f, "noma"),
            Strategy::Tdma => write!(f, "tdma"),
            Strategy::Hybrid => write!(f, "hybrid"),
        }
    }
}

/// Converts a rate in nats to bits.
pub fn nats_to_bits<R: Real>(nats: R) -> R {
    nats / R::of(std::f64::consts::LN_2)
}

/// Converts a rate in bits to nats.
pub fn bits_to_nats<R: Real>(bits: R) -> R {
    bits * R::of(std::f64::consts::LN_2)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("discharge rate must be nonnegative (got {0})")]
    NegativeDischarge(f64),
    #[error("invalid discharge model: {0}")]
    InvalidModel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("search interval is empty (lo {lo} > hi {hi})")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("start point infeasible after projection repair (violation {0})")]
    InfeasibleStart(f64),
    #[error("objective or gradient evaluated to a non-finite value")]
    NonFiniteObjective,
    #[error("solver stopped without an optimality certificate: {0}")]
    SolverFailure(SolveReport<f64>),
    #[error("duration {0} lies outside the interior stationarity range")]
    OutOfInteriorRange(f64),
    #[error("rate target {target} outside the achievable range [{lo}, {hi}]")]
    TargetOutOfRange { target: f64, lo: f64, hi: f64 },
    #[error("peer user cannot power its circuit")]
    PeerInfeasible,
    #[error("{requested} users exceeds the supported maximum of {max}")]
    TooManyUsers { requested: usize, max: usize },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("allocation violates frame constraints: {0}")]
    AllocationInvalid(String),
}

/// Concrete `f64` aliases for the generic core types.
pub type DischargeModel64 = battery::DischargeModel<f64>;
pub type UserParams64 = battery::UserParams<f64>;
pub type SolveOptions64 = solver::SolveOptions<f64>;
pub type SolveReport64 = solver::SolveReport<f64>;
pub type SingleUserSolution64 = single_user::SingleUserSolution<f64>;
pub type TwoUserInstance64 = two_user::TwoUserInstance<f64>;
pub type FrameAllocation64 = two_user::FrameAllocation<f64>;
pub type MultiUserInstance64 = multi_user::MultiUserInstance<f64>;
pub type MultiFrameAllocation64 = multi_user::MultiFrameAllocation<f64>;
pub type RatePoint64 = region::RatePoint<f64>;
pub type RegionBoundary64 = region::RegionBoundary<f64>;
