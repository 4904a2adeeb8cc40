//! Sampling-based model predictive control whose rollouts and output are
//! made safe by Hamilton-Jacobi reachability filtering, plus the penalty
//! and shield baselines it is benchmarked against.
//!
//! The numerical core (grids, dynamics, the reachability solver, the
//! safety filter, and the controllers) is generic over the scalar type via
//! [`scalar::Real`]; the benchmark harness and persistence run at f64.
//! Aliases for the common f64 instantiation live at the crate root.

pub mod benchmark;
pub mod controllers;
pub mod dynamics;
pub mod environment;
pub mod filter;
pub mod grid;
pub mod hj;
pub mod render;
pub mod scalar;
pub mod stats;

use smallvec::SmallVec;

/// Small state/control vector; inline up to 4 dims, which covers every
/// model here.
pub type SVec<T> = SmallVec<[T; 4]>;

/// Per-dimension index vector matching [`SVec`].
pub type IVec = SmallVec<[usize; 4]>;

pub use scalar::Real;

pub type Grid64 = grid::Grid<f64>;
pub type Axis64 = grid::Axis<f64>;
pub type ScalarField64 = grid::ScalarField<f64>;
pub type ValueField64 = hj::ValueField<f64>;
pub type SolverParams64 = hj::SolverParams<f64>;
pub type Environment64 = environment::Environment<f64>;
pub type Racetrack64 = environment::Racetrack<f64>;
pub type Scene64 = environment::Scene<f64>;
pub type Task64 = environment::Task<f64>;
pub type MppiParams64 = controllers::MppiParams<f64>;
pub type MethodParams64 = controllers::MethodParams<f64>;
pub type CostSpec64 = controllers::CostSpec<f64>;
pub type Controller64<'a> = controllers::Controller<'a, f64>;
pub type FilterDecision64 = filter::FilterDecision<f64>;
