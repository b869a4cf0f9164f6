//! Monte Carlo solver for reflected generalized backward doubly stochastic
//! differential equations.
//!
//! The library simulates a reflected forward diffusion with its boundary
//! local time, runs a least-squares regression scheme backward along two
//! independent Brownian drivers, handles a lower obstacle either by
//! penalization or by direct reflection, and evaluates the induced random
//! field `u(t, x)` on probe points. A deterministic finite-difference solver
//! for the one-dimensional obstacle problem with nonlinear Neumann boundary
//! acts as the cross-validation oracle when the second driver decouples, and
//! a property harness turns the structural theorems (comparison, monotone
//! penalization, convergence, energy bounds) into executable checks.

pub mod coeffs;
pub mod domain;
pub mod error;
pub mod export;
pub mod fd;
pub mod field;
pub mod grid;
pub mod properties;
pub mod reflected;
pub mod regression;
pub mod solver;

pub use coeffs::{
    penalize, validate_assumptions, AssumptionConstants, AssumptionReport, CoefficientSet, Obstacle,
};
pub use domain::{Domain, Location};
pub use error::{Error, Result};
pub use fd::{compare_mc_fd, solve_obstacle_pde_1d, FdMesh, FdSolution, OracleComparison};
pub use field::{evaluate_field, field_continuity_report, FieldProbe, FieldTable};
pub use grid::{
    moment_report, sample_paths, sample_paths_split, seed_from_env, NoisePaths, TimeGrid,
};
pub use properties::{
    comparison_check, convergence_check, energy_bound_check, penalization_monotone_check,
    PropertyReport,
};
pub use reflected::{
    continuity_probe, local_time_moments, simulate_reflected, DiffusionSpec, ReflectedPathBundle,
};
pub use regression::regress_conditional;
pub use solver::{
    energy_statistic, picard_solve, skorokhod_residual, solve_penalized, solve_reflected,
    weighted_norm, BdsdeSolution, EnergyStats, NormWeights, ReflectedForward, SolverConfig,
};
