//! Backward regression scheme for generalized doubly stochastic equations,
//! with penalized and directly reflected obstacle handling and a Picard
//! fixed-point wrapper for solution-dependent noise coupling.
//!
//! The recursion runs in standard orientation: the terminal condition sits at
//! the last grid index and the sweep moves towards index 0. Time labels
//! handed to coefficients are remaining times, so index 0 carries the full
//! horizon, matching the orientation of the continuous problem. Conditioning on one
//! outer B path while regressing over the inner W cloud realizes the
//! product-filtration structure: every outer path yields its own solution
//! surface.
//!
//! Per backward step `i` (inner scenario index suppressed):
//!
//! ```text
//! Z_i   = fit(features(X_i), Y_{i+1} dW_i) / dt
//! yhat  = fit(features(X_i), Y_{i+1} + g(t_{i+1}, X_{i+1}, Y_{i+1}, Z_i) dB_i)
//!         + f(t_i, X_i, Y_{i+1}, Z_i) dt + phi(t_i, X_i, Y_{i+1}) dA_i
//! Y_i   = constraint step against the barrier (none / penalty / reflection)
//! ```
//!
//! The penalty step is solved implicitly in closed form,
//! `Y = yhat + n dt (S - Y)^+`, which is stable for every penalty level.

use ndarray::{s, Array2, Array3, Array4};
use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::{validate_assumptions, CoefficientSet, Obstacle};
use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::grid::{NoisePaths, TimeGrid};
use crate::reflected::{simulate_reflected, DiffusionSpec, ReflectedPathBundle};
use crate::regression::{basis_dimension, RegressionPlan};

/// Forward data for problems posed over a reflected diffusion.
#[derive(Clone, Copy)]
pub struct ReflectedForward<'a> {
    pub diffusion: &'a DiffusionSpec,
    pub domain: &'a Domain,
}

/// Solver resolution and iteration controls.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub grid: TimeGrid,
    /// Inner W scenarios per outer B path.
    pub m_inner: usize,
    /// Outer B paths.
    pub m_outer: usize,
    /// Total degree of the monomial regression basis.
    pub basis_degree: usize,
    /// Penalty level used by config-driven runs; `solve_penalized` takes the
    /// level explicitly.
    pub penalty_n: Option<u32>,
    pub picard_max: usize,
    pub picard_tol: f64,
    /// Sample budget of the assumption validation run before each solve.
    pub validation_budget: usize,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(grid: TimeGrid, seed: u64) -> Self {
        Self {
            grid,
            m_inner: 4096,
            m_outer: 1,
            basis_degree: 2,
            penalty_n: None,
            picard_max: 20,
            picard_tol: 1e-8,
            validation_budget: 200,
            seed,
        }
    }

    pub fn with_scenarios(mut self, m_inner: usize, m_outer: usize) -> Self {
        self.m_inner = m_inner;
        self.m_outer = m_outer;
        self
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.basis_degree = degree;
        self
    }
}

/// Energy functional of one solution, all terms weighted by `exp(mu A)`.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct EnergyStats {
    /// Mean over scenarios of `sup_i exp(mu A_i) Y_i^2`.
    pub e_sup: f64,
    /// Mean of `sum_i exp(mu A_i) Y_i^2 dA_i`.
    pub e_da: f64,
    /// Mean of `sum_i exp(mu A_i) |Z_i|^2 dt`.
    pub e_z: f64,
    /// Mean of the squared terminal constraint push.
    pub e_k: f64,
}

impl EnergyStats {
    pub fn total(&self) -> f64 {
        self.e_sup + self.e_da + self.e_z + self.e_k
    }
}

/// Solution-level diagnostics computed during the solve.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    /// Mean of `sum_i (Y_i - S_i) dK_i`; absent without an obstacle.
    pub skorokhod_residual: Option<f64>,
    /// `min (Y - S)` over every node; absent without an obstacle.
    pub min_gap: Option<f64>,
    pub energy: EnergyStats,
}

/// Arrays of one backward solve.
///
/// `y` and `k` have shape `[m_outer, m_inner, steps+1]`, `z` has shape
/// `[m_outer, m_inner, steps, d]`. `k` vanishes at the terminal index and is
/// nondecreasing towards index 0, i.e. in remaining time. `barrier` holds the
/// obstacle evaluated on the forward paths, shape `[m_inner, steps+1]`.
#[derive(Debug, Clone)]
pub struct BdsdeSolution {
    pub y: Array3<f64>,
    pub z: Array4<f64>,
    pub k: Array3<f64>,
    pub barrier: Option<Array2<f64>>,
    pub forward: ReflectedPathBundle,
    pub grid: TimeGrid,
    pub diagnostics: Diagnostics,
}

impl BdsdeSolution {
    pub fn m_outer(&self) -> usize {
        self.y.shape()[0]
    }

    pub fn m_inner(&self) -> usize {
        self.y.shape()[1]
    }

    pub fn steps(&self) -> usize {
        self.y.shape()[2] - 1
    }

    /// Mean over all scenarios of `Y` at grid index 0 (full remaining time).
    pub fn initial_value(&self) -> f64 {
        let m = (self.m_outer() * self.m_inner()) as f64;
        self.y.slice(s![.., .., 0]).sum() / m
    }

    /// Mean over the inner cloud of `Y` at index 0, one value per outer path.
    pub fn initial_value_per_outer(&self) -> Vec<f64> {
        let m = self.m_inner() as f64;
        (0..self.m_outer())
            .map(|o| self.y.slice(s![o, .., 0]).sum() / m)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ConstraintMode {
    Direct,
    Penalty(f64),
    Reflect,
}

fn apply_constraint(mode: ConstraintMode, yhat: f64, barrier: Option<f64>, dt: f64) -> (f64, f64) {
    let s = match (barrier, mode) {
        (None, _) | (_, ConstraintMode::Direct) => return (yhat, 0.0),
        (Some(s), _) => s,
    };
    match mode {
        ConstraintMode::Direct => unreachable!(),
        ConstraintMode::Reflect => (yhat.max(s), (s - yhat).max(0.0)),
        ConstraintMode::Penalty(n) => {
            if yhat >= s {
                (yhat, 0.0)
            } else {
                let y = (yhat + n * dt * s) / (1.0 + n * dt);
                (y, n * dt * (s - y).max(0.0))
            }
        }
    }
}

enum FitPlan {
    /// Degenerate conditional expectation: the sample mean.
    Mean(usize),
    Regression(RegressionPlan),
}

impl FitPlan {
    fn fit(&self, targets: &[f64]) -> Result<Vec<f64>> {
        match self {
            FitPlan::Mean(m) => {
                if targets.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric {
                        step: 0,
                        message: "non-finite regression targets".into(),
                    });
                }
                let mean = targets.iter().sum::<f64>() / *m as f64;
                Ok(vec![mean; *m])
            }
            FitPlan::Regression(plan) => Ok(plan.fit(targets)?.1),
        }
    }
}

struct SolveContext<'a> {
    coeffs: &'a CoefficientSet,
    paths: &'a NoisePaths,
    config: &'a SolverConfig,
    bundle: ReflectedPathBundle,
    barrier: Option<Array2<f64>>,
    /// One factored plan per backward step, shared by every outer path.
    plans: Vec<FitPlan>,
}

fn prepare<'a>(
    coeffs: &'a CoefficientSet,
    obstacle: &'a Obstacle,
    reflection: Option<ReflectedForward<'_>>,
    paths: &'a NoisePaths,
    config: &'a SolverConfig,
) -> Result<SolveContext<'a>> {
    if config.picard_tol <= 0.0 {
        return Err(Error::Config("picard tolerance must be positive".into()));
    }
    if paths.m_inner() != config.m_inner || paths.m_outer() != config.m_outer {
        return Err(Error::Config(format!(
            "noise has {}x{} scenarios, config asks {}x{}",
            paths.m_inner(),
            paths.m_outer(),
            config.m_inner,
            config.m_outer
        )));
    }
    if paths.steps() != config.grid.steps {
        return Err(Error::Config(format!(
            "noise has {} steps, grid has {}",
            paths.steps(),
            config.grid.steps
        )));
    }
    if paths.dim_b() != coeffs.noise_dim {
        return Err(Error::Config(format!(
            "coefficients expect B dimension {}, noise has {}",
            coeffs.noise_dim,
            paths.dim_b()
        )));
    }

    let report = validate_assumptions(
        coeffs,
        obstacle,
        reflection.map(|r| r.domain),
        config.validation_budget,
        config.seed,
    )?;
    if !report.passed() {
        return Err(Error::Assumptions(report.summary()));
    }

    // Without a forward state the conditional expectation collapses to the
    // sample mean, a degree-0 fit over a constant dummy feature.
    let degree = if reflection.is_some() {
        config.basis_degree
    } else {
        0
    };
    let state_dim = reflection.map(|r| r.diffusion.dim()).unwrap_or(1);
    let needed = 10 * basis_dimension(state_dim, degree);
    if config.m_inner < needed {
        return Err(Error::Config(format!(
            "m_inner {} is below 10x the basis dimension ({needed} needed)",
            config.m_inner
        )));
    }

    let bundle = match reflection {
        Some(r) => simulate_reflected(r.diffusion, r.domain, &config.grid, paths)?,
        None => ReflectedPathBundle::constant(&[0.0], config.m_inner, config.grid.steps),
    };

    let barrier = if obstacle.enabled() {
        let n = config.grid.steps;
        let mut values = Array2::zeros((config.m_inner, n + 1));
        for m in 0..config.m_inner {
            for i in 0..=n {
                let x = bundle.x.slice(s![m, i, ..]);
                let v = obstacle
                    .value(
                        config.grid.remaining(i),
                        x.as_slice().expect("contiguous row"),
                    )
                    .expect("obstacle enabled");
                if !v.is_finite() {
                    return Err(Error::Numeric {
                        step: i,
                        message: "non-finite obstacle value".into(),
                    });
                }
                values[[m, i]] = v;
            }
        }
        Some(values)
    } else {
        None
    };

    let mut plans = Vec::with_capacity(config.grid.steps);
    for i in 0..config.grid.steps {
        let plan = if degree == 0 {
            FitPlan::Mean(config.m_inner)
        } else {
            let feats = bundle.x.slice(s![.., i, ..]);
            FitPlan::Regression(RegressionPlan::new(feats, degree).map_err(|e| step_error(e, i))?)
        };
        plans.push(plan);
    }

    Ok(SolveContext {
        coeffs,
        paths,
        config,
        bundle,
        barrier,
        plans,
    })
}

/// Per-outer-path sweep. `frozen` carries the previous Picard iterate for the
/// noise coupling; when absent, `g` reads the current recursion values.
fn solve_outer(
    ctx: &SolveContext<'_>,
    o: usize,
    mode: ConstraintMode,
    frozen: Option<(&Array3<f64>, &Array4<f64>)>,
) -> Result<(Array2<f64>, Array3<f64>, Array2<f64>)> {
    let grid = &ctx.config.grid;
    let n = grid.steps;
    let m = ctx.config.m_inner;
    let dt = grid.dt;
    let d_w = ctx.paths.dim_w();
    let l = ctx.paths.dim_b();

    let mut y = Array2::<f64>::zeros((m, n + 1));
    let mut z = Array3::<f64>::zeros((m, n, d_w));
    let mut k = Array2::<f64>::zeros((m, n + 1));

    for mm in 0..m {
        let x = ctx.bundle.x.slice(s![mm, n, ..]);
        let v = (ctx.coeffs.terminal)(x.as_slice().expect("contiguous row"));
        if !v.is_finite() {
            return Err(Error::Numeric {
                step: n,
                message: "non-finite terminal value".into(),
            });
        }
        y[[mm, n]] = v;
    }

    let mut targets = vec![0.0; m];
    for i in (0..n).rev() {
        let plan = &ctx.plans[i];

        for c in 0..d_w {
            for mm in 0..m {
                targets[mm] = y[[mm, i + 1]] * ctx.paths.w[[mm, i, c]];
            }
            let fitted = plan.fit(&targets).map_err(|e| step_error(e, i))?;
            for mm in 0..m {
                z[[mm, i, c]] = fitted[mm] / dt;
            }
        }

        let t_next = grid.remaining(i + 1);
        let t_now = grid.remaining(i);
        for mm in 0..m {
            let x_next = ctx.bundle.x.slice(s![mm, i + 1, ..]);
            let x_next = x_next.as_slice().expect("contiguous row");
            let coupling = match frozen {
                Some((fy, fz)) => {
                    let zrow = fz.slice(s![o, mm, i, ..]);
                    (ctx.coeffs.noise_coupling)(
                        t_next,
                        x_next,
                        fy[[o, mm, i + 1]],
                        zrow.as_slice().expect("contiguous row"),
                    )
                }
                None => {
                    let zrow = z.slice(s![mm, i, ..]);
                    (ctx.coeffs.noise_coupling)(
                        t_next,
                        x_next,
                        y[[mm, i + 1]],
                        zrow.as_slice().expect("contiguous row"),
                    )
                }
            };
            if coupling.len() != l {
                return Err(Error::Numeric {
                    step: i,
                    message: format!(
                        "noise coupling returned {} components, expected {l}",
                        coupling.len()
                    ),
                });
            }
            let mut dot = 0.0;
            for c in 0..l {
                dot += coupling[c] * ctx.paths.b[[o, i, c]];
            }
            targets[mm] = y[[mm, i + 1]] + dot;
        }
        let fitted = plan.fit(&targets).map_err(|e| step_error(e, i))?;

        for mm in 0..m {
            let x_now = ctx.bundle.x.slice(s![mm, i, ..]);
            let x_now = x_now.as_slice().expect("contiguous row");
            let zrow = z.slice(s![mm, i, ..]);
            let zrow = zrow.as_slice().expect("contiguous row");
            let y_proxy = y[[mm, i + 1]];
            let yhat = fitted[mm]
                + (ctx.coeffs.driver)(t_now, x_now, y_proxy, zrow) * dt
                + (ctx.coeffs.boundary)(t_now, x_now, y_proxy) * ctx.bundle.da[[mm, i]];
            if !yhat.is_finite() {
                return Err(Error::Numeric {
                    step: i,
                    message: format!("non-finite value in scenario {mm}"),
                });
            }
            let barrier = ctx.barrier.as_ref().map(|b| b[[mm, i]]);
            let (y_new, dk) = apply_constraint(mode, yhat, barrier, dt);
            y[[mm, i]] = y_new;
            k[[mm, i]] = k[[mm, i + 1]] + dk;
        }
    }

    Ok((y, z, k))
}

fn step_error(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric { message, .. } => Error::Numeric { step, message },
        other => other,
    }
}

fn solve_core(
    ctx: &SolveContext<'_>,
    mode: ConstraintMode,
    frozen: Option<(&Array3<f64>, &Array4<f64>)>,
) -> Result<BdsdeSolution> {
    let n = ctx.config.grid.steps;
    let m_outer = ctx.config.m_outer;
    let m_inner = ctx.config.m_inner;
    let d_w = ctx.paths.dim_w();

    let per_outer: Vec<Result<_>> = (0..m_outer)
        .into_par_iter()
        .map(|o| solve_outer(ctx, o, mode, frozen))
        .collect();

    let mut y = Array3::zeros((m_outer, m_inner, n + 1));
    let mut z = Array4::zeros((m_outer, m_inner, n, d_w));
    let mut k = Array3::zeros((m_outer, m_inner, n + 1));
    for (o, res) in per_outer.into_iter().enumerate() {
        let (yo, zo, ko) = res?;
        y.slice_mut(s![o, .., ..]).assign(&yo);
        z.slice_mut(s![o, .., .., ..]).assign(&zo);
        k.slice_mut(s![o, .., ..]).assign(&ko);
    }

    let mut sol = BdsdeSolution {
        y,
        z,
        k,
        barrier: ctx.barrier.clone(),
        forward: ctx.bundle.clone(),
        grid: ctx.config.grid.clone(),
        diagnostics: Diagnostics::default(),
    };
    let energy = energy_statistic(&sol, Some(&sol.forward), ctx.coeffs.constants.exp_weight);
    let (residual, min_gap) = match &sol.barrier {
        Some(_) => (
            Some(skorokhod_residual(&sol)?),
            Some(barrier_gap_minimum(&sol)),
        ),
        None => (None, None),
    };
    sol.diagnostics = Diagnostics {
        skorokhod_residual: residual,
        min_gap,
        energy,
    };
    Ok(sol)
}

/// Solves with the implicit closed-form penalty step at level `n`.
///
/// A zero level (or a disabled obstacle) leaves the recursion unconstrained.
pub fn solve_penalized(
    coeffs: &CoefficientSet,
    obstacle: &Obstacle,
    n: u32,
    reflection: Option<ReflectedForward<'_>>,
    paths: &NoisePaths,
    config: &SolverConfig,
) -> Result<BdsdeSolution> {
    let ctx = prepare(coeffs, obstacle, reflection, paths, config)?;
    let mode = if obstacle.enabled() {
        ConstraintMode::Penalty(n as f64)
    } else {
        ConstraintMode::Direct
    };
    solve_core(&ctx, mode, None)
}

/// Solves with the direct reflection step `Y_i = max(yhat, S_i)`.
///
/// Feasibility and complementarity then hold exactly at every node.
pub fn solve_reflected(
    coeffs: &CoefficientSet,
    obstacle: &Obstacle,
    reflection: Option<ReflectedForward<'_>>,
    paths: &NoisePaths,
    config: &SolverConfig,
) -> Result<BdsdeSolution> {
    let ctx = prepare(coeffs, obstacle, reflection, paths, config)?;
    let mode = if obstacle.enabled() {
        ConstraintMode::Reflect
    } else {
        ConstraintMode::Direct
    };
    solve_core(&ctx, mode, None)
}

/// Weights of the exponentially weighted solution norm.
#[derive(Debug, Clone, Copy)]
pub struct NormWeights {
    pub mu: f64,
    pub beta: f64,
    pub c_bar: f64,
}

impl NormWeights {
    /// Weights induced by declared constants: `c_bar = c / alpha`.
    pub fn from_constants(k: &crate::coeffs::AssumptionConstants) -> Self {
        Self {
            mu: k.exp_weight,
            beta: k.monotonicity,
            c_bar: k.lipschitz_sq / k.z_coupling,
        }
    }
}

/// Squared weighted norm, realized as a Riemann sum over the grid:
/// `c_bar E int e^{mu t + beta A} Y^2 dt + |beta| E int e^{..} Y^2 dA +
/// E int e^{..} |Z|^2 dt`. Time and cumulative local time are taken in
/// remaining-time orientation.
pub fn weighted_norm(
    y: &Array3<f64>,
    z: &Array4<f64>,
    local_time: Option<&ReflectedPathBundle>,
    grid: &TimeGrid,
    w: &NormWeights,
) -> f64 {
    let (m_outer, m_inner, _) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let n = grid.steps;
    let d = z.shape()[3];
    let a_rem = local_time.map(|b| b.cumulative_remaining());
    let da = local_time.map(|b| &b.da);
    let mut acc = 0.0;
    for o in 0..m_outer {
        for m in 0..m_inner {
            let mut path_acc = 0.0;
            for i in 0..n {
                let j = i + 1;
                let a = a_rem.as_ref().map(|a| a[[m, j]]).unwrap_or(0.0);
                let weight = (w.mu * grid.remaining(j) + w.beta * a).exp();
                let yv = y[[o, m, j]];
                let mut z_sq = 0.0;
                for c in 0..d {
                    z_sq += z[[o, m, i, c]] * z[[o, m, i, c]];
                }
                let da_i = da.map(|d| d[[m, i]]).unwrap_or(0.0);
                path_acc += weight
                    * (w.c_bar * yv * yv * grid.dt
                        + w.beta.abs() * yv * yv * da_i
                        + z_sq * grid.dt);
            }
            acc += path_acc;
        }
    }
    acc / (m_outer * m_inner) as f64
}

/// Picard iteration for a noise coupling that reads `(Y, Z)`.
///
/// Each pass freezes the previous iterate inside `g` and solves the resulting
/// equation (reflected when the obstacle is enabled); successive differences
/// are measured in the weighted norm induced by the declared constants. The
/// returned history holds one delta per pass.
pub fn picard_solve(
    coeffs: &CoefficientSet,
    obstacle: &Obstacle,
    reflection: Option<ReflectedForward<'_>>,
    paths: &NoisePaths,
    config: &SolverConfig,
) -> Result<(BdsdeSolution, Vec<f64>)> {
    if config.picard_max == 0 {
        return Err(Error::Config("picard_max must be at least 1".into()));
    }
    let ctx = prepare(coeffs, obstacle, reflection, paths, config)?;
    let mode = if obstacle.enabled() {
        ConstraintMode::Reflect
    } else {
        ConstraintMode::Direct
    };
    let weights = NormWeights::from_constants(&coeffs.constants);

    let n = config.grid.steps;
    let mut frozen_y = Array3::<f64>::zeros((config.m_outer, config.m_inner, n + 1));
    let mut frozen_z = Array4::<f64>::zeros((config.m_outer, config.m_inner, n, paths.dim_w()));
    let mut history = Vec::new();
    for _ in 0..config.picard_max {
        let sol = solve_core(&ctx, mode, Some((&frozen_y, &frozen_z)))?;
        let dy = &sol.y - &frozen_y;
        let dz = &sol.z - &frozen_z;
        let delta = weighted_norm(&dy, &dz, Some(&sol.forward), &config.grid, &weights).sqrt();
        history.push(delta);
        frozen_y.assign(&sol.y);
        frozen_z.assign(&sol.z);
        if delta < config.picard_tol {
            return Ok((sol, history));
        }
    }
    let last = *history.last().unwrap_or(&f64::NAN);
    Err(Error::PicardNoConvergence {
        iterations: config.picard_max,
        last_delta: last,
        history,
    })
}

/// Mean over scenarios of `sum_i (Y_i - S_i) dK_i`.
///
/// Nonpositive for penalized solutions, identically zero for reflected ones.
pub fn skorokhod_residual(sol: &BdsdeSolution) -> Result<f64> {
    let barrier = sol.barrier.as_ref().ok_or_else(|| {
        Error::Precondition("skorokhod residual needs an enabled obstacle".into())
    })?;
    let (m_outer, m_inner) = (sol.m_outer(), sol.m_inner());
    let n = sol.steps();
    let mut acc = 0.0;
    for o in 0..m_outer {
        for m in 0..m_inner {
            for i in 0..n {
                let dk = sol.k[[o, m, i]] - sol.k[[o, m, i + 1]];
                acc += (sol.y[[o, m, i]] - barrier[[m, i]]) * dk;
            }
        }
    }
    Ok(acc / (m_outer * m_inner) as f64)
}

fn barrier_gap_minimum(sol: &BdsdeSolution) -> f64 {
    let barrier = sol.barrier.as_ref().expect("caller checked");
    let mut min_gap = f64::INFINITY;
    for o in 0..sol.m_outer() {
        for m in 0..sol.m_inner() {
            for i in 0..=sol.steps() {
                min_gap = min_gap.min(sol.y[[o, m, i]] - barrier[[m, i]]);
            }
        }
    }
    min_gap
}

/// The four sample means of the energy functional at weight `mu`.
pub fn energy_statistic(
    sol: &BdsdeSolution,
    bundle: Option<&ReflectedPathBundle>,
    mu: f64,
) -> EnergyStats {
    let (m_outer, m_inner) = (sol.m_outer(), sol.m_inner());
    let n = sol.steps();
    let a_rem = bundle.map(|b| b.cumulative_remaining());
    let mut e_sup = 0.0;
    let mut e_da = 0.0;
    let mut e_z = 0.0;
    let mut e_k = 0.0;
    let d = sol.z.shape()[3];
    for o in 0..m_outer {
        for m in 0..m_inner {
            let mut sup = 0.0f64;
            let mut da_acc = 0.0;
            let mut z_acc = 0.0;
            for i in 0..=n {
                let a = a_rem.as_ref().map(|a| a[[m, i]]).unwrap_or(0.0);
                let weight = (mu * a).exp();
                let y_sq = sol.y[[o, m, i]] * sol.y[[o, m, i]];
                sup = sup.max(weight * y_sq);
                if i < n {
                    let da = bundle.map(|b| b.da[[m, i]]).unwrap_or(0.0);
                    da_acc += weight * y_sq * da;
                    let mut z_sq = 0.0;
                    for c in 0..d {
                        z_sq += sol.z[[o, m, i, c]] * sol.z[[o, m, i, c]];
                    }
                    z_acc += weight * z_sq * sol.grid.dt;
                }
            }
            e_sup += sup;
            e_da += da_acc;
            e_z += z_acc;
            e_k += sol.k[[o, m, 0]] * sol.k[[o, m, 0]];
        }
    }
    let count = (m_outer * m_inner) as f64;
    EnergyStats {
        e_sup: e_sup / count,
        e_da: e_da / count,
        e_z: e_z / count,
        e_k: e_k / count,
    }
}
