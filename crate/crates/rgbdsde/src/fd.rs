//! Deterministic finite-difference solver for the one-dimensional obstacle
//! problem with nonlinear Neumann boundary, the cross-validation oracle for
//! the probabilistic field when the noise coupling vanishes.
//!
//! Forward orientation: `u(0, x)` is the terminal data `l`, the march moves
//! towards the horizon. Implicit Euler in time, centered differences for the
//! generator, ghost nodes carrying `du/dn = -phi(t, x, u)` with one lagged
//! fixed-point refresh per step, and an active-set penalty with a ramped
//! weight for the obstacle.

use ndarray::Array2;
use serde::Serialize;

use crate::coeffs::{CoefficientSet, Obstacle};
use crate::error::{Error, Result};
use crate::field::FieldTable;
use crate::reflected::DiffusionSpec;

/// Space-time mesh on an interval.
#[derive(Debug, Clone, Serialize)]
pub struct FdMesh {
    pub lo: f64,
    pub hi: f64,
    /// Number of space intervals; `space_steps + 1` nodes.
    pub space_steps: usize,
    pub time_steps: usize,
    pub horizon: f64,
    pub dx: f64,
    pub dt: f64,
}

impl FdMesh {
    pub fn new(
        lo: f64,
        hi: f64,
        horizon: f64,
        space_steps: usize,
        time_steps: usize,
    ) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config(format!(
                "mesh needs lo < hi, got [{lo}, {hi}]"
            )));
        }
        if !(horizon > 0.0) {
            return Err(Error::Config("mesh horizon must be positive".into()));
        }
        if space_steps < 2 || time_steps < 1 {
            return Err(Error::Config(
                "mesh needs at least 2 space intervals and 1 time step".into(),
            ));
        }
        Ok(Self {
            lo,
            hi,
            space_steps,
            time_steps,
            horizon,
            dx: (hi - lo) / space_steps as f64,
            dt: horizon / time_steps as f64,
        })
    }

    pub fn node(&self, j: usize) -> f64 {
        self.lo + self.dx * j as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * (k as f64 / self.time_steps as f64)
    }
}

/// Finite-difference solution layers `u[time][space]`.
#[derive(Debug, Clone)]
pub struct FdSolution {
    pub u: Array2<f64>,
    pub mesh: FdMesh,
    /// Linear solves spent on the obstacle penalty, per time step.
    pub penalty_iterations: Vec<usize>,
    /// Raised when `|b| dx / sigma^2 > 2` somewhere on the mesh.
    pub peclet_warning: bool,
}

impl FdSolution {
    /// Bilinear interpolation at `(t, x)`.
    pub fn value_at(&self, t: f64, x: f64) -> Result<f64> {
        let mesh = &self.mesh;
        if !(0.0..=mesh.horizon + 1e-12).contains(&t) || x < mesh.lo - 1e-12 || x > mesh.hi + 1e-12
        {
            return Err(Error::Config(format!(
                "probe ({t}, {x}) outside mesh [0, {}] x [{}, {}]",
                mesh.horizon, mesh.lo, mesh.hi
            )));
        }
        let tf = (t / mesh.dt).clamp(0.0, mesh.time_steps as f64);
        let xf = ((x - mesh.lo) / mesh.dx).clamp(0.0, mesh.space_steps as f64);
        let k0 = (tf.floor() as usize).min(mesh.time_steps - 1);
        let j0 = (xf.floor() as usize).min(mesh.space_steps - 1);
        let wt = tf - k0 as f64;
        let wx = xf - j0 as f64;
        Ok((1.0 - wt) * (1.0 - wx) * self.u[[k0, j0]]
            + (1.0 - wt) * wx * self.u[[k0, j0 + 1]]
            + wt * (1.0 - wx) * self.u[[k0 + 1, j0]]
            + wt * wx * self.u[[k0 + 1, j0 + 1]])
    }

    pub fn range(&self) -> f64 {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in self.u.iter() {
            min = min.min(v);
            max = max.max(v);
        }
        max - min
    }
}

fn thomas_solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return Err(Error::Numeric {
            step: 0,
            message: "singular tridiagonal system".into(),
        });
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for j in 1..n {
        denom = diag[j] - lower[j] * c[j - 1];
        if denom.abs() < 1e-300 {
            return Err(Error::Numeric {
                step: j,
                message: "singular tridiagonal system".into(),
            });
        }
        c[j] = upper[j] / denom;
        d[j] = (rhs[j] - lower[j] * d[j - 1]) / denom;
    }
    let mut x = d;
    for j in (0..n - 1).rev() {
        let next = x[j + 1];
        x[j] -= c[j] * next;
    }
    Ok(x)
}

const PENALTY_TOL: f64 = 1e-8;
const PENALTY_RAMPS: usize = 8;
const PENALTY_START: f64 = 1e4;

/// Solves the penalized complementarity system
/// `(A + rho 1_active) v = rhs + rho 1_active h` by active-set iteration,
/// ramping `rho` until the residual `max (h - v)^+` falls below tolerance.
fn penalty_solve(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
    barrier: &[f64],
    start: &[f64],
    solves: &mut usize,
) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut v = start.to_vec();
    let mut rho = PENALTY_START;
    let mut residual = f64::INFINITY;
    for _ in 0..PENALTY_RAMPS {
        let mut active: Vec<bool> = (0..n).map(|j| v[j] < barrier[j]).collect();
        for _ in 0..64 {
            let mut pd = diag.to_vec();
            let mut pr = rhs.to_vec();
            for j in 0..n {
                if active[j] {
                    pd[j] += rho;
                    pr[j] += rho * barrier[j];
                }
            }
            v = thomas_solve(lower, &pd, upper, &pr)?;
            *solves += 1;
            let next: Vec<bool> = (0..n).map(|j| v[j] < barrier[j]).collect();
            if next == active {
                break;
            }
            active = next;
        }
        residual = (0..n)
            .map(|j| (barrier[j] - v[j]).max(0.0))
            .fold(0.0, f64::max);
        if residual < PENALTY_TOL {
            return Ok(v);
        }
        rho *= 10.0;
    }
    Err(Error::PenaltyNoConvergence { residual })
}

fn assert_noise_coupling_vanishes(coeffs: &CoefficientSet, lo: f64, hi: f64) -> Result<()> {
    for i in 0..8 {
        let x = lo + (hi - lo) * i as f64 / 7.0;
        for &(t, y, z) in &[(0.0, 0.7, 0.3), (0.5, -1.1, -0.4), (1.0, 2.0, 1.5)] {
            let g = (coeffs.noise_coupling)(t, &[x], y, &[z]);
            if g.iter().any(|v| v.abs() > 1e-14) {
                return Err(Error::Config(
                    "the finite-difference oracle requires a vanishing noise coupling".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Implicit finite-difference march for
/// `min(u - h, u_t - L u - f(t, x, u, sigma u_x)) = 0` on `[lo, hi]` with
/// `u(0, x) = l(x)` and `du/dn + phi(t, x, u) = 0` on the boundary.
pub fn solve_obstacle_pde_1d(
    coeffs: &CoefficientSet,
    obstacle: &Obstacle,
    diffusion: &DiffusionSpec,
    mesh: &FdMesh,
) -> Result<FdSolution> {
    if diffusion.dim() != 1 {
        return Err(Error::Config(
            "the finite-difference oracle is one-dimensional".into(),
        ));
    }
    assert_noise_coupling_vanishes(coeffs, mesh.lo, mesh.hi)?;

    let nj = mesh.space_steps + 1;
    let nk = mesh.time_steps;
    let dx = mesh.dx;
    let dt = mesh.dt;

    // Node coefficients of the generator.
    let mut adv = vec![0.0; nj];
    let mut dif = vec![0.0; nj];
    let mut peclet_warning = false;
    for j in 0..nj {
        let x = [mesh.node(j)];
        let b = (diffusion.drift)(&x);
        let sig = (diffusion.diffusion)(&x);
        adv[j] = b[0];
        dif[j] = 0.5 * sig[0] * sig[0];
        if adv[j].abs() > 0.0 && adv[j].abs() * dx > 2.0 * sig[0] * sig[0] {
            peclet_warning = true;
        }
    }

    let mut u = Array2::zeros((nk + 1, nj));
    for j in 0..nj {
        let l = (coeffs.terminal)(&[mesh.node(j)]);
        if let Some(h0) = obstacle.value(0.0, &[mesh.node(j)]) {
            if l < h0 - 1e-12 {
                return Err(Error::Config(format!(
                    "barrier {h0} exceeds initial data {l} at x = {}",
                    mesh.node(j)
                )));
            }
        }
        u[[0, j]] = l;
    }

    let mut lower = vec![0.0; nj];
    let mut diag = vec![0.0; nj];
    let mut upper = vec![0.0; nj];
    for j in 1..nj - 1 {
        lower[j] = -(dif[j] / (dx * dx) - adv[j] / (2.0 * dx));
        diag[j] = 1.0 / dt + 2.0 * dif[j] / (dx * dx);
        upper[j] = -(dif[j] / (dx * dx) + adv[j] / (2.0 * dx));
    }
    diag[0] = 1.0 / dt + 2.0 * dif[0] / (dx * dx);
    upper[0] = -2.0 * dif[0] / (dx * dx);
    diag[nj - 1] = 1.0 / dt + 2.0 * dif[nj - 1] / (dx * dx);
    lower[nj - 1] = -2.0 * dif[nj - 1] / (dx * dx);

    let mut penalty_iterations = vec![0usize; nk];
    let mut rhs = vec![0.0; nj];
    let mut grad = vec![0.0; nj];
    for k in 0..nk {
        let t_new = mesh.time(k + 1);
        let prev: Vec<f64> = (0..nj).map(|j| u[[k, j]]).collect();
        let barrier: Option<Vec<f64>> = obstacle.value(t_new, &[mesh.lo]).map(|_| {
            (0..nj)
                .map(|j| obstacle.value(t_new, &[mesh.node(j)]).unwrap())
                .collect()
        });

        let mut w = prev.clone();
        // Initial assembly plus one lagged refresh of phi and f.
        for _pass in 0..2 {
            let phi_lo = (coeffs.boundary)(t_new, &[mesh.lo], w[0]);
            let phi_hi = (coeffs.boundary)(t_new, &[mesh.hi], w[nj - 1]);
            grad[0] = -phi_lo;
            grad[nj - 1] = phi_hi;
            for j in 1..nj - 1 {
                grad[j] = (w[j + 1] - w[j - 1]) / (2.0 * dx);
            }
            for j in 0..nj {
                let x = [mesh.node(j)];
                let sig = (diffusion.diffusion)(&x);
                let f = (coeffs.driver)(t_new, &x, w[j], &[sig[0] * grad[j]]);
                if !f.is_finite() {
                    return Err(Error::Numeric {
                        step: k,
                        message: format!("non-finite driver at node {j}"),
                    });
                }
                rhs[j] = prev[j] / dt + f;
            }
            rhs[0] += 2.0 * dif[0] * phi_lo / dx - adv[0] * phi_lo;
            rhs[nj - 1] += 2.0 * dif[nj - 1] * phi_hi / dx + adv[nj - 1] * phi_hi;

            w = match &barrier {
                Some(h) => penalty_solve(
                    &lower,
                    &diag,
                    &upper,
                    &rhs,
                    h,
                    &w,
                    &mut penalty_iterations[k],
                )?,
                None => thomas_solve(&lower, &diag, &upper, &rhs)?,
            };
        }
        for j in 0..nj {
            u[[k + 1, j]] = w[j];
        }
    }

    Ok(FdSolution {
        u,
        mesh: mesh.clone(),
        penalty_iterations,
        peclet_warning,
    })
}

/// One probe row of an [`OracleComparison`].
#[derive(Debug, Clone, Serialize)]
pub struct OracleComparisonRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub mc_value: f64,
    pub fd_value: f64,
    pub abs_error: f64,
    /// Absolute error relative to the range of the finite-difference solution.
    pub rel_error: f64,
}

/// Probe-wise comparison of the Monte Carlo field against the oracle.
#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub rows: Vec<OracleComparisonRow>,
    pub fd_range: f64,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

/// Compares the field table's aggregate values against the oracle solution.
pub fn compare_mc_fd(field: &FieldTable, fd: &FdSolution) -> Result<OracleComparison> {
    let range = fd.range().max(1e-12);
    let mut rows = Vec::with_capacity(field.probes.len());
    let mut max_abs: f64 = 0.0;
    for (probe, agg) in field.probes.iter().zip(field.aggregate.iter()) {
        let fd_value = fd.value_at(probe.t, probe.x[0])?;
        let abs_error = (agg.mean - fd_value).abs();
        max_abs = max_abs.max(abs_error);
        rows.push(OracleComparisonRow {
            t: probe.t,
            x: probe.x.clone(),
            mc_value: agg.mean,
            fd_value,
            abs_error,
            rel_error: abs_error / range,
        });
    }
    Ok(OracleComparison {
        rows,
        fd_range: range,
        max_abs_error: max_abs,
        max_rel_error: max_abs / range,
    })
}
