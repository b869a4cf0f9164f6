//! Reflected diffusion in a bounded convex domain by Euler projection.
//!
//! Each step takes a tentative Euler move and projects it back onto the
//! closure; the projection displacement is the per-step local-time increment.
//! States are therefore feasible by construction, the increment is
//! nonnegative, and it is positive only when the new state sits on the
//! boundary.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use serde::Serialize;

use crate::domain::{Domain, Location};
use crate::error::{Error, Result};
use crate::grid::{sample_paths, NoisePaths, TimeGrid};

/// Drift coefficient `b: point -> vector`.
pub type DriftFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// Diffusion coefficient `sigma: point -> d x d matrix`, row major.
pub type DiffusionFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Coefficients and start point of the forward diffusion.
#[derive(Clone)]
pub struct DiffusionSpec {
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub start: Vec<f64>,
    /// Declared common Lipschitz constant of drift and diffusion.
    pub lipschitz: f64,
}

impl DiffusionSpec {
    /// Scalar constant coefficients in one dimension.
    pub fn scalar(drift: f64, sigma: f64, start: f64) -> Self {
        Self {
            drift: Arc::new(move |_| vec![drift]),
            diffusion: Arc::new(move |_| vec![sigma]),
            start: vec![start],
            lipschitz: 1.0,
        }
    }

    pub fn with_start(&self, start: Vec<f64>) -> Self {
        Self {
            drift: self.drift.clone(),
            diffusion: self.diffusion.clone(),
            start,
            lipschitz: self.lipschitz,
        }
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }
}

/// Simulated reflected paths with their local-time increments.
///
/// `x` has shape `[m, steps+1, d]`, `da` has shape `[m, steps]`.
#[derive(Debug, Clone)]
pub struct ReflectedPathBundle {
    pub x: Array3<f64>,
    pub da: Array2<f64>,
    pub a_total: Vec<f64>,
}

impl ReflectedPathBundle {
    pub fn scenarios(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.da.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.x.shape()[2]
    }

    /// A bundle with a constant path and zero local time, for problems
    /// without a forward state.
    pub fn constant(point: &[f64], scenarios: usize, steps: usize) -> Self {
        let d = point.len().max(1);
        let mut x = Array3::zeros((scenarios, steps + 1, d));
        for m in 0..scenarios {
            for i in 0..=steps {
                for (k, &v) in point.iter().enumerate() {
                    x[[m, i, k]] = v;
                }
            }
        }
        Self {
            x,
            da: Array2::zeros((scenarios, steps)),
            a_total: vec![0.0; scenarios],
        }
    }

    /// Local time accumulated from grid index `i` to the end, per scenario.
    ///
    /// This is the cumulative local time in the orientation of the backward
    /// equation: zero at the terminal index, increasing towards index 0.
    pub fn cumulative_remaining(&self) -> Array2<f64> {
        let m = self.scenarios();
        let n = self.steps();
        let mut a = Array2::zeros((m, n + 1));
        for s in 0..m {
            for i in (0..n).rev() {
                a[[s, i]] = a[[s, i + 1]] + self.da[[s, i]];
            }
        }
        a
    }

    /// Local time accumulated from the path start up to grid index `i`.
    pub fn cumulative_forward(&self) -> Array2<f64> {
        let m = self.scenarios();
        let n = self.steps();
        let mut a = Array2::zeros((m, n + 1));
        for s in 0..m {
            for i in 0..n {
                a[[s, i + 1]] = a[[s, i]] + self.da[[s, i]];
            }
        }
        a
    }
}

fn apply_matrix(mat: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for r in 0..d {
        let mut acc = 0.0;
        for c in 0..d {
            acc += mat[r * d + c] * v[c];
        }
        out[r] = acc;
    }
}

/// Simulates the projected Euler scheme for every inner scenario of `paths`.
pub fn simulate_reflected(
    spec: &DiffusionSpec,
    domain: &Domain,
    grid: &TimeGrid,
    paths: &NoisePaths,
) -> Result<ReflectedPathBundle> {
    let d = spec.dim();
    if d != domain.dim() {
        return Err(Error::Config(format!(
            "diffusion dimension {d} does not match domain dimension {}",
            domain.dim()
        )));
    }
    if d != paths.dim_w() {
        return Err(Error::Config(format!(
            "diffusion dimension {d} does not match W dimension {}",
            paths.dim_w()
        )));
    }
    if domain.contains(&spec.start)? == Location::Outside {
        return Err(Error::Config(format!(
            "start point {:?} lies outside the domain closure",
            spec.start
        )));
    }
    if paths.steps() != grid.steps {
        return Err(Error::Config(format!(
            "noise has {} steps, grid has {}",
            paths.steps(),
            grid.steps
        )));
    }

    let m = paths.m_inner();
    let n = grid.steps;
    let dt = grid.dt;
    let mut x = Array3::zeros((m, n + 1, d));
    let mut da = Array2::zeros((m, n));
    let mut a_total = vec![0.0; m];

    let mut state = vec![0.0; d];
    let mut tentative = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let mut diffused = vec![0.0; d];
    for s in 0..m {
        state.copy_from_slice(&spec.start);
        for (k, &v) in state.iter().enumerate() {
            x[[s, 0, k]] = v;
        }
        for i in 0..n {
            let b = (spec.drift)(&state);
            let sig = (spec.diffusion)(&state);
            if b.len() != d || sig.len() != d * d {
                return Err(Error::Numeric {
                    step: i,
                    message: "coefficient returned wrong dimension".into(),
                });
            }
            for k in 0..d {
                noise[k] = paths.w[[s, i, k]];
            }
            apply_matrix(&sig, &noise, &mut diffused);
            for k in 0..d {
                tentative[k] = state[k] + b[k] * dt + diffused[k];
                if !tentative[k].is_finite() {
                    return Err(Error::Numeric {
                        step: i,
                        message: format!("non-finite state update in scenario {s}"),
                    });
                }
            }
            let (projected, displacement) = domain.project(&tentative)?;
            state.copy_from_slice(&projected);
            for (k, &v) in state.iter().enumerate() {
                x[[s, i + 1, k]] = v;
            }
            da[[s, i]] = displacement;
            a_total[s] += displacement;
        }
    }

    Ok(ReflectedPathBundle { x, da, a_total })
}

/// Sample moments of the terminal local time.
#[derive(Debug, Clone, Serialize)]
pub struct LocalTimeStats {
    /// `(p, sample mean of A_total^p)` for each requested power.
    pub power_moments: Vec<(u32, f64)>,
    /// Sample mean of `exp(mu * A_total)`.
    pub exp_moment: f64,
    pub mu: f64,
    /// Raised when the exponential moment overflowed for some scenario.
    pub exp_overflowed: bool,
}

/// Estimates `E[A^p]` and `E[exp(mu A)]` from a bundle.
pub fn local_time_moments(
    bundle: &ReflectedPathBundle,
    mu: f64,
    powers: &[u32],
) -> Result<LocalTimeStats> {
    let m = bundle.scenarios();
    if m == 0 {
        return Err(Error::Precondition("empty path bundle".into()));
    }
    let mf = m as f64;
    let power_moments = powers
        .iter()
        .map(|&p| {
            let mean = bundle.a_total.iter().map(|a| a.powi(p as i32)).sum::<f64>() / mf;
            (p, mean)
        })
        .collect();
    let mut exp_sum = 0.0;
    let mut overflowed = false;
    for &a in &bundle.a_total {
        let e = (mu * a).exp();
        if !e.is_finite() {
            overflowed = true;
        }
        exp_sum += e;
    }
    Ok(LocalTimeStats {
        power_moments,
        exp_moment: exp_sum / mf,
        mu,
        exp_overflowed: overflowed,
    })
}

/// One compared pair in a [`ContinuityReport`].
#[derive(Debug, Clone, Serialize)]
pub struct ContinuityPair {
    pub t_first: f64,
    pub t_second: f64,
    pub x_first: Vec<f64>,
    pub x_second: Vec<f64>,
    /// Sample mean of `sup_s |X1 - X2|^4` under common noise.
    pub state_sup4: f64,
    /// Sample mean of `sup_s |A1 - A2|^4` under common noise.
    pub local_time_sup4: f64,
    /// `|t2 - t1|^2 + |x1 - x2|^4`.
    pub bound: f64,
    pub state_ratio: f64,
    pub local_time_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub pairs: Vec<ContinuityPair>,
}

/// Fourth-moment continuity of `(t, x) -> (X, A)` under common noise.
///
/// Both paths of a pair run on a shared grid over the longer remaining time;
/// the shorter path stays frozen at its start until its own horizon begins.
/// Pairs are `((t1, x1), (t2, x2))` with `t1 <= t2`.
pub fn continuity_probe(
    spec: &DiffusionSpec,
    domain: &Domain,
    grid: &TimeGrid,
    pairs: &[((f64, Vec<f64>), (f64, Vec<f64>))],
    scenarios: usize,
    seed: u64,
) -> Result<ContinuityReport> {
    if pairs.is_empty() {
        return Err(Error::Config(
            "continuity probe needs at least one pair".into(),
        ));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for ((t1, x1), (t2, x2)) in pairs {
        if t1 > t2 {
            return Err(Error::Precondition(format!(
                "continuity pair needs t1 <= t2, got ({t1}, {t2})"
            )));
        }
        if domain.contains(x1)? == Location::Outside || domain.contains(x2)? == Location::Outside {
            return Err(Error::Precondition(
                "probe points must lie in the domain closure".into(),
            ));
        }
        let common = TimeGrid::new(*t2, grid.steps)?;
        let noise = sample_paths(&common, spec.dim(), 1, scenarios, 1, seed)?;
        let start_index = ((t2 - t1) / common.dt).round() as usize;

        let first = simulate_delayed(spec, domain, &common, &noise, x1, start_index)?;
        let second = simulate_delayed(spec, domain, &common, &noise, x2, 0)?;

        let a1 = first.cumulative_forward();
        let a2 = second.cumulative_forward();
        let mf = scenarios as f64;
        let mut state_sum = 0.0;
        let mut lt_sum = 0.0;
        for s in 0..scenarios {
            let mut sup_x: f64 = 0.0;
            let mut sup_a: f64 = 0.0;
            for i in 0..=common.steps {
                let mut gap = 0.0;
                for k in 0..spec.dim() {
                    let diff = first.x[[s, i, k]] - second.x[[s, i, k]];
                    gap += diff * diff;
                }
                sup_x = sup_x.max(gap.sqrt());
                sup_a = sup_a.max((a1[[s, i]] - a2[[s, i]]).abs());
            }
            state_sum += sup_x.powi(4);
            lt_sum += sup_a.powi(4);
        }
        let state_sup4 = state_sum / mf;
        let local_time_sup4 = lt_sum / mf;
        let dx = dist(x1, x2);
        let bound = (t2 - t1).powi(2) + dx.powi(4);
        let ratio = |moment: f64| if bound > 0.0 { moment / bound } else { 0.0 };
        out.push(ContinuityPair {
            t_first: *t1,
            t_second: *t2,
            x_first: x1.clone(),
            x_second: x2.clone(),
            state_sup4,
            local_time_sup4,
            bound,
            state_ratio: ratio(state_sup4),
            local_time_ratio: ratio(local_time_sup4),
        });
    }
    Ok(ContinuityReport { pairs: out })
}

/// Simulates with the path frozen at `start` for the first `start_index` steps.
fn simulate_delayed(
    spec: &DiffusionSpec,
    domain: &Domain,
    grid: &TimeGrid,
    noise: &NoisePaths,
    start: &[f64],
    start_index: usize,
) -> Result<ReflectedPathBundle> {
    let moved = spec.with_start(start.to_vec());
    if start_index == 0 {
        return simulate_reflected(&moved, domain, grid, noise);
    }
    let active_steps = grid.steps - start_index;
    let m = noise.m_inner();
    let d = spec.dim();
    let mut x = Array3::zeros((m, grid.steps + 1, d));
    let mut da = Array2::zeros((m, grid.steps));
    let mut a_total = vec![0.0; m];
    if active_steps == 0 {
        for s in 0..m {
            for i in 0..=grid.steps {
                for k in 0..d {
                    x[[s, i, k]] = start[k];
                }
            }
        }
        return Ok(ReflectedPathBundle { x, da, a_total });
    }
    // Reuse the tail increments so both paths of a pair share step noise.
    let sub_grid = TimeGrid::new(grid.dt * active_steps as f64, active_steps)?;
    let mut tail = noise.clone();
    tail.w = noise.w.slice(ndarray::s![.., start_index.., ..]).to_owned();
    tail.b = noise.b.slice(ndarray::s![.., start_index.., ..]).to_owned();
    let active = simulate_reflected(&moved, domain, &sub_grid, &tail)?;
    for s in 0..m {
        for i in 0..=grid.steps {
            if i <= start_index {
                for k in 0..d {
                    x[[s, i, k]] = start[k];
                }
            } else {
                for k in 0..d {
                    x[[s, i, k]] = active.x[[s, i - start_index, k]];
                }
            }
            if i < grid.steps && i >= start_index {
                da[[s, i]] = active.da[[s, i - start_index]];
            }
        }
        a_total[s] = active.a_total[s];
    }
    Ok(ReflectedPathBundle { x, da, a_total })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval() -> Domain {
        Domain::interval(0.0, 1.0).unwrap()
    }

    #[test]
    fn pinned_path_accumulates_exact_local_time() {
        // Drift -1 from x = 0.25 pins at the left wall from time 0.25 on.
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let paths = sample_paths(&grid, 1, 1, 1, 1, 0).unwrap();
        let spec = DiffusionSpec::scalar(-1.0, 0.0, 0.25);
        let bundle = simulate_reflected(&spec, &unit_interval(), &grid, &paths).unwrap();
        assert_eq!(bundle.a_total[0], 0.75);
        assert_eq!(bundle.x[[0, 64, 0]], 0.0);
        assert_eq!(bundle.x[[0, 16, 0]], 0.0);
        assert!(bundle.x[[0, 8, 0]] > 0.0);
    }

    #[test]
    fn frozen_path_has_no_local_time() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let paths = sample_paths(&grid, 1, 1, 4, 1, 1).unwrap();
        let spec = DiffusionSpec::scalar(0.0, 0.0, 0.5);
        let bundle = simulate_reflected(&spec, &unit_interval(), &grid, &paths).unwrap();
        assert!(bundle.da.iter().all(|&v| v == 0.0));
        assert!(bundle.x.iter().all(|&v| v == 0.5));
        assert_eq!(bundle.a_total, vec![0.0; 4]);
    }

    #[test]
    fn reflected_brownian_path_stays_feasible_and_touches_boundary() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let paths = sample_paths(&grid, 1, 1, 4096, 1, 42).unwrap();
        let spec = DiffusionSpec::scalar(0.0, 1.0, 0.5);
        let bundle = simulate_reflected(&spec, &unit_interval(), &grid, &paths).unwrap();
        assert!(bundle.x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let pushes = bundle.da.iter().filter(|&&v| v > 0.0).count();
        assert!(pushes > 0, "no boundary pushes observed");
        // Support of the local time: a positive increment lands on the boundary.
        for s in 0..bundle.scenarios() {
            for i in 0..bundle.steps() {
                if bundle.da[[s, i]] > 0.0 {
                    let x = bundle.x[[s, i + 1, 0]];
                    assert!(x == 0.0 || x == 1.0);
                }
            }
        }
    }

    #[test]
    fn start_outside_rejected() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let paths = sample_paths(&grid, 1, 1, 1, 1, 0).unwrap();
        let spec = DiffusionSpec::scalar(0.0, 0.0, 1.5);
        assert!(simulate_reflected(&spec, &unit_interval(), &grid, &paths).is_err());
    }

    #[test]
    fn cumulative_local_time_is_monotone() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let paths = sample_paths(&grid, 1, 1, 128, 1, 9).unwrap();
        let spec = DiffusionSpec::scalar(0.0, 1.0, 0.5);
        let bundle = simulate_reflected(&spec, &unit_interval(), &grid, &paths).unwrap();
        let fwd = bundle.cumulative_forward();
        let rem = bundle.cumulative_remaining();
        for s in 0..bundle.scenarios() {
            for i in 0..bundle.steps() {
                assert!(fwd[[s, i + 1]] >= fwd[[s, i]]);
                assert!(rem[[s, i]] >= rem[[s, i + 1]]);
            }
            assert_eq!(rem[[s, bundle.steps()]], 0.0);
            assert!((fwd[[s, bundle.steps()]] - bundle.a_total[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn pinned_local_time_powers() {
        let grid = TimeGrid::new(1.0, 256).unwrap();
        let paths = sample_paths(&grid, 1, 1, 1, 1, 0).unwrap();
        let spec = DiffusionSpec::scalar(-1.0, 0.0, 0.25);
        let bundle = simulate_reflected(&spec, &unit_interval(), &grid, &paths).unwrap();
        let stats = local_time_moments(&bundle, 1.0, &[1, 2, 3]).unwrap();
        for (p, mean) in stats.power_moments {
            assert!(
                (mean - 0.75f64.powi(p as i32)).abs() <= 2.0 * grid.dt,
                "p={p}: {mean}"
            );
        }
        assert!(!stats.exp_overflowed);
    }

    #[test]
    fn zero_bundle_moments() {
        let bundle = ReflectedPathBundle::constant(&[0.5], 8, 16);
        let stats = local_time_moments(&bundle, 2.0, &[1, 2]).unwrap();
        assert_eq!(stats.exp_moment, 1.0);
        assert!(stats.power_moments.iter().all(|&(_, m)| m == 0.0));
    }

    #[test]
    fn reflected_brownian_exponential_moment_is_finite() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let paths = sample_paths(&grid, 1, 1, 4096, 1, 21).unwrap();
        let spec = DiffusionSpec::scalar(0.0, 1.0, 0.5);
        let bundle = simulate_reflected(&spec, &unit_interval(), &grid, &paths).unwrap();
        let stats = local_time_moments(&bundle, 1.0, &[1]).unwrap();
        assert!(stats.exp_moment.is_finite());
        assert!(!stats.exp_overflowed);
    }

    #[test]
    fn continuity_identical_pairs_vanish() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let spec = DiffusionSpec::scalar(0.0, 1.0, 0.5);
        let pair = ((1.0, vec![0.5]), (1.0, vec![0.5]));
        let report = continuity_probe(&spec, &unit_interval(), &grid, &[pair], 64, 3).unwrap();
        assert_eq!(report.pairs[0].state_sup4, 0.0);
        assert_eq!(report.pairs[0].local_time_sup4, 0.0);
    }

    #[test]
    fn continuity_constant_paths_closed_form() {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let spec = DiffusionSpec::scalar(0.0, 0.0, 0.5);
        let pair = ((1.0, vec![0.4]), (1.0, vec![0.5]));
        let report = continuity_probe(&spec, &unit_interval(), &grid, &[pair], 16, 3).unwrap();
        assert!((report.pairs[0].state_sup4 - 1e-4).abs() < 1e-16);
    }

    #[test]
    fn continuity_ratios_stay_bounded_for_shrinking_gaps() {
        // Common-noise coupling in a convex domain is non-expansive for
        // constant coefficients, so each ratio stays at or below one.
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let spec = DiffusionSpec::scalar(0.0, 1.0, 0.5);
        let pairs: Vec<_> = [0.2, 0.1, 0.05]
            .iter()
            .map(|gap| ((1.0, vec![0.5 - gap / 2.0]), (1.0, vec![0.5 + gap / 2.0])))
            .collect();
        let report = continuity_probe(&spec, &unit_interval(), &grid, &pairs, 512, 12).unwrap();
        for pair in &report.pairs {
            assert!(pair.state_ratio <= 2.0, "ratio {}", pair.state_ratio);
        }
    }

    #[test]
    fn two_dimensional_ball_reflection() {
        let domain = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let paths = sample_paths(&grid, 2, 1, 256, 1, 14).unwrap();
        let spec = DiffusionSpec {
            drift: Arc::new(|_| vec![0.0, 0.0]),
            diffusion: Arc::new(|_| vec![1.0, 0.0, 0.0, 1.0]),
            start: vec![0.3, -0.2],
            lipschitz: 1.0,
        };
        let bundle = simulate_reflected(&spec, &domain, &grid, &paths).unwrap();
        let mut boundary_pushes = 0usize;
        for s in 0..bundle.scenarios() {
            for i in 0..=bundle.steps() {
                let x = [bundle.x[[s, i, 0]], bundle.x[[s, i, 1]]];
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                assert!(r <= 1.0 + 1e-12, "left the closure: r = {r}");
                if i < bundle.steps() && bundle.da[[s, i]] > 0.0 {
                    boundary_pushes += 1;
                    let y = [bundle.x[[s, i + 1, 0]], bundle.x[[s, i + 1, 1]]];
                    let rr = (y[0] * y[0] + y[1] * y[1]).sqrt();
                    assert!((rr - 1.0).abs() <= 1e-12, "push off the boundary");
                }
            }
        }
        assert!(boundary_pushes > 0);
    }

    #[test]
    fn non_finite_drift_names_the_step() {
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let paths = sample_paths(&grid, 1, 1, 1, 1, 0).unwrap();
        let spec = DiffusionSpec {
            drift: Arc::new(|x| vec![if x[0] < 0.25 { f64::NAN } else { -1.0 }]),
            diffusion: Arc::new(|_| vec![0.0]),
            start: vec![0.5],
            lipschitz: 1.0,
        };
        match simulate_reflected(&spec, &unit_interval(), &grid, &paths) {
            Err(crate::error::Error::Numeric { step, .. }) => assert!(step > 0),
            other => panic!("expected a step-attributed numeric error, got {other:?}"),
        }
    }

    #[test]
    fn continuity_rejects_empty_and_disordered_input() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let spec = DiffusionSpec::scalar(0.0, 1.0, 0.5);
        assert!(continuity_probe(&spec, &unit_interval(), &grid, &[], 8, 0).is_err());
        let bad = ((1.0, vec![0.5]), (0.5, vec![0.5]));
        assert!(continuity_probe(&spec, &unit_interval(), &grid, &[bad], 8, 0).is_err());
    }
}
