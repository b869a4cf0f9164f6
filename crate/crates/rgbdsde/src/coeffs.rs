//! Problem data: driver `f`, boundary coefficient `phi`, noise coupling `g`,
//! terminal condition, obstacle, and the declared structural constants.
//!
//! Time arguments handed to coefficient functions are remaining times on the
//! solver grid (zero at the terminal condition), which is the orientation of
//! the continuous problem. Assumption checking is sampling based: declared
//! constants are trusted unless sampled quotients exceed them.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::domain::Domain;
use crate::error::{Error, Result};

/// Driver `f(t, x, y, z)`.
pub type DriverFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// Boundary coefficient `phi(t, x, y)`, paired with the local time.
pub type BoundaryFn = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;
/// Noise coupling `g(t, x, y, z)`, one component per B coordinate.
pub type NoiseCouplingFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> Vec<f64> + Send + Sync>;
/// Terminal condition evaluated at the terminal forward state.
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Declared constants of the structural assumptions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AssumptionConstants {
    /// Squared Lipschitz constant of `f` (and of the y-part of `g`).
    pub lipschitz_sq: f64,
    /// Strictly negative one-sided slope of `phi` in `y`.
    pub monotonicity: f64,
    /// Coefficient of the z-increment in the `g` bound; must lie in (0, 1).
    pub z_coupling: f64,
    /// Linear growth constant.
    pub growth: f64,
    /// Exponential weight used by energy diagnostics and the weighted norm.
    pub exp_weight: f64,
}

impl Default for AssumptionConstants {
    fn default() -> Self {
        Self {
            lipschitz_sq: 1.0,
            monotonicity: -1.0,
            z_coupling: 0.5,
            growth: 1.0,
            exp_weight: 1.0,
        }
    }
}

/// The full coefficient data of one backward problem.
#[derive(Clone)]
pub struct CoefficientSet {
    pub driver: DriverFn,
    pub boundary: BoundaryFn,
    pub noise_coupling: NoiseCouplingFn,
    pub terminal: TerminalFn,
    /// Dimension of the B driver consumed by `noise_coupling`.
    pub noise_dim: usize,
    pub constants: AssumptionConstants,
}

impl CoefficientSet {
    /// Replaces the terminal condition by `terminal + shift`.
    pub fn with_terminal_shift(&self, shift: f64) -> Self {
        let base = self.terminal.clone();
        let mut out = self.clone();
        out.terminal = Arc::new(move |x| base(x) + shift);
        out
    }

    /// Replaces the driver by `f + shift`.
    pub fn with_driver_shift(&self, shift: f64) -> Self {
        let base = self.driver.clone();
        let mut out = self.clone();
        out.driver = Arc::new(move |t, x, y, z| base(t, x, y, z) + shift);
        out
    }
}

/// Lower barrier for the solution.
#[derive(Clone)]
pub enum Obstacle {
    None,
    /// `S(t)` as a function of remaining time.
    Time(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// `h(t, x)` as a function of remaining time and forward state.
    State(Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>),
}

impl Obstacle {
    pub fn enabled(&self) -> bool {
        !matches!(self, Obstacle::None)
    }

    /// Barrier value at `(t, x)`; `None` when the obstacle is disabled.
    pub fn value(&self, t: f64, x: &[f64]) -> Option<f64> {
        match self {
            Obstacle::None => None,
            Obstacle::Time(s) => Some(s(t)),
            Obstacle::State(h) => Some(h(t, x)),
        }
    }
}

/// Builds the penalized driver `f_n = f + n (y - S)^-`.
///
/// All other fields are unchanged. Requires an enabled obstacle and `n >= 1`.
pub fn penalize(coeffs: &CoefficientSet, obstacle: &Obstacle, n: u32) -> Result<CoefficientSet> {
    if !obstacle.enabled() {
        return Err(Error::Precondition(
            "penalize needs an enabled obstacle".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Precondition(
            "penalty level must be at least 1".into(),
        ));
    }
    let base = coeffs.driver.clone();
    let barrier = obstacle.clone();
    let weight = n as f64;
    let mut out = coeffs.clone();
    out.driver = Arc::new(move |t, x, y, z| {
        let s = barrier.value(t, x).expect("obstacle enabled");
        base(t, x, y, z) + weight * (s - y).max(0.0)
    });
    Ok(out)
}

/// One sampled assumption check.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    /// Worst sampled quotient (or gap, for compatibility).
    pub observed: f64,
    /// Declared bound the quotient is held against.
    pub declared: f64,
    pub satisfied: bool,
}

/// Result of [`validate_assumptions`].
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub sample_budget: usize,
    pub seed: u64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn violations(&self) -> Vec<&AssumptionCheck> {
        self.checks.iter().filter(|c| !c.satisfied).collect()
    }

    pub fn summary(&self) -> String {
        self.violations()
            .iter()
            .map(|c| {
                format!(
                    "{} (observed {:.6e}, declared {:.6e})",
                    c.name, c.observed, c.declared
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

const REL_TOL: f64 = 1e-9;

fn exceeds(observed: f64, declared: f64) -> bool {
    observed > declared + REL_TOL * declared.abs().max(1.0)
}

fn sample_point(rng: &mut ChaCha8Rng, domain: Option<&Domain>, dim: usize) -> Vec<f64> {
    match domain {
        Some(dom) => {
            let (lo, hi) = dom.bounding_box();
            let raw: Vec<f64> = lo
                .iter()
                .zip(hi.iter())
                .map(|(&a, &b)| rng.random_range(a..=b))
                .collect();
            dom.project(&raw).expect("dimension matches").0
        }
        None => vec![0.0; dim],
    }
}

/// Samples the structural assumptions and reports empirical quotients
/// against the declared constants.
///
/// A declared `z_coupling >= 1` is a hard configuration error: the
/// contraction construction is unavailable in that regime.
pub fn validate_assumptions(
    coeffs: &CoefficientSet,
    obstacle: &Obstacle,
    domain: Option<&Domain>,
    sample_budget: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if sample_budget < 100 {
        return Err(Error::Precondition(format!(
            "sample budget must be at least 100, got {sample_budget}"
        )));
    }
    let k = coeffs.constants;
    if k.z_coupling >= 1.0 {
        return Err(Error::Config(format!(
            "declared z-coupling constant {} is not below 1",
            k.z_coupling
        )));
    }
    if !(k.z_coupling > 0.0) {
        return Err(Error::Config("z-coupling constant must be positive".into()));
    }
    if !(k.monotonicity < 0.0) {
        return Err(Error::Config(format!(
            "monotonicity constant must be strictly negative, got {}",
            k.monotonicity
        )));
    }
    if !(k.lipschitz_sq > 0.0) || !(k.exp_weight > 0.0) {
        return Err(Error::Config(
            "lipschitz and exponential-weight constants must be positive".into(),
        ));
    }

    let dim = domain.map(|d| d.dim()).unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_y = |rng: &mut ChaCha8Rng| rng.random_range(-3.0..3.0);
    let mut f_lip: f64 = f64::NEG_INFINITY;
    let mut g_y_lip: f64 = f64::NEG_INFINITY;
    let mut g_z: f64 = f64::NEG_INFINITY;
    let mut phi_mono: f64 = f64::NEG_INFINITY;
    let mut phi_varies = false;
    let mut f_growth: f64 = 0.0;
    let mut phi_growth: f64 = 0.0;
    let mut g_growth: f64 = 0.0;
    let mut compat_gap: f64 = f64::INFINITY;

    for _ in 0..sample_budget {
        let t = rng.random_range(0.0..2.0);
        let x = sample_point(&mut rng, domain, dim);
        let y1 = draw_y(&mut rng);
        let y2 = draw_y(&mut rng);
        let z1: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z2: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();

        let dy2 = (y1 - y2) * (y1 - y2);
        let dz2: f64 = z1
            .iter()
            .zip(z2.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();

        if dy2 + dz2 > 1e-12 {
            let df = (coeffs.driver)(t, &x, y1, &z1) - (coeffs.driver)(t, &x, y2, &z2);
            f_lip = f_lip.max(df * df / (dy2 + dz2));
        }
        if dy2 > 1e-12 {
            let dg: f64 = vec_gap(
                &(coeffs.noise_coupling)(t, &x, y1, &z1),
                &(coeffs.noise_coupling)(t, &x, y2, &z1),
            );
            g_y_lip = g_y_lip.max(dg / dy2);

            let dphi = (coeffs.boundary)(t, &x, y1) - (coeffs.boundary)(t, &x, y2);
            if dphi != 0.0 {
                phi_varies = true;
            }
            phi_mono = phi_mono.max((y1 - y2) * dphi / dy2);
        }
        if dz2 > 1e-12 {
            let dg: f64 = vec_gap(
                &(coeffs.noise_coupling)(t, &x, y1, &z1),
                &(coeffs.noise_coupling)(t, &x, y1, &z2),
            );
            g_z = g_z.max(dg / dz2);
        }

        let denom_xyz = 1.0 + norm(&x) + y1.abs() + norm(&z1);
        f_growth = f_growth.max((coeffs.driver)(t, &x, y1, &z1).abs() / denom_xyz);
        phi_growth =
            phi_growth.max((coeffs.boundary)(t, &x, y1).abs() / (1.0 + norm(&x) + y1.abs()));
        g_growth = g_growth.max(norm(&(coeffs.noise_coupling)(t, &x, y1, &z1)) / denom_xyz);

        if let Some(s0) = obstacle.value(0.0, &x) {
            compat_gap = compat_gap.min((coeffs.terminal)(&x) - s0);
        }
    }

    let mut checks = vec![
        AssumptionCheck {
            name: "driver_lipschitz_sq".into(),
            observed: f_lip.max(0.0),
            declared: k.lipschitz_sq,
            satisfied: !exceeds(f_lip, k.lipschitz_sq),
        },
        AssumptionCheck {
            name: "noise_coupling_y_lipschitz_sq".into(),
            observed: g_y_lip.max(0.0),
            declared: k.lipschitz_sq,
            satisfied: !exceeds(g_y_lip, k.lipschitz_sq),
        },
        AssumptionCheck {
            name: "noise_coupling_z_quotient_sq".into(),
            observed: g_z.max(0.0),
            declared: k.z_coupling,
            satisfied: !exceeds(g_z, k.z_coupling),
        },
        // A boundary coefficient that never varies in y couples to nothing:
        // its monotonicity constant is vacuous, so only a varying phi is
        // held against the declared bound.
        AssumptionCheck {
            name: "boundary_monotonicity".into(),
            observed: if phi_varies { phi_mono } else { 0.0 },
            declared: k.monotonicity,
            satisfied: !phi_varies || !exceeds(phi_mono, k.monotonicity),
        },
        AssumptionCheck {
            name: "driver_growth".into(),
            observed: f_growth,
            declared: k.growth,
            satisfied: !exceeds(f_growth, k.growth),
        },
        AssumptionCheck {
            name: "boundary_growth".into(),
            observed: phi_growth,
            declared: k.growth,
            satisfied: !exceeds(phi_growth, k.growth),
        },
        AssumptionCheck {
            name: "noise_coupling_growth".into(),
            observed: g_growth,
            declared: k.growth,
            satisfied: !exceeds(g_growth, k.growth),
        },
    ];
    if obstacle.enabled() {
        checks.push(AssumptionCheck {
            name: "obstacle_compatibility".into(),
            observed: compat_gap,
            declared: 0.0,
            satisfied: compat_gap >= -1e-12,
        });
    }

    Ok(AssumptionReport {
        checks,
        sample_budget,
        seed,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn vec_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Built-in coefficient families used by the experiment CLI and the tests.
pub mod catalog {
    use super::*;
    use crate::reflected::DiffusionSpec;

    /// `f = phi = g = 0` with a constant terminal value.
    pub fn zero_coefficients(terminal: f64) -> CoefficientSet {
        CoefficientSet {
            driver: Arc::new(|_, _, _, _| 0.0),
            boundary: Arc::new(|_, _, _| 0.0),
            noise_coupling: Arc::new(|_, _, _, _| vec![0.0]),
            terminal: Arc::new(move |_| terminal),
            noise_dim: 1,
            constants: AssumptionConstants {
                lipschitz_sq: 0.01,
                ..AssumptionConstants::default()
            },
        }
    }

    /// Parameters of the affine family.
    #[derive(Debug, Clone, Copy)]
    pub struct LinearParams {
        pub f_const: f64,
        pub f_y: f64,
        pub f_z: f64,
        pub phi_y: f64,
        pub g_const: f64,
        pub g_y: f64,
        pub terminal: f64,
    }

    impl Default for LinearParams {
        fn default() -> Self {
            Self {
                f_const: 0.0,
                f_y: 0.0,
                f_z: 0.0,
                phi_y: -1.0,
                g_const: 0.0,
                g_y: 0.0,
                terminal: 0.0,
            }
        }
    }

    /// Affine drivers `f = f_const + f_y y + f_z sum(z)`, `phi = phi_y y`,
    /// `g = [g_const + g_y y]`.
    pub fn linear_coefficients(p: LinearParams) -> CoefficientSet {
        let terminal = p.terminal;
        let lipschitz_sq = (p.f_y * p.f_y + p.f_z * p.f_z).max(p.g_y * p.g_y).max(0.01);
        let growth = (p.f_const.abs() + p.f_y.abs() + p.f_z.abs())
            .max(p.phi_y.abs())
            .max(p.g_const.abs() + p.g_y.abs())
            .max(1.0);
        CoefficientSet {
            driver: Arc::new(move |_, _, y, z| {
                p.f_const + p.f_y * y + p.f_z * z.iter().sum::<f64>()
            }),
            boundary: Arc::new(move |_, _, y| p.phi_y * y),
            noise_coupling: Arc::new(move |_, _, y, _| vec![p.g_const + p.g_y * y]),
            terminal: Arc::new(move |_| terminal),
            noise_dim: 1,
            constants: AssumptionConstants {
                lipschitz_sq,
                monotonicity: if p.phi_y < 0.0 { p.phi_y } else { -1.0 },
                z_coupling: 0.5,
                growth,
                exp_weight: 1.0,
            },
        }
    }

    /// Bounded smooth drivers built from `tanh`.
    pub fn saturating_coefficients(f_scale: f64, g_scale: f64, terminal: f64) -> CoefficientSet {
        CoefficientSet {
            driver: Arc::new(move |_, _, y, _| f_scale * y.tanh()),
            boundary: Arc::new(|_, _, y| -y),
            noise_coupling: Arc::new(move |_, _, y, _| vec![g_scale * y.tanh()]),
            terminal: Arc::new(move |_| terminal),
            noise_dim: 1,
            constants: AssumptionConstants {
                lipschitz_sq: (f_scale * f_scale).max(g_scale * g_scale).max(0.01),
                monotonicity: -1.0,
                z_coupling: 0.5,
                growth: f_scale.abs().max(g_scale.abs()).max(1.0),
                exp_weight: 1.0,
            },
        }
    }

    /// Ramp barrier `S(t) = t` in remaining time.
    pub fn ramp_obstacle() -> Obstacle {
        Obstacle::Time(Arc::new(|t| t))
    }

    /// Barrier `h(t, x) = t - offset`.
    pub fn shifted_ramp_obstacle(offset: f64) -> Obstacle {
        Obstacle::State(Arc::new(move |t, _| t - offset))
    }

    /// Constant barrier.
    pub fn constant_obstacle(level: f64) -> Obstacle {
        Obstacle::Time(Arc::new(move |_| level))
    }

    fn bowl_terminal() -> TerminalFn {
        Arc::new(|x| 1.0 + x[0] * (1.0 - x[0]) / 2.0)
    }

    fn damped_interval_diffusion(start: f64) -> (DiffusionSpec, Domain) {
        let spec = DiffusionSpec {
            drift: Arc::new(|x| vec![-0.2 * x[0]]),
            diffusion: Arc::new(|_| vec![0.5]),
            start: vec![start],
            lipschitz: 0.2,
        };
        (spec, Domain::interval(0.0, 1.0).unwrap())
    }

    /// Reflected heat-type benchmark: zero driver, absorbing boundary
    /// coefficient, bowl-shaped terminal data and a rising barrier. This is
    /// the configuration the finite-difference oracle cross-validates.
    pub fn reflected_heat_problem() -> (CoefficientSet, Obstacle, DiffusionSpec, Domain) {
        let coeffs = CoefficientSet {
            driver: Arc::new(|_, _, _, _| 0.0),
            boundary: Arc::new(|_, _, y| -y),
            noise_coupling: Arc::new(|_, _, _, _| vec![0.0]),
            terminal: bowl_terminal(),
            noise_dim: 1,
            constants: AssumptionConstants {
                lipschitz_sq: 0.01,
                monotonicity: -1.0,
                z_coupling: 0.5,
                growth: 1.5,
                exp_weight: 1.0,
            },
        };
        let (spec, domain) = damped_interval_diffusion(0.5);
        (coeffs, shifted_ramp_obstacle(0.5), spec, domain)
    }

    /// Deterministic boundary benchmark: drift -1 pins the path at the left
    /// wall, the boundary coefficient then decays the value exponentially in
    /// the accumulated local time.
    pub fn pinned_boundary_problem() -> (CoefficientSet, DiffusionSpec, Domain) {
        let coeffs = CoefficientSet {
            driver: Arc::new(|_, _, _, _| 0.0),
            boundary: Arc::new(|_, _, y| -y),
            noise_coupling: Arc::new(|_, _, _, _| vec![0.0]),
            terminal: Arc::new(|_| 1.0),
            noise_dim: 1,
            constants: AssumptionConstants {
                lipschitz_sq: 0.01,
                ..AssumptionConstants::default()
            },
        };
        let spec = DiffusionSpec {
            drift: Arc::new(|_| vec![-1.0]),
            diffusion: Arc::new(|_| vec![0.0]),
            start: vec![0.25],
            lipschitz: 1.0,
        };
        (coeffs, spec, Domain::interval(0.0, 1.0).unwrap())
    }

    /// Stochastic test problem with every term active: damped driver,
    /// absorbing boundary coefficient, y-dependent noise coupling, rising
    /// barrier and a reflected forward state.
    pub fn standard_stochastic_problem() -> (CoefficientSet, Obstacle, DiffusionSpec, Domain) {
        let coeffs = CoefficientSet {
            driver: Arc::new(|_, _, y, _| -0.5 * y),
            boundary: Arc::new(|_, _, y| -y),
            noise_coupling: Arc::new(|_, _, y, _| vec![0.1 + 0.2 * y]),
            terminal: bowl_terminal(),
            noise_dim: 1,
            constants: AssumptionConstants {
                lipschitz_sq: 0.25,
                monotonicity: -1.0,
                z_coupling: 0.5,
                growth: 1.5,
                exp_weight: 1.0,
            },
        };
        let (spec, domain) = damped_interval_diffusion(0.5);
        (coeffs, shifted_ramp_obstacle(0.5), spec, domain)
    }

    /// Fixed-point benchmark: `g` depends on `y`, so the solve iterates.
    pub fn contraction_coefficients(g_slope: f64) -> CoefficientSet {
        CoefficientSet {
            driver: Arc::new(|_, _, y, _| -0.5 * y),
            boundary: Arc::new(|_, _, y| -y),
            noise_coupling: Arc::new(move |_, _, y, _| vec![g_slope * y]),
            terminal: Arc::new(|_| 1.0),
            noise_dim: 1,
            constants: AssumptionConstants {
                lipschitz_sq: 0.25_f64.max(g_slope * g_slope),
                monotonicity: -1.0,
                z_coupling: 0.5,
                growth: 1.0,
                exp_weight: 1.0,
            },
        }
    }
}
