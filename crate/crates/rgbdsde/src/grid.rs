//! Uniform time grids and reproducible generation of the two independent
//! Brownian drivers.
//!
//! Increments are stored, not path values: the backward recursion consumes
//! increments directly and path values are prefix sums on demand. Every
//! scenario draws from its own counter-based substream keyed by
//! `(seed, scenario index, driver tag)`, so regeneration is bit-identical
//! and independent of any outer parallelism.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable that overrides the configured seed when set.
pub const SEED_ENV_VAR: &str = "RGBDSDE_SEED";

/// Returns the seed from `RGBDSDE_SEED` when set and parseable, else `fallback`.
pub fn seed_from_env(fallback: u64) -> u64 {
    std::env::var(SEED_ENV_VAR)
        .ok()
        .and_then(|v| v.parse::<u64>().ok())
        .unwrap_or(fallback)
}

/// Uniform discretization of `[0, horizon]` into `steps` intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
    pub times: Vec<f64>,
    pub dt: f64,
}

impl TimeGrid {
    /// Builds the grid; `horizon` must be positive and `steps >= 1`.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "time horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        let n = steps as f64;
        let times = (0..=steps).map(|i| horizon * (i as f64 / n)).collect();
        Ok(Self {
            horizon,
            steps,
            times,
            dt: horizon / n,
        })
    }

    /// Time remaining until the horizon at grid index `i`.
    ///
    /// The backward recursion labels coefficients with this value, so that
    /// time-dependent data keeps the orientation of the continuous problem
    /// (terminal data sits at remaining time zero).
    pub fn remaining(&self, i: usize) -> f64 {
        self.horizon - self.times[i]
    }
}

const DRIVER_TAG_W: u64 = 0;
const DRIVER_TAG_B: u64 = 1 << 32;

fn stream_rng(seed: u64, tag: u64, scenario: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag | scenario as u64);
    rng
}

/// Seeded increment arrays for the two drivers.
///
/// `w` has shape `[m_inner, steps, d]`, `b` has shape `[m_outer, steps, l]`;
/// each entry is Gaussian with mean 0 and variance `dt`. The inner W cloud is
/// shared across all outer B paths.
#[derive(Debug, Clone)]
pub struct NoisePaths {
    pub w: Array3<f64>,
    pub b: Array3<f64>,
    pub seed: u64,
    pub w_seed: u64,
    pub b_seed: u64,
    pub w_streams: Vec<u64>,
    pub b_streams: Vec<u64>,
    pub dt: f64,
}

impl NoisePaths {
    pub fn m_inner(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn m_outer(&self) -> usize {
        self.b.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn dim_w(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn dim_b(&self) -> usize {
        self.b.shape()[2]
    }
}

/// Draws both drivers from one seed. See [`sample_paths_split`].
pub fn sample_paths(
    grid: &TimeGrid,
    dim_w: usize,
    dim_b: usize,
    m_inner: usize,
    m_outer: usize,
    seed: u64,
) -> Result<NoisePaths> {
    sample_paths_split(grid, dim_w, dim_b, m_inner, m_outer, seed, seed)
}

/// Draws the W cloud from `w_seed` and the B paths from `b_seed`.
///
/// W and B use disjoint stream tags, so even with `w_seed == b_seed` the two
/// drivers never share raw output. The result is a pure function of the
/// arguments.
pub fn sample_paths_split(
    grid: &TimeGrid,
    dim_w: usize,
    dim_b: usize,
    m_inner: usize,
    m_outer: usize,
    w_seed: u64,
    b_seed: u64,
) -> Result<NoisePaths> {
    if dim_w == 0 || dim_b == 0 {
        return Err(Error::Config("driver dimensions must be at least 1".into()));
    }
    if m_inner == 0 || m_outer == 0 {
        return Err(Error::Config("scenario counts must be at least 1".into()));
    }
    let n = grid.steps;
    let scale = grid.dt.sqrt();

    let mut w = Array3::<f64>::zeros((m_inner, n, dim_w));
    let mut w_streams = Vec::with_capacity(m_inner);
    for m in 0..m_inner {
        let mut rng = stream_rng(w_seed, DRIVER_TAG_W, m);
        w_streams.push(DRIVER_TAG_W | m as u64);
        for i in 0..n {
            for k in 0..dim_w {
                w[[m, i, k]] = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    let mut b = Array3::<f64>::zeros((m_outer, n, dim_b));
    let mut b_streams = Vec::with_capacity(m_outer);
    for m in 0..m_outer {
        let mut rng = stream_rng(b_seed, DRIVER_TAG_B, m);
        b_streams.push(DRIVER_TAG_B | m as u64);
        for i in 0..n {
            for k in 0..dim_b {
                b[[m, i, k]] = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    Ok(NoisePaths {
        w,
        b,
        seed: w_seed,
        w_seed,
        b_seed,
        w_streams,
        b_streams,
        dt: grid.dt,
    })
}

/// Sample moments of one driver's increments.
#[derive(Debug, Clone, Serialize)]
pub struct DriverMoments {
    pub mean: f64,
    /// Second moment about zero (the true increment mean is zero).
    pub variance: f64,
    pub max_abs: f64,
    /// Raised when the variance leaves `[dt/2, 2 dt]`.
    pub flagged: bool,
}

/// Moment summary for both drivers of a [`NoisePaths`].
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub w: DriverMoments,
    pub b: DriverMoments,
    pub dt: f64,
}

impl MomentReport {
    pub fn any_flagged(&self) -> bool {
        self.w.flagged || self.b.flagged
    }
}

fn driver_moments(values: &Array3<f64>, dt: f64) -> DriverMoments {
    let n = values.len() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut max_abs: f64 = 0.0;
    for &v in values.iter() {
        sum += v;
        sum_sq += v * v;
        max_abs = max_abs.max(v.abs());
    }
    let variance = sum_sq / n;
    DriverMoments {
        mean: sum / n,
        variance,
        max_abs,
        flagged: !(variance >= 0.5 * dt && variance <= 2.0 * dt),
    }
}

/// Per-driver mean, variance and extreme increment, with a variance flag.
pub fn moment_report(paths: &NoisePaths) -> MomentReport {
    MomentReport {
        w: driver_moments(&paths.w, paths.dt),
        b: driver_moments(&paths.b, paths.dt),
        dt: paths.dt,
    }
}
