//! Evaluation of the solution random field `u(t, x)` on probe points.
//!
//! A probe's `t` is remaining time: the forward diffusion is re-simulated
//! from `x` over a grid of length `t` and the backward solve is read off at
//! grid index 0. This is the one place the reversed orientation of the
//! continuous problem meets the internal forward simulation. The field is a
//! functional of the B path, so each outer path yields one value per probe;
//! the inner W cloud only carries the conditional expectations.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::{CoefficientSet, Obstacle};
use crate::domain::{Domain, Location};
use crate::error::{Error, Result};
use crate::grid::{sample_paths_split, TimeGrid};
use crate::reflected::DiffusionSpec;
use crate::solver::{solve_reflected, ReflectedForward, SolverConfig};

/// One evaluation point `(remaining time, state)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldProbe {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Mean and spread of one probe across outer paths.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeAggregate {
    pub mean: f64,
    pub sd: f64,
}

/// Field values per outer path and probe.
#[derive(Debug, Clone, Serialize)]
pub struct FieldTable {
    pub probes: Vec<FieldProbe>,
    /// Shape `[m_outer, probes]`.
    pub values: Array2<f64>,
    pub aggregate: Vec<ProbeAggregate>,
    /// Caller-supplied configuration fingerprint.
    pub meta: String,
    pub seed: u64,
}

impl FieldTable {
    pub fn m_outer(&self) -> usize {
        self.values.shape()[0]
    }
}

fn check_probe(probe: &FieldProbe, domain: &Domain, horizon: f64) -> Result<()> {
    if !(0.0..=horizon).contains(&probe.t) {
        return Err(Error::Config(format!(
            "probe time {} outside [0, {horizon}]",
            probe.t
        )));
    }
    if domain.contains(&probe.x)? == Location::Outside {
        return Err(Error::Config(format!(
            "probe point {:?} outside the domain closure",
            probe.x
        )));
    }
    Ok(())
}

/// Refuses field setups whose barrier exceeds the terminal data at remaining
/// time zero anywhere on a domain sample.
fn check_compatibility(
    coeffs: &CoefficientSet,
    obstacle: &Obstacle,
    domain: &Domain,
) -> Result<()> {
    if !obstacle.enabled() {
        return Ok(());
    }
    let (lo, hi) = domain.bounding_box();
    let samples = 101usize;
    for i in 0..samples {
        let frac = i as f64 / (samples - 1) as f64;
        let raw: Vec<f64> = lo
            .iter()
            .zip(hi.iter())
            .map(|(&a, &b)| a + frac * (b - a))
            .collect();
        let x = domain.project(&raw)?.0;
        let barrier = obstacle.value(0.0, &x).expect("obstacle enabled");
        let terminal = (coeffs.terminal)(&x);
        if terminal < barrier - 1e-12 {
            return Err(Error::Precondition(format!(
                "barrier {barrier} exceeds terminal data {terminal} at {x:?}"
            )));
        }
    }
    Ok(())
}

/// Evaluates the field, drawing W from `w_seed` and B from `b_seed`.
pub fn evaluate_field_split(
    coeffs: &CoefficientSet,
    obstacle: &Obstacle,
    diffusion: &DiffusionSpec,
    domain: &Domain,
    probes: &[FieldProbe],
    config: &SolverConfig,
    w_seed: u64,
    b_seed: u64,
) -> Result<FieldTable> {
    if probes.is_empty() {
        return Err(Error::Config(
            "field evaluation needs at least one probe".into(),
        ));
    }
    for probe in probes {
        check_probe(probe, domain, config.grid.horizon)?;
    }
    check_compatibility(coeffs, obstacle, domain)?;

    let per_probe: Vec<Result<Vec<f64>>> = probes
        .par_iter()
        .map(|probe| {
            if probe.t <= f64::EPSILON {
                // Initial layer: the field equals the terminal data exactly.
                let v = (coeffs.terminal)(&probe.x);
                return Ok(vec![v; config.m_outer]);
            }
            let grid = TimeGrid::new(probe.t, config.grid.steps)?;
            let paths = sample_paths_split(
                &grid,
                diffusion.dim(),
                coeffs.noise_dim,
                config.m_inner,
                config.m_outer,
                w_seed,
                b_seed,
            )?;
            let moved = diffusion.with_start(probe.x.clone());
            let mut probe_config = config.clone();
            probe_config.grid = grid;
            let reflection = ReflectedForward {
                diffusion: &moved,
                domain,
            };
            let sol = solve_reflected(coeffs, obstacle, Some(reflection), &paths, &probe_config)?;
            Ok(sol.initial_value_per_outer())
        })
        .collect();

    let m_outer = config.m_outer;
    let mut values = Array2::zeros((m_outer, probes.len()));
    for (p, res) in per_probe.into_iter().enumerate() {
        let column = res?;
        for (o, v) in column.into_iter().enumerate() {
            values[[o, p]] = v;
        }
    }
    let aggregate = (0..probes.len())
        .map(|p| {
            let column: Vec<f64> = (0..m_outer).map(|o| values[[o, p]]).collect();
            let mean = column.iter().sum::<f64>() / m_outer as f64;
            let sd = if m_outer > 1 {
                (column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m_outer - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            ProbeAggregate { mean, sd }
        })
        .collect();

    Ok(FieldTable {
        probes: probes.to_vec(),
        values,
        aggregate,
        meta: String::new(),
        seed: config.seed,
    })
}

/// Evaluates `u(t, x)` at every probe with both drivers drawn from the
/// configured seed.
pub fn evaluate_field(
    coeffs: &CoefficientSet,
    obstacle: &Obstacle,
    diffusion: &DiffusionSpec,
    domain: &Domain,
    probes: &[FieldProbe],
    config: &SolverConfig,
) -> Result<FieldTable> {
    evaluate_field_split(
        coeffs,
        obstacle,
        diffusion,
        domain,
        probes,
        config,
        config.seed,
        config.seed,
    )
}

/// One compared probe pair of a [`FieldContinuityReport`].
#[derive(Debug, Clone, Serialize)]
pub struct FieldContinuityPair {
    pub first: FieldProbe,
    pub second: FieldProbe,
    /// Mean over outer paths of `|u(first) - u(second)|` under common noise.
    pub mean_gap: f64,
    /// `mean_gap / (|dt| + |dx|)`; zero for coincident probes.
    pub modulus: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldContinuityReport {
    pub pairs: Vec<FieldContinuityPair>,
}

/// Common-noise field differences over probe pairs.
pub fn field_continuity_report(
    coeffs: &CoefficientSet,
    obstacle: &Obstacle,
    diffusion: &DiffusionSpec,
    domain: &Domain,
    pairs: &[(FieldProbe, FieldProbe)],
    config: &SolverConfig,
) -> Result<FieldContinuityReport> {
    if pairs.is_empty() {
        return Err(Error::Config(
            "continuity report needs at least one pair".into(),
        ));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (first, second) in pairs {
        let probes = vec![first.clone(), second.clone()];
        let table = evaluate_field(coeffs, obstacle, diffusion, domain, &probes, config)?;
        let mut gap_acc = 0.0;
        for o in 0..table.m_outer() {
            gap_acc += (table.values[[o, 0]] - table.values[[o, 1]]).abs();
        }
        let mean_gap = gap_acc / table.m_outer() as f64;
        let dist = (first.t - second.t).abs()
            + first
                .x
                .iter()
                .zip(second.x.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        let modulus = if dist > 0.0 { mean_gap / dist } else { 0.0 };
        out.push(FieldContinuityPair {
            first: first.clone(),
            second: second.clone(),
            mean_gap,
            modulus,
        });
    }
    Ok(FieldContinuityReport { pairs: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::catalog;
    use std::sync::Arc;

    fn small_config(steps: usize, m_inner: usize, seed: u64) -> SolverConfig {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        SolverConfig::new(grid, seed).with_scenarios(m_inner, 1)
    }

    #[test]
    fn constant_terminal_field_is_flat() {
        let coeffs = catalog::zero_coefficients(2.5);
        let domain = Domain::interval(0.0, 1.0).unwrap();
        let diffusion = DiffusionSpec::scalar(0.0, 0.5, 0.5);
        let probes = vec![
            FieldProbe {
                t: 0.25,
                x: vec![0.5],
            },
            FieldProbe {
                t: 1.0,
                x: vec![0.25],
            },
            FieldProbe {
                t: 0.0,
                x: vec![0.75],
            },
        ];
        let config = small_config(32, 64, 42);
        let table = evaluate_field(
            &coeffs,
            &Obstacle::None,
            &diffusion,
            &domain,
            &probes,
            &config,
        )
        .unwrap();
        for agg in &table.aggregate {
            assert!((agg.mean - 2.5).abs() < 1e-10, "got {}", agg.mean);
        }
    }

    #[test]
    fn pinned_probe_matches_exponential_decay() {
        let (coeffs, diffusion, domain) = catalog::pinned_boundary_problem();
        let config = small_config(64, 64, 7);
        let probes = vec![FieldProbe {
            t: 1.0,
            x: vec![0.25],
        }];
        let table = evaluate_field(
            &coeffs,
            &Obstacle::None,
            &diffusion,
            &domain,
            &probes,
            &config,
        )
        .unwrap();
        let expected = (-0.75f64).exp();
        let dt = 1.0 / 64.0;
        assert!(
            (table.aggregate[0].mean - expected).abs() <= 2.0 * dt,
            "got {}, expected {expected}",
            table.aggregate[0].mean
        );
    }

    #[test]
    fn initial_layer_equals_terminal_data_exactly() {
        let (coeffs, obstacle, diffusion, domain) = catalog::reflected_heat_problem();
        let config = small_config(16, 32, 3);
        let xs = [0.0, 0.3, 0.5, 0.9];
        let probes: Vec<_> = xs
            .iter()
            .map(|&x| FieldProbe { t: 0.0, x: vec![x] })
            .collect();
        let table =
            evaluate_field(&coeffs, &obstacle, &diffusion, &domain, &probes, &config).unwrap();
        for (probe, agg) in probes.iter().zip(table.aggregate.iter()) {
            let l = (coeffs.terminal)(&probe.x);
            assert_eq!(agg.mean, l);
        }
    }

    #[test]
    fn field_dominates_the_barrier() {
        let (coeffs, obstacle, diffusion, domain) = catalog::reflected_heat_problem();
        let config = small_config(32, 128, 5);
        let probes = vec![
            FieldProbe {
                t: 1.0,
                x: vec![0.5],
            },
            FieldProbe {
                t: 0.75,
                x: vec![0.1],
            },
        ];
        let table =
            evaluate_field(&coeffs, &obstacle, &diffusion, &domain, &probes, &config).unwrap();
        for (probe, agg) in probes.iter().zip(table.aggregate.iter()) {
            let barrier = obstacle.value(probe.t, &probe.x).unwrap();
            assert!(agg.mean >= barrier, "{} below {barrier}", agg.mean);
        }
    }

    #[test]
    fn incompatible_barrier_is_refused() {
        let (coeffs, _, diffusion, domain) = catalog::reflected_heat_problem();
        let obstacle = catalog::constant_obstacle(10.0);
        let config = small_config(16, 32, 5);
        let probes = vec![FieldProbe {
            t: 0.5,
            x: vec![0.5],
        }];
        assert!(matches!(
            evaluate_field(&coeffs, &obstacle, &diffusion, &domain, &probes, &config),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn probe_outside_domain_is_rejected() {
        let coeffs = catalog::zero_coefficients(1.0);
        let domain = Domain::interval(0.0, 1.0).unwrap();
        let diffusion = DiffusionSpec::scalar(0.0, 0.5, 0.5);
        let config = small_config(16, 32, 5);
        let probes = vec![FieldProbe {
            t: 0.5,
            x: vec![1.5],
        }];
        assert!(evaluate_field(
            &coeffs,
            &Obstacle::None,
            &diffusion,
            &domain,
            &probes,
            &config
        )
        .is_err());
        let probes = vec![FieldProbe {
            t: 1.5,
            x: vec![0.5],
        }];
        assert!(evaluate_field(
            &coeffs,
            &Obstacle::None,
            &diffusion,
            &domain,
            &probes,
            &config
        )
        .is_err());
    }

    #[test]
    fn identical_probes_have_zero_gap() {
        let (coeffs, obstacle, diffusion, domain) = catalog::reflected_heat_problem();
        let config = small_config(16, 64, 9);
        let p = FieldProbe {
            t: 0.5,
            x: vec![0.5],
        };
        let report = field_continuity_report(
            &coeffs,
            &obstacle,
            &diffusion,
            &domain,
            &[(p.clone(), p)],
            &config,
        )
        .unwrap();
        assert_eq!(report.pairs[0].mean_gap, 0.0);
        assert_eq!(report.pairs[0].modulus, 0.0);
    }

    #[test]
    fn deterministic_field_differences_match_closed_form() {
        // sigma = 0, drift -1, phi = -y, l = 1: u(t, x) = exp(-(t - x)^+).
        let (coeffs, diffusion, domain) = catalog::pinned_boundary_problem();
        let config = small_config(64, 64, 2);
        let pairs = vec![(
            FieldProbe {
                t: 1.0,
                x: vec![0.25],
            },
            FieldProbe {
                t: 1.0,
                x: vec![0.5],
            },
        )];
        let report = field_continuity_report(
            &coeffs,
            &Obstacle::None,
            &diffusion,
            &domain,
            &pairs,
            &config,
        )
        .unwrap();
        let expected = ((-0.75f64).exp() - (-0.5f64).exp()).abs();
        let dt = 1.0 / 64.0;
        assert!(
            (report.pairs[0].mean_gap - expected).abs() <= 4.0 * dt,
            "gap {} vs {expected}",
            report.pairs[0].mean_gap
        );
    }

    #[test]
    fn modulus_does_not_grow_as_probes_approach() {
        let coeffs = {
            let mut c = catalog::zero_coefficients(0.0);
            c.terminal = Arc::new(|x| x[0]);
            c
        };
        let domain = Domain::interval(0.0, 1.0).unwrap();
        let diffusion = DiffusionSpec::scalar(0.0, 0.5, 0.5);
        let config = small_config(32, 512, 6);
        let gaps = [0.2, 0.1];
        let pairs: Vec<_> = gaps
            .iter()
            .map(|g| {
                (
                    FieldProbe {
                        t: 0.5,
                        x: vec![0.5 - g / 2.0],
                    },
                    FieldProbe {
                        t: 0.5,
                        x: vec![0.5 + g / 2.0],
                    },
                )
            })
            .collect();
        let report = field_continuity_report(
            &coeffs,
            &Obstacle::None,
            &diffusion,
            &domain,
            &pairs,
            &config,
        )
        .unwrap();
        assert!(
            report.pairs[1].modulus <= report.pairs[0].modulus * 1.5,
            "moduli {} -> {}",
            report.pairs[0].modulus,
            report.pairs[1].modulus
        );
    }
}
