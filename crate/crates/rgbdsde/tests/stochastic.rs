//! Statistical integration checks that exercise full solve pipelines.

use rgbdsde::coeffs::catalog;
use rgbdsde::field::evaluate_field_split;
use rgbdsde::{
    continuity_probe, picard_solve, sample_paths, solve_penalized, solve_reflected, DiffusionSpec,
    Domain, Error, FieldProbe, Obstacle, SolverConfig, TimeGrid,
};

/// The field is a functional of the B path alone in the limit: holding the B
/// seed fixed while varying the W seed, the spread across W seeds shrinks
/// like the inner Monte Carlo error.
#[test]
fn field_spread_over_w_seeds_shrinks_with_inner_cloud_size() {
    let (coeffs, obstacle, diffusion, domain) = catalog::standard_stochastic_problem();
    let probe = FieldProbe {
        t: 0.5,
        x: vec![0.5],
    };
    let b_seed = 7;
    let w_seeds: Vec<u64> = (100..108).collect();

    let spread_at = |m_inner: usize| -> f64 {
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let config = SolverConfig::new(grid, b_seed).with_scenarios(m_inner, 1);
        let values: Vec<f64> = w_seeds
            .iter()
            .map(|&w_seed| {
                let table = evaluate_field_split(
                    &coeffs,
                    &obstacle,
                    &diffusion,
                    &domain,
                    std::slice::from_ref(&probe),
                    &config,
                    w_seed,
                    b_seed,
                )
                .unwrap();
                table.values[[0, 0]]
            })
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64)
            .sqrt()
    };

    let coarse = spread_at(256);
    let fine = spread_at(4096);
    // Sixteen times the cloud should shrink the spread by about four;
    // allow a factor-two band around that rate.
    let ratio = coarse / fine.max(1e-300);
    assert!(
        (2.0..=8.0).contains(&ratio),
        "spread ratio {ratio} outside [2, 8] (coarse {coarse:.3e}, fine {fine:.3e})"
    );
}

/// Penalized solutions approach the reflected one from below at rate 1/n.
#[test]
fn penalized_solutions_approach_the_reflected_limit() {
    let coeffs = catalog::zero_coefficients(0.0);
    let obstacle = catalog::ramp_obstacle();
    let grid = TimeGrid::new(1.0, 512).unwrap();
    let config = SolverConfig::new(grid.clone(), 3).with_scenarios(16, 1);
    let paths = sample_paths(&grid, 1, 1, 16, 1, 3).unwrap();
    let reflected = solve_reflected(&coeffs, &obstacle, None, &paths, &config).unwrap();

    let mut previous = f64::INFINITY;
    for &n in &[10u32, 100, 1000] {
        let penalized = solve_penalized(&coeffs, &obstacle, n, None, &paths, &config).unwrap();
        let sup_gap = penalized
            .y
            .iter()
            .zip(reflected.y.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        // On the ramp the gap has the closed form (1 - e^{-nt})/n <= 1/n.
        let closed_form = (1.0 - (-(n as f64)).exp()) / n as f64;
        assert!((sup_gap - closed_form).abs() <= 1e-4, "n={n}: {sup_gap}");
        assert!(sup_gap <= 1.0 / n as f64 + 1e-9);
        assert!(sup_gap < previous);
        previous = sup_gap;
    }
}

#[test]
fn picard_budget_exhaustion_carries_the_history() {
    let coeffs = catalog::contraction_coefficients(0.3);
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let mut config = SolverConfig::new(grid.clone(), 5).with_scenarios(32, 1);
    config.picard_max = 1;
    let paths = sample_paths(&grid, 1, 1, 32, 1, 5).unwrap();
    match picard_solve(&coeffs, &Obstacle::None, None, &paths, &config) {
        Err(Error::PicardNoConvergence {
            history,
            iterations,
            ..
        }) => {
            assert_eq!(iterations, 1);
            assert_eq!(history.len(), 1);
            assert!(history[0] > 0.0);
        }
        other => panic!("expected budget exhaustion, got {other:?}"),
    }
}

/// Pairs with different remaining times align on a common grid; until the
/// shorter path starts it sits frozen at its start point.
#[test]
fn continuity_probe_handles_unequal_horizons() {
    let domain = Domain::interval(0.0, 1.0).unwrap();
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let frozen = DiffusionSpec::scalar(0.0, 0.0, 0.5);
    let pair = ((0.5, vec![0.5]), (1.0, vec![0.5]));
    let report = continuity_probe(&frozen, &domain, &grid, &[pair], 8, 1).unwrap();
    // Constant coefficients from the same point: the paths coincide.
    assert_eq!(report.pairs[0].state_sup4, 0.0);
    assert_eq!(report.pairs[0].bound, 0.25);

    let drifting = DiffusionSpec::scalar(-0.5, 0.0, 0.5);
    let pair = ((0.5, vec![0.5]), (1.0, vec![0.5]));
    let report = continuity_probe(&drifting, &domain, &grid, &[pair], 8, 1).unwrap();
    // The longer path has drifted 0.25 before the shorter one starts.
    let expected = 0.25f64.powi(4);
    assert!(
        (report.pairs[0].state_sup4 - expected).abs() < 1e-12,
        "got {}",
        report.pairs[0].state_sup4
    );
}

/// Shared seeds make whole solves reproducible end to end.
#[test]
fn solves_are_bitwise_reproducible() {
    let (coeffs, obstacle, diffusion, domain) = catalog::standard_stochastic_problem();
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let config = SolverConfig::new(grid.clone(), 77).with_scenarios(128, 2);
    let paths = sample_paths(&grid, 1, 1, 128, 2, 77).unwrap();
    let refl = rgbdsde::ReflectedForward {
        diffusion: &diffusion,
        domain: &domain,
    };
    let a = solve_penalized(&coeffs, &obstacle, 10, Some(refl), &paths, &config).unwrap();
    let b = solve_penalized(&coeffs, &obstacle, 10, Some(refl), &paths, &config).unwrap();
    assert_eq!(a.y, b.y);
    assert_eq!(a.z, b.z);
    assert_eq!(a.k, b.k);
}

/// Linear equation with multiplicative noise coupling: per outer path the
/// solution has the closed form `xi exp((a - b^2/2) T + b B_T)`. This pins
/// the orientation and placement of the forward B integral in the scheme.
#[test]
fn linear_noise_coupling_matches_the_exponential_closed_form() {
    use rgbdsde::coeffs::{AssumptionConstants, CoefficientSet};
    use std::sync::Arc;

    let (a, b) = (-0.5f64, 0.3f64);
    let coeffs = CoefficientSet {
        driver: Arc::new(move |_, _, y, _| a * y),
        boundary: Arc::new(|_, _, y| -y),
        noise_coupling: Arc::new(move |_, _, y, _| vec![b * y]),
        terminal: Arc::new(|_| 1.0),
        noise_dim: 1,
        constants: AssumptionConstants {
            lipschitz_sq: 0.25,
            ..Default::default()
        },
    };
    let steps = 4096usize;
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let config = SolverConfig::new(grid.clone(), 31).with_scenarios(16, 3);
    let paths = sample_paths(&grid, 1, 1, 16, 3, 31).unwrap();
    let sol = solve_penalized(&coeffs, &Obstacle::None, 0, None, &paths, &config).unwrap();
    for (o, value) in sol.initial_value_per_outer().iter().enumerate() {
        let b_total: f64 = (0..steps).map(|i| paths.b[[o, i, 0]]).sum();
        let expected = ((a - 0.5 * b * b) + b * b_total).exp();
        let rel = (value / expected - 1.0).abs();
        assert!(
            rel <= 0.01,
            "outer {o}: {value} vs closed form {expected} (rel {rel:.4})"
        );
    }
}

/// Time-dependent drivers see remaining time: integrating f(t) = t from the
/// terminal layer gives t^2/2 at remaining time t.
#[test]
fn driver_time_labels_are_remaining_times() {
    use rgbdsde::coeffs::{catalog, CoefficientSet};
    use std::sync::Arc;

    let mut coeffs = CoefficientSet {
        driver: Arc::new(|t, _, _, _| t),
        ..catalog::zero_coefficients(0.0)
    };
    coeffs.constants.growth = 2.0;
    let grid = TimeGrid::new(1.0, 512).unwrap();
    let config = SolverConfig::new(grid.clone(), 2).with_scenarios(16, 1);
    let paths = sample_paths(&grid, 1, 1, 16, 1, 2).unwrap();
    let sol = solve_penalized(&coeffs, &Obstacle::None, 0, None, &paths, &config).unwrap();
    for &(index, remaining) in &[(0usize, 1.0f64), (256, 0.5), (384, 0.25)] {
        let expected = remaining * remaining / 2.0;
        let got = sol.y[[0, 0, index]];
        assert!(
            (got - expected).abs() <= grid.dt,
            "at remaining {remaining}: {got} vs {expected}"
        );
    }
}
