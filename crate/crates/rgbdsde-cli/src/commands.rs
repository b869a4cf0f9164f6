//! Experiment orchestration: one function per subcommand, each producing a
//! manifest plus its output files under the run directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rgbdsde::export;
use rgbdsde::{
    compare_mc_fd, comparison_check, convergence_check, energy_bound_check, evaluate_field,
    penalization_monotone_check, picard_solve, sample_paths, solve_obstacle_pde_1d,
    solve_penalized, solve_reflected, BdsdeSolution, Domain, Error, FdMesh, PropertyReport,
    ReflectedForward, Result,
};

use crate::config::Experiment;
use crate::manifest::RunManifest;

fn record_output(manifest: &mut RunManifest, dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    export::write_csv(&path, contents)?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn write_json<T: serde::Serialize>(
    manifest: &mut RunManifest,
    dir: &Path,
    name: &str,
    value: &T,
) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
    record_output(manifest, dir, name, &(body + "\n"))
}

fn reflection<'a>(exp: &'a Experiment) -> Option<ReflectedForward<'a>> {
    match (&exp.diffusion, &exp.domain) {
        (Some(diffusion), Some(domain)) => Some(ReflectedForward { diffusion, domain }),
        _ => None,
    }
}

fn run_backward_solve(exp: &Experiment) -> Result<(BdsdeSolution, Option<Vec<f64>>)> {
    let dim_w = exp.diffusion.as_ref().map(|d| d.dim()).unwrap_or(1);
    let paths = sample_paths(
        &exp.solver.grid,
        dim_w,
        exp.coefficients.noise_dim,
        exp.solver.m_inner,
        exp.solver.m_outer,
        exp.seed,
    )?;
    let refl = reflection(exp);
    if exp.use_picard {
        let (sol, history) =
            picard_solve(&exp.coefficients, &exp.obstacle, refl, &paths, &exp.solver)?;
        return Ok((sol, Some(history)));
    }
    let sol = match exp.penalty_n {
        Some(n) => solve_penalized(
            &exp.coefficients,
            &exp.obstacle,
            n,
            refl,
            &paths,
            &exp.solver,
        )?,
        None => solve_reflected(&exp.coefficients, &exp.obstacle, refl, &paths, &exp.solver)?,
    };
    Ok((sol, None))
}

/// `solve`: one backward solve, solution CSV plus diagnostics.
pub fn run_solve(exp: &Experiment, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    let started = Instant::now();
    let (sol, picard_history) = run_backward_solve(exp)?;
    manifest
        .timings
        .insert("solve_seconds".into(), started.elapsed().as_secs_f64());

    record_output(manifest, dir, "solution.csv", &export::solution_csv(&sol))?;
    if exp.diffusion.is_some() {
        record_output(
            manifest,
            dir,
            "forward.csv",
            &export::bundle_csv(&sol.forward),
        )?;
    }
    write_json(manifest, dir, "diagnostics.json", &sol.diagnostics)?;

    manifest
        .metrics
        .insert("initial_value".into(), sol.initial_value());
    manifest
        .metrics
        .insert("energy_total".into(), sol.diagnostics.energy.total());
    if let Some(r) = sol.diagnostics.skorokhod_residual {
        manifest.metrics.insert("skorokhod_residual".into(), r);
    }
    if let Some(g) = sol.diagnostics.min_gap {
        manifest.metrics.insert("min_gap".into(), g);
    }
    if let Some(history) = picard_history {
        manifest
            .metrics
            .insert("picard_iterations".into(), history.len() as f64);
        if let Some(last) = history.last() {
            manifest.metrics.insert("picard_last_delta".into(), *last);
        }
    }
    Ok(())
}

/// `field`: evaluate the random field on the configured probes.
pub fn run_field(exp: &Experiment, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    if !exp.field_problem {
        return Err(Error::Config(
            "field evaluation needs a field problem".into(),
        ));
    }
    let (diffusion, domain) = match (&exp.diffusion, &exp.domain) {
        (Some(d), Some(dom)) => (d, dom),
        _ => {
            return Err(Error::Config(
                "field evaluation needs a domain and diffusion".into(),
            ))
        }
    };
    if exp.probes.is_empty() {
        return Err(Error::Config("field evaluation needs probes".into()));
    }
    let started = Instant::now();
    let mut table = evaluate_field(
        &exp.coefficients,
        &exp.obstacle,
        diffusion,
        domain,
        &exp.probes,
        &exp.solver,
    )?;
    table.meta = exp.digest.clone();
    manifest
        .timings
        .insert("field_seconds".into(), started.elapsed().as_secs_f64());

    record_output(manifest, dir, "field.csv", &export::field_csv(&table))?;
    record_output(
        manifest,
        dir,
        "field_aggregate.csv",
        &export::field_aggregate_csv(&table),
    )?;
    for (i, agg) in table.aggregate.iter().enumerate() {
        manifest.metrics.insert(format!("probe{i}_mean"), agg.mean);
        manifest.metrics.insert(format!("probe{i}_sd"), agg.sd);
    }
    Ok(())
}

fn interval_bounds(domain: &Domain) -> Result<(f64, f64)> {
    match domain {
        Domain::Interval { lo, hi } => Ok((*lo, *hi)),
        _ => Err(Error::Config("the oracle needs an interval domain".into())),
    }
}

/// `oracle`: finite-difference solve, optionally compared against the field.
pub fn run_oracle(exp: &Experiment, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    if !exp.field_problem {
        return Err(Error::Config("the oracle needs a field problem".into()));
    }
    let (diffusion, domain) = match (&exp.diffusion, &exp.domain) {
        (Some(d), Some(dom)) => (d, dom),
        _ => {
            return Err(Error::Config(
                "the oracle needs a domain and diffusion".into(),
            ))
        }
    };
    let (lo, hi) = interval_bounds(domain)?;
    let mesh = FdMesh::new(
        lo,
        hi,
        exp.solver.grid.horizon,
        exp.oracle.space_steps,
        exp.oracle.time_steps,
    )?;
    let started = Instant::now();
    let fd = solve_obstacle_pde_1d(&exp.coefficients, &exp.obstacle, diffusion, &mesh)?;
    manifest
        .timings
        .insert("oracle_seconds".into(), started.elapsed().as_secs_f64());
    record_output(manifest, dir, "fd.csv", &export::fd_csv(&fd))?;
    manifest.metrics.insert("fd_range".into(), fd.range());
    manifest.metrics.insert(
        "peclet_warning".into(),
        if fd.peclet_warning { 1.0 } else { 0.0 },
    );

    if exp.oracle.compare && !exp.probes.is_empty() {
        let started = Instant::now();
        let mut table = evaluate_field(
            &exp.coefficients,
            &exp.obstacle,
            diffusion,
            domain,
            &exp.probes,
            &exp.solver,
        )?;
        table.meta = exp.digest.clone();
        manifest
            .timings
            .insert("field_seconds".into(), started.elapsed().as_secs_f64());
        record_output(manifest, dir, "field.csv", &export::field_csv(&table))?;
        record_output(
            manifest,
            dir,
            "field_aggregate.csv",
            &export::field_aggregate_csv(&table),
        )?;
        let report = compare_mc_fd(&table, &fd)?;
        write_json(manifest, dir, "comparison.json", &report)?;
        manifest
            .metrics
            .insert("max_rel_error".into(), report.max_rel_error);
        manifest
            .metrics
            .insert("max_abs_error".into(), report.max_abs_error);
        manifest.pass &= report.max_rel_error <= exp.oracle.tolerance;
    }
    Ok(())
}

/// `properties`: the selected theorem checks; failing checks fail the run.
pub fn run_properties(exp: &Experiment, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    let refl = reflection(exp);
    let mut reports: Vec<PropertyReport> = Vec::new();
    for check in &exp.properties.checks {
        let started = Instant::now();
        let report = match check.as_str() {
            "comparison" => {
                let dominating = exp
                    .coefficients
                    .with_terminal_shift(exp.properties.comparison_shift);
                comparison_check(&exp.coefficients, &dominating, refl, &exp.solver)?
            }
            "monotonicity" => penalization_monotone_check(
                &exp.coefficients,
                &exp.obstacle,
                refl,
                &exp.properties.penalty_levels,
                &exp.solver,
            )?,
            "convergence" => convergence_check(
                &exp.coefficients,
                &exp.obstacle,
                refl,
                &exp.properties.penalty_levels,
                exp.properties.slope_threshold,
                &exp.solver,
            )?,
            "energy" => energy_bound_check(
                &exp.coefficients,
                &exp.obstacle,
                refl,
                &exp.properties.penalty_levels,
                exp.properties.mu,
                &exp.solver,
            )?,
            other => return Err(Error::Config(format!("unknown property check '{other}'"))),
        };
        manifest
            .timings
            .insert(format!("{check}_seconds"), started.elapsed().as_secs_f64());
        manifest
            .metrics
            .insert(format!("{}_margin", report.name), report.worst_margin);
        manifest.pass &= report.pass;
        reports.push(report);
    }
    write_json(manifest, dir, "properties.json", &reports)?;
    Ok(())
}

/// Runs one subcommand end to end, capturing failures into the manifest.
pub fn run_experiment(
    command: &str,
    exp: &Experiment,
    out_dir: Option<&str>,
) -> Result<(RunManifest, PathBuf)> {
    let dir = PathBuf::from(out_dir.unwrap_or(&exp.output));
    std::fs::create_dir_all(&dir)?;
    let echo = serde_json::to_value(&exp.echo)
        .map_err(|e| Error::Config(format!("config echo failed: {e}")))?;
    let mut manifest = RunManifest::new(command, &exp.digest, exp.seed, echo);
    let total = Instant::now();
    let outcome = match command {
        "solve" => run_solve(exp, &dir, &mut manifest),
        "field" => run_field(exp, &dir, &mut manifest),
        "oracle" => run_oracle(exp, &dir, &mut manifest),
        "properties" => run_properties(exp, &dir, &mut manifest),
        other => Err(Error::Config(format!("unknown command '{other}'"))),
    };
    manifest
        .timings
        .insert("total_seconds".into(), total.elapsed().as_secs_f64());
    if let Err(e) = outcome {
        manifest.pass = false;
        manifest.error = Some(e.to_string());
    }
    let manifest_path = dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    Ok((manifest, manifest_path))
}
