//! Plain CSV renderings of solver outputs.
//!
//! Floats use the shortest round-trip representation, so identical inputs
//! produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::fd::FdSolution;
use crate::field::FieldTable;
use crate::reflected::ReflectedPathBundle;
use crate::solver::BdsdeSolution;

/// Solution rows `outer,inner,step,y,z...,k,da`; step-indexed quantities are
/// zero at the terminal index.
pub fn solution_csv(sol: &BdsdeSolution) -> String {
    let d = sol.z.shape()[3];
    let mut out = String::new();
    out.push_str("outer,inner,step,y");
    for c in 0..d {
        let _ = write!(out, ",z{c}");
    }
    out.push_str(",k,da\n");
    for o in 0..sol.m_outer() {
        for m in 0..sol.m_inner() {
            for i in 0..=sol.steps() {
                let _ = write!(out, "{o},{m},{i},{}", sol.y[[o, m, i]]);
                for c in 0..d {
                    let z = if i < sol.steps() {
                        sol.z[[o, m, i, c]]
                    } else {
                        0.0
                    };
                    let _ = write!(out, ",{z}");
                }
                let da = if i < sol.steps() {
                    sol.forward.da[[m, i]]
                } else {
                    0.0
                };
                let _ = writeln!(out, ",{},{da}", sol.k[[o, m, i]]);
            }
        }
    }
    out
}

/// Forward path rows `scenario,step,x...,da`.
pub fn bundle_csv(bundle: &ReflectedPathBundle) -> String {
    let d = bundle.dim();
    let mut out = String::new();
    out.push_str("scenario,step");
    for c in 0..d {
        let _ = write!(out, ",x{c}");
    }
    out.push_str(",da\n");
    for m in 0..bundle.scenarios() {
        for i in 0..=bundle.steps() {
            let _ = write!(out, "{m},{i}");
            for c in 0..d {
                let _ = write!(out, ",{}", bundle.x[[m, i, c]]);
            }
            let da = if i < bundle.steps() {
                bundle.da[[m, i]]
            } else {
                0.0
            };
            let _ = writeln!(out, ",{da}");
        }
    }
    out
}

/// Field rows `t,x...,outer,value`.
pub fn field_csv(table: &FieldTable) -> String {
    let d = table.probes.first().map(|p| p.x.len()).unwrap_or(0);
    let mut out = String::new();
    out.push('t');
    for c in 0..d {
        let _ = write!(out, ",x{c}");
    }
    out.push_str(",outer,value\n");
    for (p, probe) in table.probes.iter().enumerate() {
        for o in 0..table.m_outer() {
            let _ = write!(out, "{}", probe.t);
            for v in &probe.x {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{o},{}", table.values[[o, p]]);
        }
    }
    out
}

/// Aggregated field rows `t,x...,mean,sd`.
pub fn field_aggregate_csv(table: &FieldTable) -> String {
    let d = table.probes.first().map(|p| p.x.len()).unwrap_or(0);
    let mut out = String::new();
    out.push('t');
    for c in 0..d {
        let _ = write!(out, ",x{c}");
    }
    out.push_str(",mean,sd\n");
    for (probe, agg) in table.probes.iter().zip(table.aggregate.iter()) {
        let _ = write!(out, "{}", probe.t);
        for v in &probe.x {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{}", agg.mean, agg.sd);
    }
    out
}

/// Oracle rows `t,x,u`.
pub fn fd_csv(fd: &FdSolution) -> String {
    let mut out = String::from("t,x,u\n");
    for k in 0..=fd.mesh.time_steps {
        for j in 0..=fd.mesh.space_steps {
            let _ = writeln!(
                out,
                "{},{},{}",
                fd.mesh.time(k),
                fd.mesh.node(j),
                fd.u[[k, j]]
            );
        }
    }
    out
}

pub fn write_csv(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}
