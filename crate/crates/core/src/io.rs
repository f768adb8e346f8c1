//! Post-processing of solved fields, legacy-VTK output and the experiment driver.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};

use crate::config::{Alpha, RunConfig};
use crate::energy::Assembler;
use crate::error::{Error, Result};
use crate::geometry::{generate_mesh, shape_metrics, write_mesh_text, Locator, Point};
use crate::quadrature::cell_rule;
use crate::solver::{continuation_solve, write_history_csv, SolveResult};
use crate::space::{local_grad, Field, Space};
use crate::tensor::det;

/// Density is reported as `1/J`, clamped to this range.
pub const DENSITY_MAX: f64 = 50.0;

pub fn density(j: f64) -> f64 {
    if j <= 0.0 {
        DENSITY_MAX
    } else {
        (1.0 / j).clamp(0.0, DENSITY_MAX)
    }
}

/// Mean of `det(I + ∇u)` over each element.
pub fn element_mean_j(u: &Field) -> Vec<f64> {
    let s = u.space();
    let rule = cell_rule(2 * (s.degree() - 1)).expect("degree within the quadrature limit");
    let tabs = s.tabulate_cell(&rule);
    let mut loc = vec![[0.0; 2]; s.n_local()];
    (0..s.n_elements())
        .map(|k| {
            s.gather(k, u.coeffs(), &mut loc);
            let geo = s.geometry(k);
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (tab, w) in tabs.iter().zip(&rule.weights) {
                let g = local_grad(&loc, tab, geo);
                acc += w * det(&[[1.0 + g[0][0], g[0][1]], [g[1][0], 1.0 + g[1][1]]]);
                wsum += w;
            }
            acc / wsum
        })
        .collect()
}

/// `det(I + ∇u)` at reference points; `None` outside the mesh.
pub fn j_at_points(u: &Field, points: &[Point]) -> Vec<Option<f64>> {
    let mesh = u.space().mesh();
    let loc = Locator::new(mesh);
    points
        .iter()
        .map(|&p| {
            loc.locate(mesh, p).map(|(k, lam)| {
                let g = u.grad_at(k, lam);
                det(&[[1.0 + g[0][0], g[0][1]], [g[1][0], 1.0 + g[1][1]]])
            })
        })
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Number of maximal runs of `flags` that are true, read cyclically.
pub fn circular_runs(flags: &[bool]) -> usize {
    let n = flags.len();
    if flags.iter().all(|&f| f) {
        return usize::from(n > 0);
    }
    (0..n).filter(|&i| flags[i] && !flags[(i + n - 1) % n]).count()
}

/// Legacy-VTK ASCII unstructured grid on the mesh vertices in the deformed
/// configuration, with the vertex displacement and per-element `J` and density.
pub fn write_vtk<W: Write>(u: &Field, mut w: W) -> Result<()> {
    let s = u.space();
    let mesh = s.mesh();
    let nv = mesh.n_vertices();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "tetherfem deformed state")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    // Vertices are the first nodes of the space.
    for (v, p) in mesh.vertices().iter().enumerate() {
        let d = u.node_value(v);
        writeln!(w, "{:.16e} {:.16e} {:.16e}", p[0] + d[0], p[1] + d[1], 0.0)?;
    }
    let nt = mesh.n_triangles();
    writeln!(w, "CELLS {nt} {}", 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    writeln!(w, "POINT_DATA {nv}")?;
    writeln!(w, "VECTORS displacement double")?;
    for v in 0..nv {
        let d = u.node_value(v);
        writeln!(w, "{:.16e} {:.16e} {:.16e}", d[0], d[1], 0.0)?;
    }
    let j = element_mean_j(u);
    writeln!(w, "CELL_DATA {nt}")?;
    writeln!(w, "SCALARS J double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for x in &j {
        writeln!(w, "{x:.16e}")?;
    }
    writeln!(w, "SCALARS density double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for x in &j {
        writeln!(w, "{:.16e}", density(*x))?;
    }
    Ok(())
}

pub fn write_vtk_file(u: &Field, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_vtk(u, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Keys every manifest carries at the top level.
pub const MANIFEST_KEYS: &[&str] = &[
    "config",
    "alpha_used",
    "estimate_cr",
    "stable",
    "mesh",
    "n_dofs",
    "threads",
    "stages",
    "timings",
    "version",
];

/// Keys of each stage record in the manifest.
pub const STAGE_KEYS: &[&str] =
    &["contraction", "converged", "iterations", "grad_norm", "energy", "message", "vtk", "history", "clamped"];

fn stage_json(r: &SolveResult, vtk: Option<String>, history: Option<String>) -> Value {
    let b = &r.breakdown;
    json!({
        "contraction": r.contraction,
        "converged": r.converged,
        "iterations": r.iterations,
        "grad_norm": r.grad_norm,
        "energy": {
            "bulk_w": b.bulk_w,
            "bulk_phi": b.bulk_phi,
            "hess_term": b.hess_term,
            "consistency_term": b.consistency_term,
            "penalty_term": b.penalty_term,
            "total": b.total,
        },
        "clamped": b.clamped,
        "message": r.message,
        "vtk": vtk,
        "history": history,
    })
}

/// Outcome of [`run_experiment`]: the manifest (also written as `manifest.json`) and the stage results.
pub struct Experiment {
    pub manifest: Value,
    pub stages: Vec<SolveResult>,
}

/// Mesh, optional `α` estimation, continuation solve, and artifacts in `cfg.output.dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let out = &cfg.output.dir;
    fs::create_dir_all(out)?;
    let t_start = Instant::now();
    let mesh = generate_mesh(&cfg.domain_spec()?)?;
    let t_mesh = t_start.elapsed().as_secs_f64();
    if cfg.output.mesh {
        write_mesh_text(&mesh, BufWriter::new(File::create(out.join("mesh.txt"))?))?;
    }
    let metrics = shape_metrics(&mesh);
    let space = Space::new(mesh, cfg.model.degree)?;

    let t0 = Instant::now();
    let provisional = Assembler::new(&space, cfg.energy_params(1.0))?;
    let estimate = match cfg.model.alpha {
        Alpha::Auto => Some(provisional.estimate_cr(cfg.model.cr_iters, cfg.solver.seed)?),
        Alpha::Value(_) => None,
    };
    let alpha = match (cfg.model.alpha, &estimate) {
        (Alpha::Value(a), _) => a,
        (Alpha::Auto, e) => 2.0 * e.expect("estimated above").value,
    };
    let t_cr = t0.elapsed().as_secs_f64();
    let params = cfg.energy_params(alpha);

    let t1 = Instant::now();
    let stages = continuation_solve(&space, &cfg.cells(), &params, &cfg.solver)?;
    let t_solve = t1.elapsed().as_secs_f64();

    let mut records = Vec::new();
    for (i, r) in stages.iter().enumerate() {
        let vtk = if cfg.output.vtk {
            let name = format!("stage{i}.vtk");
            write_vtk_file(&r.field, &out.join(&name))?;
            Some(name)
        } else {
            None
        };
        let history = if cfg.output.history {
            let name = format!("stage{i}_history.csv");
            write_history_csv(&r.history, BufWriter::new(File::create(out.join(&name))?))?;
            Some(name)
        } else {
            None
        };
        records.push(stage_json(r, vtk, history));
    }
    let config: Value = serde_json::to_value(cfg).map_err(|e| Error::Internal(e.to_string()))?;
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "alpha_used": alpha,
        "estimate_cr": estimate.map(|e| json!({"value": e.value, "iterations": e.iterations, "converged": e.converged})),
        "stable": estimate.map(|e| params.is_stable(e.value)),
        "mesh": {
            "n_vertices": space.mesh().n_vertices(),
            "n_triangles": space.mesh().n_triangles(),
            "max_h": metrics.max_h,
            "max_ratio": metrics.max_ratio,
            "min_angle": metrics.min_angle,
        },
        "n_dofs": space.n_dofs(),
        "threads": rayon::current_num_threads(),
        "stages": records,
        "timings": {"mesh": t_mesh, "estimate_cr": t_cr, "solve": t_solve, "total": t_start.elapsed().as_secs_f64()},
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(out.join("manifest.json"), text + "\n")?;
    Ok(Experiment { manifest, stages })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_are_counted_cyclically() {
        assert_eq!(circular_runs(&[]), 0);
        assert_eq!(circular_runs(&[false, false]), 0);
        assert_eq!(circular_runs(&[true, true]), 1);
        assert_eq!(circular_runs(&[true, false, true]), 1);
        assert_eq!(circular_runs(&[false, true, false, true, true, false]), 2);
    }

    #[test]
    fn density_is_clamped() {
        assert_eq!(density(2.0), 0.5);
        assert_eq!(density(0.01), DENSITY_MAX);
        assert_eq!(density(-1.0), DENSITY_MAX);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
