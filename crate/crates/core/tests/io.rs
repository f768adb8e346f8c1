use proptest::prelude::*;
use tetherfem_core::config::{Alpha, RunConfig};
use tetherfem_core::geometry::Mesh;
use tetherfem_core::io::{element_mean_j, run_experiment, write_vtk, MANIFEST_KEYS, STAGE_KEYS};
use tetherfem_core::material::Penalty;
use tetherfem_core::space::{interpolate, Field, Space};

fn vtk_text(u: &Field) -> String {
    let mut buf = Vec::new();
    write_vtk(u, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

/// Values following the `header` line, up to the next line starting with a letter.
fn section(text: &str, header: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip_while(|l| !l.starts_with(header))
        .skip(1)
        .skip_while(|l| l.starts_with("LOOKUP_TABLE"))
        .take_while(|l| !l.starts_with(|c: char| c.is_ascii_alphabetic()))
        .map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect())
        .collect()
}

#[test]
fn vtk_of_zero_displacement() {
    let mesh = Mesh::structured_rectangle([0.0, 0.0], [2.0, 1.0], 3, 2).unwrap();
    let s = Space::new(mesh.clone(), 2).unwrap();
    let text = vtk_text(&Field::zeros(&s));
    assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
    let pts = section(&text, "POINTS");
    assert_eq!(pts.len(), mesh.n_vertices());
    for (p, v) in pts.iter().zip(mesh.vertices()) {
        assert_eq!(p, &vec![v[0], v[1], 0.0]);
    }
    let j = section(&text, "SCALARS J");
    assert_eq!(j.len(), mesh.n_triangles());
    assert!(j.iter().all(|r| r == &vec![1.0]));
    assert!(section(&text, "SCALARS density").iter().all(|r| r == &vec![1.0]));
    assert_eq!(section(&text, "CELL_TYPES").len(), mesh.n_triangles());
}

#[test]
fn vtk_of_uniform_stretch() {
    let mesh = Mesh::structured_rectangle([0.0, 0.0], [1.0, 1.0], 2, 2).unwrap();
    let s = Space::new(mesh.clone(), 2).unwrap();
    let u = interpolate(&s, |p| [0.1 * p[0], 0.0]).unwrap();
    assert!(element_mean_j(&u).iter().all(|j| (j - 1.1).abs() < 1e-14));
    let text = vtk_text(&u);
    for (p, v) in section(&text, "POINTS").iter().zip(mesh.vertices()) {
        assert!((p[0] - 1.1 * v[0]).abs() < 1e-15 && p[1] == v[1]);
    }
    for r in section(&text, "SCALARS density") {
        assert!((r[0] - 1.0 / 1.1).abs() < 1e-14);
    }
    // Seventeen significant digits.
    let line = text.lines().skip_while(|l| !l.starts_with("SCALARS J")).nth(2).unwrap();
    assert_eq!(line.split('e').next().unwrap().trim_start_matches('-').len(), 18);
}

fn small_config(dir: &std::path::Path, alpha: &str) -> RunConfig {
    let text = format!(
        "[domain]\nshape = \"disk\"\nradius = 3.0\nh = 0.7\n\n[cells]\ncenters = [[0.0, 0.0]]\nradius = 1.0\n\n\
         [model]\nalpha = {alpha}\ncr_iters = 40\n\n[solver]\nschedule = [0.1, 0.2]\n\n[output]\ndir = \"{}\"\n",
        dir.display()
    );
    RunConfig::parse(&text).unwrap()
}

#[test]
fn manifest_carries_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "\"auto\"");
    let exp = run_experiment(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m, exp.manifest);
    for key in MANIFEST_KEYS {
        assert!(m.get(key).is_some(), "missing {key}");
    }
    let stages = m["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 2);
    for st in stages {
        for key in STAGE_KEYS {
            assert!(st.get(key).is_some(), "stage missing {key}");
        }
        for f in [&st["vtk"], &st["history"]] {
            assert!(dir.path().join(f.as_str().unwrap()).exists());
        }
    }
    assert!(dir.path().join("mesh.txt").exists());
    let est = m["estimate_cr"]["value"].as_f64().unwrap();
    assert_eq!(m["alpha_used"].as_f64().unwrap(), 2.0 * est);
    assert_eq!(m["stable"], serde_json::Value::Bool(true));
    // The echoed configuration reads back to the input.
    let echoed: RunConfig = serde_json::from_value(m["config"].clone()).unwrap();
    assert_eq!(echoed, cfg);
}

#[test]
fn fixed_alpha_manifest_has_no_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let exp = run_experiment(&small_config(dir.path(), "12.5")).unwrap();
    assert_eq!(exp.manifest["alpha_used"].as_f64(), Some(12.5));
    assert!(exp.manifest["estimate_cr"].is_null());
    assert!(exp.stages.iter().all(|r| r.converged));
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        1.5f64..20.0,
        0.05f64..1.0,
        prop::collection::vec(((-0.3f64..0.3), (-0.3f64..0.3), 0.1f64..0.3), 0..3),
        (0.0f64..0.1, prop::option::of(0.1f64..50.0), 0usize..3),
        prop::collection::vec(0.01f64..0.2, 1..4),
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(radius, h, cells, (eps, alpha, pen), steps, seed, flag)| {
            let mut cfg = RunConfig::parse(&format!("[domain]\nshape = \"disk\"\nradius = {radius:?}\nh = {h:?}\n")).unwrap();
            // Cells spread along the x axis so they never overlap.
            cfg.cells.centers = cells.iter().enumerate().map(|(i, c)| [c.0 * radius + i as f64 * 0.7 * radius / 3.0, c.1 * radius]).collect();
            cfg.cells.radius = if cells.is_empty() {
                None
            } else {
                Some(tetherfem_core::config::Radii::Each(cells.iter().map(|c| c.2).collect()))
            };
            cfg.model.epsilon = eps;
            cfg.model.alpha = alpha.map_or(Alpha::Auto, Alpha::Value);
            cfg.model.penalty = match pen {
                0 => Penalty::Exponential { a: 60.0 + eps, b: 0.21 },
                1 => Penalty::Polynomial { c0: 1.0 + eps, m0: 2, c1: 0.5 },
                _ => Penalty::None,
            };
            let mut acc = 0.0;
            cfg.solver.schedule = steps.iter().map(|d| {
                acc += d;
                acc
            }).collect();
            cfg.solver.seed = seed;
            cfg.output.vtk = flag;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn config_round_trips_through_text(cfg in arb_config()) {
        prop_assume!(cfg.validate().is_ok());
        let back = RunConfig::parse(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
