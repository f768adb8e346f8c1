//! Acceptance criteria T1–T10. Each test prints one `PASS`/`FAIL` line with the
//! measured quantity and the pinned tolerance, then asserts.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tetherfem_core::energy::{Assembler, EnergyParams};
use tetherfem_core::geometry::{generate_mesh, shape_metrics, Circle, DomainSpec, Mesh, Point};
use tetherfem_core::io::{circular_runs, element_mean_j, j_at_points, median};
use tetherfem_core::material::{
    angular_average_energy, coercivity_margin, coercivity_scan, literal_coercivity_margin, strain_energy,
    COERCIVITY_BETA,
};
use tetherfem_core::solver::{
    continuation_solve, minimize_objective, write_history_csv, SolveConfig, SolveResult, FLAG_ENERGY,
};
use tetherfem_core::space::{interpolate, BrokenField, Space};
use tetherfem_core::verify::{interp_rate_study, jump_decay_study, square_levels, SinField};

const T1_REL_TOL: f64 = 1e-10;
const T2_ADJOINT_TOL: f64 = 1e-11;
const T3_FD_TOL: f64 = 1e-6;
const T4_FLOOR: f64 = -1e-12;
const T5_MIN_SLOPES: [f64; 4] = [2.75, 1.75, 0.75, 1.7];
const T6_BAND_RATIO: f64 = 0.7;
const T7_AVERAGE_TOL: f64 = 1e-9;
const T10_J_LEVEL: f64 = 0.5;

fn report(id: &str, pass: bool, detail: String) {
    println!("{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn random(n: usize, amp: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-amp..amp)).collect()
}

fn meshes() -> Vec<Arc<Space>> {
    let one = DomainSpec::disk(3.0, vec![Circle { center: [0.0, 0.0], radius: 1.0 }], 0.45);
    let two = DomainSpec::disk(
        4.0,
        vec![Circle { center: [-1.5, 0.0], radius: 0.8 }, Circle { center: [1.5, 0.0], radius: 0.8 }],
        0.5,
    );
    vec![
        Space::new(Mesh::structured_rectangle([0.0, 0.0], [1.0, 1.0], 4, 4).unwrap(), 2).unwrap(),
        Space::new(generate_mesh(&one).unwrap(), 2).unwrap(),
        Space::new(generate_mesh(&two).unwrap(), 2).unwrap(),
    ]
}

fn disk_space() -> Arc<Space> {
    meshes().remove(1)
}

fn histories_monotone(stages: &[SolveResult]) -> bool {
    stages.iter().all(|r| r.steps.iter().all(|s| s.f1 <= s.f0))
        && stages.iter().all(|r| r.history.windows(2).all(|w| w[1].energy <= w[0].energy))
}

#[test]
fn t1_energy_form_identity() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for s in meshes() {
        let a = Assembler::new(&s, EnergyParams::default()).unwrap();
        for _ in 0..50 {
            let u = random(s.n_dofs(), 1.0, &mut rng);
            let e = a.energy(&u).unwrap();
            let g = a.discrete_gradient(&u).unwrap();
            let r = a.lifting(&u).unwrap();
            let other = 0.5 * g.norm_sq(&s) - 0.5 * r.norm_sq(&s) + e.penalty_term;
            worst = worst.max(rel(e.higher_order(), other));
        }
    }
    let pass = worst <= T1_REL_TOL;
    report("T1", pass, format!("max relative gap {worst:.2e} (tol {T1_REL_TOL:e}) in {:.1?}", t.elapsed()));
    assert!(pass);
}

#[test]
fn t2_lifting_adjoint_and_bound() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_adjoint = 0.0f64;
    for s in meshes() {
        let a = Assembler::new(&s, EnergyParams::default()).unwrap();
        let nl = tetherfem_core::basis::n_local(s.degree() - 2);
        for _ in 0..3 {
            let u = random(s.n_dofs(), 1.0, &mut rng);
            let mut w = BrokenField::zeros(s.n_elements(), s.degree() - 2, 8);
            for k in 0..s.n_elements() {
                for x in w.element_mut(k).iter_mut().take(8 * nl) {
                    *x = rng.random_range(-1.0..1.0);
                }
            }
            for ei in 0..s.edges().interior.len() {
                let lhs = a.edge_lifting(&u, ei).unwrap().inner(&w, &s);
                let rhs = a.edge_jump_moment(&u, &w, ei).unwrap();
                worst_adjoint = worst_adjoint.max(rel(lhs, rhs));
            }
        }
    }
    let s = disk_space();
    let a = Assembler::new(&s, EnergyParams::default()).unwrap();
    let c = a.estimate_cr(100, 7).unwrap().value;
    let mut worst_ratio = 0.0f64;
    for _ in 0..200 {
        let u = random(s.n_dofs(), 1.0, &mut rng);
        let r = a.lifting(&u).unwrap().norm_sq(&s);
        worst_ratio = worst_ratio.max(r / a.jump_seminorm_sq(&u).unwrap());
    }
    let pass = worst_adjoint <= T2_ADJOINT_TOL && worst_ratio <= c * (1.0 + 1e-9);
    report(
        "T2",
        pass,
        format!(
            "per-edge adjoint gap {worst_adjoint:.2e} (tol {T2_ADJOINT_TOL:e}); max |R u|²/|u|_J² {worst_ratio:.4} ≤ C_R {c:.4} in {:.1?}",
            t.elapsed()
        ),
    );
    assert!(pass);
}

/// Richardson-extrapolated central difference against `grad·v`.
fn fd_error(a: &Assembler, u: &[f64], v: &[f64], grad: &[f64]) -> f64 {
    let central = |t: f64| {
        let up: Vec<f64> = u.iter().zip(v).map(|(x, d)| x + t * d).collect();
        let um: Vec<f64> = u.iter().zip(v).map(|(x, d)| x - t * d).collect();
        (a.energy(&up).unwrap().total - a.energy(&um).unwrap().total) / (2.0 * t)
    };
    let t = 1e-5;
    let fd = (4.0 * central(t / 2.0) - central(t)) / 3.0;
    let an: f64 = grad.iter().zip(v).map(|(g, d)| g * d).sum();
    rel(fd, an)
}

#[test]
fn t3_gradient_matches_finite_differences() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for s in meshes() {
        let a = Assembler::new(&s, EnergyParams::default()).unwrap();
        let u = random(s.n_dofs(), 0.05, &mut rng);
        let g = a.gradient(&u).unwrap();
        for _ in 0..20 {
            let v = random(s.n_dofs(), 1.0, &mut rng);
            worst = worst.max(fd_error(&a, &u, &v, &g));
        }
    }
    let pass = worst < T3_FD_TOL;
    report("T3", pass, format!("max relative FD error {worst:.2e} (tol {T3_FD_TOL:e}) in {:.1?}", t.elapsed()));
    assert!(pass);
}

#[test]
fn t4_auto_alpha_is_stable() {
    let t = Instant::now();
    let s = disk_space();
    let mut a = Assembler::new(&s, EnergyParams::default()).unwrap();
    let c = a.estimate_cr(100, 11).unwrap().value;
    a.set_params(EnergyParams { alpha: 2.0 * c, ..EnergyParams::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut lowest = f64::INFINITY;
    for _ in 0..500 {
        let u = random(s.n_dofs(), 1.0, &mut rng);
        lowest = lowest.min(a.energy(&u).unwrap().higher_order());
    }
    let pass = lowest >= T4_FLOOR;
    report("T4", pass, format!("alpha {:.4}, min higher-order energy {lowest:.4e} (floor {T4_FLOOR:e}) in {:.1?}", 2.0 * c, t.elapsed()));
    assert!(pass);
}

#[test]
fn t5_convergence_rates() {
    let t = Instant::now();
    let r = interp_rate_study(&SinField, 4).unwrap();
    let j = jump_decay_study(&SinField, 4).unwrap();
    let slopes = [r.l2.slope, r.h1.slope, r.h2.slope, j.jump.slope];
    let pass = slopes.iter().zip(T5_MIN_SLOPES).all(|(s, m)| *s >= m);
    report(
        "T5",
        pass,
        format!(
            "slopes L2 {:.3}, H1 {:.3}, H2 {:.3}, jump {:.3} (minimum {T5_MIN_SLOPES:?}) in {:.1?}",
            slopes[0],
            slopes[1],
            slopes[2],
            slopes[3],
            t.elapsed()
        ),
    );
    assert!(pass);
}

/// Median `J` on the segment between the cells, outside half-radius collars, over the median on the radius-5 circle.
fn band_ratio(r: &SolveResult, cells: &[Circle]) -> f64 {
    let (a, b) = (cells[0], cells[1]);
    let gap = b.center[0] - a.center[0];
    let x0 = a.center[0] + 1.5 * a.radius;
    let x1 = b.center[0] - 1.5 * b.radius;
    assert!(x1 > x0 && gap > 0.0);
    let seg: Vec<Point> = (0..=200).map(|i| [x0 + (x1 - x0) * i as f64 / 200.0, 0.0]).collect();
    let far: Vec<Point> = (0..720)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 720.0;
            [5.0 * t.cos(), 5.0 * t.sin()]
        })
        .collect();
    let js = |pts: &[Point]| j_at_points(&r.field, pts).into_iter().flatten().collect::<Vec<f64>>();
    median(&js(&seg)).unwrap() / median(&js(&far)).unwrap()
}

#[test]
fn t6_tether_forms_above_critical_contraction() {
    let t = Instant::now();
    let cells = vec![Circle { center: [-2.5, 0.0], radius: 1.0 }, Circle { center: [2.5, 0.0], radius: 1.0 }];
    let mesh = generate_mesh(&DomainSpec::disk(11.0, cells.clone(), 0.42)).unwrap();
    let n_tri = mesh.n_triangles();
    let s = Space::new(mesh, 2).unwrap();
    let cfg = SolveConfig { schedule: vec![0.2, 0.4, 0.6], ..SolveConfig::default() };
    let stages = continuation_solve(&s, &cells, &EnergyParams::default(), &cfg).unwrap();
    let converged = stages.iter().all(|r| r.converged);
    let low = band_ratio(&stages[0], &cells);
    let high = band_ratio(&stages[2], &cells);
    let pass = converged && high <= T6_BAND_RATIO && low > T6_BAND_RATIO && histories_monotone(&stages);
    report(
        "T6",
        pass,
        format!(
            "{n_tri} triangles, converged {converged}, band/far-field median J at δ=0.2: {low:.3}, at δ=0.6: {high:.3} (tether when ≤ {T6_BAND_RATIO}) in {:.1?}",
            t.elapsed()
        ),
    );
    assert!(pass);
}

#[test]
fn t7_material_law() {
    let t = Instant::now();
    let grid: Vec<f64> = (0..10).map(|i| 0.2 + 0.25 * i as f64).collect();
    let mut worst = 0.0f64;
    let mut margin = f64::INFINITY;
    for &l1 in &grid {
        for &l2 in &grid {
            let f = [[l1, 0.0], [0.0, l2]];
            worst = worst.max((angular_average_energy(l1, l2, 1024) - strain_energy(&f)).abs());
            margin = margin.min(coercivity_margin(&f));
        }
    }
    let scan = coercivity_scan(10);
    margin = margin.min(scan.margin);
    let s2 = 2f64.sqrt();
    let equality = coercivity_margin(&[[s2, 0.0], [0.0, s2]]);
    let literal = literal_coercivity_margin(&[[1.0, 0.0], [0.0, 1.0]]);
    let pass = worst <= T7_AVERAGE_TOL && margin >= -1e-12 && equality.abs() < 1e-12 && literal < 0.0;
    report(
        "T7",
        pass,
        format!(
            "average gap {worst:.2e} (tol {T7_AVERAGE_TOL:e}); min W - (|F|²/2 - {COERCIVITY_BETA:.4}) {margin:.2e}, at √2 I {equality:.1e}; literal bound at I {literal:.4} < 0 in {:.1?}",
            t.elapsed()
        ),
    );
    assert!(pass);
}

#[test]
fn t8_exponential_penalty_continuity() {
    let t = Instant::now();
    let u = |p: Point| {
        let pi = std::f64::consts::PI;
        [0.7 * (pi * p[0]).sin() * (0.5 * pi * p[1]).cos() / pi, 0.1 * p[0] * (pi * p[1]).sin()]
    };
    let params = EnergyParams { epsilon: 0.0, ..EnergyParams::default() };
    let mut phi = Vec::new();
    for mesh in square_levels(2, 5).unwrap() {
        let s = Space::new(mesh, 2).unwrap();
        let uh = interpolate(&s, u).unwrap();
        phi.push(Assembler::new(&s, params.clone()).unwrap().energy(uh.coeffs()).unwrap().bulk_phi);
    }
    let reference = *phi.last().unwrap();
    let diffs: Vec<f64> = phi[..4].iter().map(|p| (p - reference).abs()).collect();
    let pass = diffs.windows(2).all(|w| w[1] < w[0]);
    report("T8", pass, format!("|∫Φ(∇u_h) - ∫Φ(∇u_ref)| = {:?} in {:.1?}", diffs.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>(), t.elapsed()));
    assert!(pass);
}

#[test]
fn t9_solver_hygiene() {
    let t = Instant::now();
    // Quadratic energy with a random SPD matrix.
    let n = 60;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let m = random(n * n, 1.0, &mut rng);
    let a: Vec<f64> = (0..n * n)
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum::<f64>() / n as f64 + if i == j { 1.0 } else { 0.0 }
        })
        .collect();
    let b = random(n, 1.0, &mut rng);
    let obj = |x: &[f64]| -> tetherfem_core::Result<(f64, Vec<f64>)> {
        let ax: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum()).collect();
        let f = 0.5 * x.iter().zip(&ax).map(|(p, q)| p * q).sum::<f64>() - x.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>();
        Ok((f, ax.iter().zip(&b).map(|(p, q)| p - q).collect()))
    };
    let qcfg = SolveConfig { grad_tol: 0.0, grad_abs_tol: 1e-9, c2: 0.1, ..SolveConfig::default() };
    let q = minimize_objective(&obj, vec![0.0; n], &vec![true; n], None, &qcfg).unwrap();
    let quadratic_ok = q.converged && q.iterations <= n + 10;

    // A small logged nonlinear run.
    let cells = vec![Circle { center: [0.0, 0.0], radius: 1.0 }];
    let s = Space::new(generate_mesh(&DomainSpec::disk(3.0, cells.clone(), 0.5)).unwrap(), 2).unwrap();
    let cfg = SolveConfig { schedule: vec![0.2, 0.4], log_stride: 10, ..SolveConfig::default() };
    let stages = continuation_solve(&s, &cells, &EnergyParams::default(), &cfg).unwrap();
    let monotone = histories_monotone(&stages);
    let mut csv = Vec::new();
    write_history_csv(&stages[1].history, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    let header_ok = lines.next() == Some("iteration,energy,flagged");
    let rows_ok = lines.zip(&stages[1].history).all(|(line, h)| {
        let f: Vec<&str> = line.split(',').collect();
        f.len() == 3
            && f[0].parse::<usize>().ok() == Some(h.iteration)
            && h.iteration % 10 == 0
            && f[1].parse::<f64>().ok() == Some(h.energy)
            && f[2] == if h.energy > FLAG_ENERGY { "1" } else { "0" }
    });
    let pass = quadratic_ok && monotone && header_ok && rows_ok && stages.iter().all(|r| r.converged);
    report(
        "T9",
        pass,
        format!(
            "quadratic CG {} iterations (limit {}); monotone accepted energies {monotone}; CSV header {header_ok}, rows {rows_ok} in {:.1?}",
            q.iterations,
            n + 10,
            t.elapsed()
        ),
    );
    assert!(pass);
}

/// Disjoint angular intervals on the radius-1.5 circle where `J` drops below the threshold.
/// Low-J run count and minimum J on the circle of radius 1.5, plus the area fraction with element mean J below the level.
fn low_j_stats(r: &SolveResult) -> (usize, f64, f64) {
    let pts: Vec<Point> = (0..1440)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / 1440.0;
            [1.5 * t.cos(), 1.5 * t.sin()]
        })
        .collect();
    let js = j_at_points(&r.field, &pts);
    let flags: Vec<bool> = js.iter().map(|j| j.is_some_and(|j| j < T10_J_LEVEL)).collect();
    let min_j = js.iter().flatten().fold(f64::INFINITY, |m, &j| m.min(j));
    let mesh = r.field.space().mesh();
    let low: f64 = element_mean_j(&r.field)
        .iter()
        .enumerate()
        .filter(|(_, &j)| j < T10_J_LEVEL)
        .fold(0.0, |a, (k, _)| a + mesh.area(k));
    (circular_runs(&flags), min_j, low / mesh.total_area())
}

#[test]
fn t10_epsilon_sets_the_length_scale() {
    let t = Instant::now();
    let cells = vec![Circle { center: [0.0, 0.0], radius: 1.0 }];
    let mesh = generate_mesh(&DomainSpec::disk(7.5, cells.clone(), 0.3)).unwrap();
    let n_tri = mesh.n_triangles();
    let h = shape_metrics(&mesh).max_h;
    let s = Space::new(mesh, 2).unwrap();
    let cfg = SolveConfig { schedule: vec![0.25, 0.5], ..SolveConfig::default() };
    let mut counts = Vec::new();
    let mut diag = Vec::new();
    let mut converged = true;
    for eps in [5e-2, 5e-3] {
        let params = EnergyParams { epsilon: eps, ..EnergyParams::default() };
        let stages = continuation_solve(&s, &cells, &params, &cfg).unwrap();
        converged &= stages.iter().all(|r| r.converged) && histories_monotone(&stages);
        let (n, min_j, frac) = low_j_stats(stages.last().unwrap());
        counts.push(n);
        diag.push(format!("ε={eps:e}: min J {min_j:.3}, low-J area {frac:.2e}"));
    }
    let pass = converged && counts[1] >= counts[0];
    // Equal zero counts satisfy the inequality without showing any structure; say so in the report.
    let vacuous = if counts == [0, 0] { " [vacuous: no low-J region at either ε]" } else { "" };
    report(
        "T10",
        pass,
        format!(
            "{n_tri} triangles (max h {h:.3}), converged {converged}; J < {T10_J_LEVEL} intervals at radius 1.5: ε=5e-2 {}, ε=5e-3 {}{vacuous} ({}) in {:.1?}",
            counts[0],
            counts[1],
            diag.join("; "),
            t.elapsed()
        ),
    );
    assert!(pass);
}
