//! Convergence-rate studies and constant probes for the discretization.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::LagrangeBasis;
use crate::energy::{Assembler, EnergyParams};
use crate::error::{Error, Result};
use crate::geometry::{refine_uniform, shape_metrics, Mesh, Point};
use crate::quadrature::{cell_rule, edge_rule};
use crate::space::{edge_barycentric, interpolate, local_grad, local_hess, local_value, Field, Space};
use crate::tensor::{Mat2, Tensor3};

/// Slope margin below the target still counted as a pass.
pub const SLOPE_MARGIN: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub name: String,
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub target: f64,
    pub pass: bool,
}

impl RateReport {
    pub fn new(name: &str, h: Vec<f64>, errors: Vec<f64>, target: f64) -> Result<Self> {
        let slope = fit_slope(&h, &errors)?;
        Ok(RateReport { name: name.into(), h, errors, slope, target, pass: slope >= target - SLOPE_MARGIN })
    }

    /// `h,error` rows followed by a commented slope footer.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "h,error")?;
        for (h, e) in self.h.iter().zip(&self.errors) {
            writeln!(w, "{h:.16e},{e:.16e}")?;
        }
        writeln!(w, "# {}: slope {:.6} target {} pass {}", self.name, self.slope, self.target, self.pass)?;
        Ok(())
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn fit_slope(h: &[f64], e: &[f64]) -> Result<f64> {
    if h.len() != e.len() || h.len() < 3 {
        return Err(Error::Validation { key: "levels".into(), message: "rate fits need at least 3 levels".into() });
    }
    if h.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Validation { key: "levels".into(), message: "mesh sizes must decrease strictly".into() });
    }
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// A smooth vector field with known first and second derivatives.
pub trait Exact: Sync {
    fn value(&self, p: Point) -> [f64; 2];
    fn grad(&self, p: Point) -> Mat2;
    fn hess(&self, p: Point) -> Tensor3;
}

/// `(sin x sin y, cos x)`.
#[derive(Clone, Copy, Debug)]
pub struct SinField;

impl Exact for SinField {
    fn value(&self, p: Point) -> [f64; 2] {
        [p[0].sin() * p[1].sin(), p[0].cos()]
    }
    fn grad(&self, p: Point) -> Mat2 {
        let (sx, cx, sy, cy) = (p[0].sin(), p[0].cos(), p[1].sin(), p[1].cos());
        [[cx * sy, sx * cy], [-sx, 0.0]]
    }
    fn hess(&self, p: Point) -> Tensor3 {
        let (sx, cx, sy, cy) = (p[0].sin(), p[0].cos(), p[1].sin(), p[1].cos());
        [[[-sx * sy, cx * cy], [cx * cy, -sx * sy]], [[-cx, 0.0], [0.0, 0.0]]]
    }
}

/// `(x³, 0)`.
#[derive(Clone, Copy, Debug)]
pub struct CubicField;

impl Exact for CubicField {
    fn value(&self, p: Point) -> [f64; 2] {
        [p[0].powi(3), 0.0]
    }
    fn grad(&self, p: Point) -> Mat2 {
        [[3.0 * p[0] * p[0], 0.0], [0.0, 0.0]]
    }
    fn hess(&self, p: Point) -> Tensor3 {
        [[[6.0 * p[0], 0.0], [0.0, 0.0]], [[0.0; 2]; 2]]
    }
}

/// `(x² + xy, y²/2 - x)`, reproduced exactly by quadratic elements.
#[derive(Clone, Copy, Debug)]
pub struct QuadraticField;

impl Exact for QuadraticField {
    fn value(&self, p: Point) -> [f64; 2] {
        [p[0] * p[0] + p[0] * p[1], 0.5 * p[1] * p[1] - p[0]]
    }
    fn grad(&self, p: Point) -> Mat2 {
        [[2.0 * p[0] + p[1], p[0]], [-1.0, p[1]]]
    }
    fn hess(&self, _: Point) -> Tensor3 {
        [[[2.0, 1.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]]
    }
}

/// Uniformly refined structured meshes of the unit square starting from `n0 × n0` cells.
pub fn square_levels(n0: usize, levels: usize) -> Result<Vec<Mesh>> {
    let mut out = Vec::with_capacity(levels);
    let mut m = Mesh::structured_rectangle([0.0, 0.0], [1.0, 1.0], n0, n0)?;
    for l in 0..levels {
        if l > 0 {
            m = refine_uniform(&m)?;
        }
        out.push(m.clone());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InterpErrors {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
    /// `(Σ_e ∫_e |u - I u|²)^{1/2}` over all edges.
    pub edge_l2: f64,
}

/// Errors of the nodal interpolant in the L², H¹ and broken H² norms and on edges.
pub fn interpolation_errors(space: &Arc<Space>, u: &dyn Exact) -> Result<InterpErrors> {
    let iu = interpolate(space, |p| u.value(p))?;
    let rule = cell_rule(2 * space.degree() + 6)?;
    let tabs = space.tabulate_cell(&rule);
    let mut loc = vec![[0.0; 2]; space.n_local()];
    let mut e = InterpErrors::default();
    for k in 0..space.n_elements() {
        space.gather(k, iu.coeffs(), &mut loc);
        let geo = space.geometry(k);
        let t = space.mesh().triangle_points(k);
        for ((tab, w), lam) in tabs.iter().zip(&rule.weights).zip(&rule.points) {
            let x = [
                lam[0] * t[0][0] + lam[1] * t[1][0] + lam[2] * t[2][0],
                lam[0] * t[0][1] + lam[1] * t[1][1] + lam[2] * t[2][1],
            ];
            let wk = w * 2.0 * geo.area;
            let v = local_value(&loc, tab);
            let g = local_grad(&loc, tab, geo);
            let h = local_hess(&loc, tab, geo);
            let (ve, ge, he) = (u.value(x), u.grad(x), u.hess(x));
            for i in 0..2 {
                e.l2 += wk * (v[i] - ve[i]).powi(2);
                for j in 0..2 {
                    e.h1 += wk * (g[i][j] - ge[i][j]).powi(2);
                    for l in 0..2 {
                        e.h2 += wk * (h[i][j][l] - he[i][j][l]).powi(2);
                    }
                }
            }
        }
    }
    let erule = edge_rule(2 * space.degree() + 6)?;
    let etabs = space.tabulate_edges(&erule);
    let mut add_edge = |k: usize, local: usize, length: f64| {
        space.gather(k, iu.coeffs(), &mut loc);
        let t = space.mesh().triangle_points(k);
        for (p, w) in erule.weights.iter().enumerate() {
            let lam = edge_barycentric(local, erule.points[p]);
            let x = [
                lam[0] * t[0][0] + lam[1] * t[1][0] + lam[2] * t[2][0],
                lam[0] * t[0][1] + lam[1] * t[1][1] + lam[2] * t[2][1],
            ];
            let v = local_value(&loc, &etabs[local][0][p]);
            let ve = u.value(x);
            e.edge_l2 += w * length * ((v[0] - ve[0]).powi(2) + (v[1] - ve[1]).powi(2));
        }
    };
    for ie in &space.edges().interior {
        add_edge(ie.plus, ie.plus_local, ie.length);
    }
    for be in &space.edges().boundary {
        add_edge(be.element, be.local, be.length);
    }
    Ok(InterpErrors { l2: e.l2.sqrt(), h1: e.h1.sqrt(), h2: e.h2.sqrt(), edge_l2: e.edge_l2.sqrt() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpRates {
    pub l2: RateReport,
    pub h1: RateReport,
    pub h2: RateReport,
    pub edge: RateReport,
}

/// Interpolation error rates over `levels` uniform refinements of the unit square, for `q = 2`
/// and a field with three bounded derivatives.
pub fn interp_rate_study(u: &dyn Exact, levels: usize) -> Result<InterpRates> {
    if levels < 3 {
        return Err(Error::Validation { key: "levels".into(), message: "need at least 3 levels".into() });
    }
    let (mut h, mut l2, mut h1, mut h2, mut edge) = (vec![], vec![], vec![], vec![], vec![]);
    for m in square_levels(2, levels)? {
        h.push(shape_metrics(&m).max_h);
        let s = Space::new(m, 2)?;
        let e = interpolation_errors(&s, u)?;
        l2.push(e.l2);
        h1.push(e.h1);
        h2.push(e.h2);
        edge.push(e.edge_l2);
    }
    Ok(InterpRates {
        l2: RateReport::new("interp-L2", h.clone(), l2, 3.0)?,
        h1: RateReport::new("interp-H1", h.clone(), h1, 2.0)?,
        h2: RateReport::new("interp-brokenH2", h.clone(), h2, 1.0)?,
        edge: RateReport::new("interp-edgeL2", h, edge, 2.5)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpRates {
    /// `Σ_e h_e⁻¹ ∫|[∇ I u]|²`
    pub jump: RateReport,
    /// `|Σ_e ∫ {∇∇ I u}·[∇ I u ⊗ n]|`
    pub consistency: RateReport,
}

pub fn jump_decay_study(u: &dyn Exact, levels: usize) -> Result<JumpRates> {
    if levels < 3 {
        return Err(Error::Validation { key: "levels".into(), message: "need at least 3 levels".into() });
    }
    let (mut h, mut jump, mut cons) = (vec![], vec![], vec![]);
    for m in square_levels(2, levels)? {
        h.push(shape_metrics(&m).max_h);
        let s = Space::new(m, 2)?;
        let iu = interpolate(&s, |p| u.value(p))?;
        let params = EnergyParams { alpha: 1.0, ..EnergyParams::default() };
        let b = Assembler::new(&s, params)?.energy(iu.coeffs())?;
        jump.push(b.penalty_term);
        cons.push(b.consistency_term.abs());
    }
    Ok(JumpRates {
        jump: RateReport::new("jump", h.clone(), jump, 2.0)?,
        consistency: RateReport::new("consistency", h, cons, 1.0)?,
    })
}

/// Largest `h_e ‖v‖²_{L²(e)} / ‖v‖²_{L²(K)}` over elements `K`, their edges `e`
/// and scalar polynomials `v` of the space degree.
pub fn trace_constant_probe(space: &Space) -> Result<f64> {
    let q = space.degree();
    let basis = LagrangeBasis::new(q);
    let n = basis.len();
    let crule = cell_rule(2 * q)?;
    let erule = edge_rule(2 * q)?;
    // Reference mass matrices: the physical ones are scaled copies.
    let mut mk = DMatrix::<f64>::zeros(n, n);
    for (p, w) in crule.points.iter().zip(&crule.weights) {
        let t = basis.tabulate(*p);
        mk += DMatrix::from_fn(n, n, |a, b| w * t.value[a] * t.value[b]);
    }
    let chol = mk.clone().cholesky().ok_or_else(|| Error::Internal("reference mass matrix not SPD".into()))?;
    let linv = chol.l().try_inverse().ok_or_else(|| Error::Internal("singular Cholesky factor".into()))?;
    let mut ref_max = [0.0; 3];
    for (e, slot) in ref_max.iter_mut().enumerate() {
        let mut me = DMatrix::<f64>::zeros(n, n);
        for (s, w) in erule.points.iter().zip(&erule.weights) {
            let t = basis.tabulate(edge_barycentric(e, *s));
            me += DMatrix::from_fn(n, n, |a, b| w * t.value[a] * t.value[b]);
        }
        let c = &linv * me * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        *slot = SymmetricEigen::new(c).eigenvalues.iter().cloned().fold(0.0, f64::max);
    }
    // ‖v‖²_e = |e| (v_e^T M̂_e v_e) and ‖v‖²_K = 2|K| (v^T M̂_K v).
    let mut best = 0.0f64;
    for k in 0..space.n_elements() {
        let t = space.mesh().triangle_points(k);
        let area = space.geometry(k).area;
        for (e, &r) in ref_max.iter().enumerate() {
            let (a, b) = (t[(e + 1) % 3], t[(e + 2) % 3]);
            let len = (a[0] - b[0]).hypot(a[1] - b[1]);
            best = best.max(len * len * r / (2.0 * area));
        }
    }
    Ok(best)
}

/// Random smooth field: a few low-frequency Fourier modes per component.
fn smooth_sample(rng: &mut ChaCha8Rng) -> impl Fn(Point) -> [f64; 2] {
    let modes: Vec<[f64; 5]> = (0..8)
        .map(|_| {
            [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(-1.0..1.0),
                if rng.random_bool(0.5) { 0.0 } else { 1.0 },
            ]
        })
        .collect();
    move |p: Point| {
        let mut v = [0.0; 2];
        for m in &modes {
            v[m[4] as usize] += m[3] * (m[0] * p[0] + m[1] * p[1] + m[2]).sin();
        }
        v
    }
}

/// `‖∇w‖²_{L^r}` and the mean gradient of a field.
fn gradient_moments(w: &Field, r: f64) -> Result<(f64, Mat2, f64)> {
    let s = w.space();
    let rule = cell_rule(2 * s.degree() + 2)?;
    let tabs = s.tabulate_cell(&rule);
    let mut loc = vec![[0.0; 2]; s.n_local()];
    let (mut lr, mut mean, mut area) = (0.0, [[0.0; 2]; 2], 0.0);
    for k in 0..s.n_elements() {
        s.gather(k, w.coeffs(), &mut loc);
        let geo = s.geometry(k);
        area += geo.area;
        for (tab, wq) in tabs.iter().zip(&rule.weights) {
            let g = local_grad(&loc, tab, geo);
            let wk = wq * 2.0 * geo.area;
            lr += wk * crate::tensor::frob_sq(&g).powf(0.5 * r);
            for i in 0..2 {
                for j in 0..2 {
                    mean[i][j] += wk * g[i][j];
                }
            }
        }
    }
    for row in mean.iter_mut() {
        for v in row.iter_mut() {
            *v /= area;
        }
    }
    Ok((lr.powf(2.0 / r), mean, area))
}

/// `‖∇w‖²_{L^r} / (|w|²_{H²(T_h)} + |mean ∇w|²)` for one field.
pub fn poincare_ratio(w: &Field, r: f64) -> Result<f64> {
    let asm = Assembler::new(w.space(), EnergyParams { alpha: 1.0, ..EnergyParams::default() })?;
    let semi = asm.broken_h2_seminorm_sq(w.coeffs())?;
    let (lhs, mean, _) = gradient_moments(w, r)?;
    Ok(lhs / (semi + crate::tensor::frob_sq(&mean)))
}

/// Largest Poincaré ratio over a sample of fields; `r` is 2 or 4.
pub fn poincare_probe(fields: &[Field], r: f64) -> Result<f64> {
    if r != 2.0 && r != 4.0 {
        return Err(Error::Validation { key: "r".into(), message: format!("supported exponents are 2 and 4, got {r}") });
    }
    let mut best = 0.0f64;
    for w in fields {
        best = best.max(poincare_ratio(w, r)?);
    }
    Ok(best)
}

/// Interpolants of `count` random smooth fields, reproducible from `seed`.
pub fn random_smooth_fields(space: &Arc<Space>, count: usize, seed: u64) -> Result<Vec<Field>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| interpolate(space, smooth_sample(&mut rng))).collect()
}

/// `∮ Σ_k |∇∇u_k : n ⊗ n| ds` over the boundary, from the elementwise Hessians.
pub fn natural_bc_residual(u: &Field) -> Result<f64> {
    let s = u.space();
    let rule = edge_rule(2 * s.degree())?;
    let tabs = s.tabulate_edges(&rule);
    let mut loc = vec![[0.0; 2]; s.n_local()];
    let mut total = 0.0;
    for be in &s.edges().boundary {
        s.gather(be.element, u.coeffs(), &mut loc);
        let geo = s.geometry(be.element);
        let n = be.normal;
        for (p, w) in rule.weights.iter().enumerate() {
            let h = local_hess(&loc, &tabs[be.local][0][p], geo);
            for hk in &h {
                let v = hk[0][0] * n[0] * n[0] + (hk[0][1] + hk[1][0]) * n[0] * n[1] + hk[1][1] * n[1] * n[1];
                total += w * be.length * v.abs();
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let h = [0.5, 0.25, 0.125, 0.0625];
        let e: Vec<f64> = h.iter().map(|x: &f64| 3.7 * x.powf(2.3)).collect();
        assert!((fit_slope(&h, &e).unwrap() - 2.3).abs() < 1e-10);
        assert!(fit_slope(&h[..2], &e[..2]).is_err());
        assert!(fit_slope(&[0.1, 0.2, 0.3], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn exact_fields_are_consistent() {
        let p = [0.3, -0.7];
        for u in [&SinField as &dyn Exact, &CubicField, &QuadraticField] {
            let h = 1e-6;
            for j in 0..2 {
                let mut pp = p;
                let mut pm = p;
                pp[j] += h;
                pm[j] -= h;
                let (vp, vm) = (u.value(pp), u.value(pm));
                let (gp, gm) = (u.grad(pp), u.grad(pm));
                for i in 0..2 {
                    assert!(((vp[i] - vm[i]) / (2.0 * h) - u.grad(p)[i][j]).abs() < 1e-8);
                    for k in 0..2 {
                        assert!(((gp[i][k] - gm[i][k]) / (2.0 * h) - u.hess(p)[i][k][j]).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn csv_report() {
        let r = RateReport::new("x", vec![0.4, 0.2, 0.1], vec![0.16, 0.04, 0.01], 2.0).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("h,error\n"));
        assert_eq!(s.lines().count(), 5);
        assert!(r.pass && (r.slope - 2.0).abs() < 1e-12);
    }
}
