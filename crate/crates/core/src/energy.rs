//! Discrete energy of the displacement field and its first variation.
//!
//! The energy is the bulk integral of the strain energy and the
//! interpenetration penalty plus `ε²` times the interior-penalty form of the
//! second-gradient term:
//!
//! ```text
//! ½ Σ_K ∫|∇∇u|²  −  Σ_e ∫_e {∇∇u}·[∇u ⊗ n_e]  +  Σ_e (α/h_e) ∫_e |[∇u]|²
//! ```
//!
//! with sums over interior edges only. Jumps are taken as `plus − minus` and
//! `n_e` points out of the `plus` triangle.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{LagrangeBasis, PointTab};
use crate::error::{Error, Result};
use crate::material::{strain_energy, strain_energy_dF, Penalty};
use crate::quadrature::{cell_rule, edge_rule, CellRule, EdgeRule};
use crate::space::{local_grad, local_hess, tabulate_edges_with, BrokenField, Field, Space};
use crate::tensor::{add2, to_flat3, Mat2, Tensor3, IDENTITY, ZERO3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub penalty: Penalty,
    /// Cell quadrature degree for the bulk terms; `6 (q - 1)` when absent.
    #[serde(default)]
    pub cell_degree: Option<usize>,
    /// Edge quadrature degree; `2 q` when absent.
    #[serde(default)]
    pub edge_degree: Option<usize>,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams { epsilon: 5e-3, alpha: 10.0, penalty: Penalty::default(), cell_degree: None, edge_degree: None }
    }
}

impl EnergyParams {
    /// Interior-penalty stability requires `α` above the lifting constant.
    pub fn is_stable(&self, c_r: f64) -> bool {
        self.alpha > c_r
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub bulk_w: f64,
    pub bulk_phi: f64,
    /// `½ Σ_K ∫|∇∇u|²`
    pub hess_term: f64,
    /// `−Σ_e ∫ {∇∇u}·[∇u ⊗ n]`
    pub consistency_term: f64,
    /// `Σ_e (α/h_e) ∫ |[∇u]|²`
    pub penalty_term: f64,
    pub total: f64,
    /// Whether the penalty exponent was clamped anywhere.
    pub clamped: bool,
}

impl EnergyBreakdown {
    pub fn higher_order(&self) -> f64 {
        self.hess_term + self.consistency_term + self.penalty_term
    }
}

/// Individual terms of the energy, for per-term gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    BulkW,
    BulkPhi,
    Hess,
    Consistency,
    Penalty,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::BulkW, Term::BulkPhi, Term::Hess, Term::Consistency, Term::Penalty];

    pub fn value(self, b: &EnergyBreakdown) -> f64 {
        match self {
            Term::BulkW => b.bulk_w,
            Term::BulkPhi => b.bulk_phi,
            Term::Hess => b.hess_term,
            Term::Consistency => b.consistency_term,
            Term::Penalty => b.penalty_term,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Weights {
    w: f64,
    phi: f64,
    hess: f64,
    cons: f64,
    pen: f64,
}

struct Scratch {
    u: Vec<[f64; 2]>,
    v: Vec<[f64; 2]>,
    dp: Vec<[f64; 2]>,
    dm: Vec<[f64; 2]>,
    hp: Vec<Mat2>,
    hm: Vec<Mat2>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            u: vec![[0.0; 2]; n],
            v: vec![[0.0; 2]; n],
            dp: vec![[0.0; 2]; n],
            dm: vec![[0.0; 2]; n],
            hp: vec![[[0.0; 2]; 2]; n],
            hm: vec![[[0.0; 2]; 2]; n],
        }
    }
}

/// Precomputed quadrature tables for energy, gradient and lifting evaluation on one space.
pub struct Assembler {
    space: Arc<Space>,
    params: EnergyParams,
    bulk_rule: CellRule,
    bulk_tabs: Vec<PointTab>,
    hess_rule: CellRule,
    hess_tabs: Vec<PointTab>,
    edge_rule: EdgeRule,
    edge_tabs: [[Vec<PointTab>; 2]; 3],
    lift_basis: LagrangeBasis,
    lift_edge_tabs: [[Vec<PointTab>; 2]; 3],
    /// Inverse of the reference mass matrix of the lifting basis.
    lift_mass_inv: Vec<f64>,
}

impl Assembler {
    pub fn new(space: &Arc<Space>, params: EnergyParams) -> Result<Self> {
        let q = space.degree();
        if q < 2 {
            return Err(Error::Space(format!("the second-gradient terms need degree ≥ 2, got {q}")));
        }
        if !(params.epsilon >= 0.0) || !(params.alpha > 0.0) {
            return Err(Error::Validation {
                key: "model".into(),
                message: format!("need ε ≥ 0 and α > 0, got ε = {}, α = {}", params.epsilon, params.alpha),
            });
        }
        let bulk_rule = cell_rule(params.cell_degree.unwrap_or(6 * (q - 1)))?;
        let hess_rule = cell_rule(2 * (q - 2))?;
        let edge_rule = edge_rule(params.edge_degree.unwrap_or(2 * q))?;
        let bulk_tabs = space.tabulate_cell(&bulk_rule);
        let hess_tabs = space.tabulate_cell(&hess_rule);
        let edge_tabs = space.tabulate_edges(&edge_rule);
        let lift_basis = LagrangeBasis::new(q - 2);
        let lift_edge_tabs = tabulate_edges_with(&lift_basis, &edge_rule);
        let n = lift_basis.len();
        let mrule = Space::product_rule(q - 2);
        let mut mass = DMatrix::<f64>::zeros(n, n);
        for (p, w) in mrule.points.iter().zip(&mrule.weights) {
            let t = lift_basis.tabulate(*p);
            for a in 0..n {
                for b in 0..n {
                    mass[(a, b)] += w * t.value[a] * t.value[b];
                }
            }
        }
        let inv = mass.try_inverse().ok_or_else(|| Error::Internal("singular lifting mass matrix".into()))?;
        let lift_mass_inv = (0..n * n).map(|i| inv[(i / n, i % n)]).collect();
        Ok(Assembler {
            space: space.clone(),
            params,
            bulk_rule,
            bulk_tabs,
            hess_rule,
            hess_tabs,
            edge_rule,
            edge_tabs,
            lift_basis,
            lift_edge_tabs,
            lift_mass_inv,
        })
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    pub fn set_params(&mut self, params: EnergyParams) -> Result<()> {
        *self = Assembler::new(&self.space, params)?;
        Ok(())
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.space.n_dofs() {
            return Err(Error::Space(format!(
                "coefficient vector has length {}, space expects {}",
                coeffs.len(),
                self.space.n_dofs()
            )));
        }
        Ok(())
    }

    fn full_weights(&self) -> Weights {
        let e2 = self.params.epsilon * self.params.epsilon;
        Weights { w: 1.0, phi: 1.0, hess: e2, cons: e2, pen: e2 }
    }

    pub fn energy(&self, coeffs: &[f64]) -> Result<EnergyBreakdown> {
        self.check_len(coeffs)?;
        Ok(self.run(coeffs, None).0)
    }

    pub fn energy_and_gradient(&self, coeffs: &[f64]) -> Result<(EnergyBreakdown, Vec<f64>)> {
        self.check_len(coeffs)?;
        let (e, g) = self.run(coeffs, Some(self.full_weights()));
        Ok((e, g.expect("gradient requested")))
    }

    pub fn gradient(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.energy_and_gradient(coeffs)?.1)
    }

    /// Gradient of a single unscaled energy term.
    pub fn term_gradient(&self, coeffs: &[f64], term: Term) -> Result<Vec<f64>> {
        self.check_len(coeffs)?;
        let mut w = Weights { w: 0.0, phi: 0.0, hess: 0.0, cons: 0.0, pen: 0.0 };
        match term {
            Term::BulkW => w.w = 1.0,
            Term::BulkPhi => w.phi = 1.0,
            Term::Hess => w.hess = 1.0,
            Term::Consistency => w.cons = 1.0,
            Term::Penalty => w.pen = 1.0,
        }
        Ok(self.run(coeffs, Some(w)).1.expect("gradient requested"))
    }

    fn run(&self, coeffs: &[f64], grad: Option<Weights>) -> (EnergyBreakdown, Option<Vec<f64>>) {
        let space = &*self.space;
        let nloc = space.n_local();
        let ne = space.n_elements();
        let edges = &space.edges().interior;
        let estride = 2 * nloc;
        let mut cell_vals = vec![[0.0; 4]; ne];
        let mut edge_vals = vec![[0.0; 2]; edges.len()];
        let mut cell_res = vec![0.0; if grad.is_some() { ne * estride } else { 0 }];
        let mut edge_res = vec![0.0; if grad.is_some() { edges.len() * 2 * estride } else { 0 }];
        let wts = grad.unwrap_or(Weights { w: 0.0, phi: 0.0, hess: 0.0, cons: 0.0, pen: 0.0 });
        if grad.is_some() {
            cell_vals.par_iter_mut().zip(cell_res.par_chunks_mut(estride)).enumerate().for_each_init(
                || Scratch::new(nloc),
                |s, (k, (v, r))| *v = self.cell(k, coeffs, Some((r, &wts)), s),
            );
            edge_vals.par_iter_mut().zip(edge_res.par_chunks_mut(2 * estride)).enumerate().for_each_init(
                || Scratch::new(nloc),
                |s, (i, (v, r))| *v = self.edge(i, coeffs, Some((r, &wts)), s),
            );
        } else {
            cell_vals
                .par_iter_mut()
                .enumerate()
                .for_each_init(|| Scratch::new(nloc), |s, (k, v)| *v = self.cell(k, coeffs, None, s));
            edge_vals
                .par_iter_mut()
                .enumerate()
                .for_each_init(|| Scratch::new(nloc), |s, (i, v)| *v = self.edge(i, coeffs, None, s));
        }
        let mut b = EnergyBreakdown::default();
        for v in &cell_vals {
            b.bulk_w += v[0];
            b.bulk_phi += v[1];
            b.hess_term += v[2];
            b.clamped |= v[3] != 0.0;
        }
        for v in &edge_vals {
            b.consistency_term += v[0];
            b.penalty_term += v[1];
        }
        b.penalty_term *= self.params.alpha;
        let e2 = self.params.epsilon * self.params.epsilon;
        b.total = b.bulk_w + b.bulk_phi + e2 * b.higher_order();
        let g = grad.map(|_| {
            let mut g = vec![0.0; space.n_dofs()];
            for k in 0..ne {
                scatter(&mut g, space.element_nodes(k), &cell_res[k * estride..(k + 1) * estride]);
            }
            for (i, e) in edges.iter().enumerate() {
                let r = &edge_res[i * 2 * estride..(i + 1) * 2 * estride];
                scatter(&mut g, space.element_nodes(e.plus), &r[..estride]);
                scatter(&mut g, space.element_nodes(e.minus), &r[estride..]);
            }
            g
        });
        (b, g)
    }

    /// Bulk and Hessian terms of element `k`: `[W, Φ, ½∫|∇∇u|², clamped]`.
    fn cell(&self, k: usize, coeffs: &[f64], mut res: Option<(&mut [f64], &Weights)>, s: &mut Scratch) -> [f64; 4] {
        let space = &*self.space;
        let geo = space.geometry(k);
        space.gather(k, coeffs, &mut s.u);
        if let Some((r, _)) = res.as_mut() {
            r.iter_mut().for_each(|x| *x = 0.0);
        }
        let scale = 2.0 * geo.area;
        let (mut ew, mut ephi, mut eh, mut clamped) = (0.0, 0.0, 0.0, false);
        for (tab, &wq) in self.bulk_tabs.iter().zip(&self.bulk_rule.weights) {
            let w = wq * scale;
            let f = add2(&IDENTITY, &local_grad(&s.u, tab, geo));
            let (phi, c) = self.params.penalty.value(&f);
            clamped |= c;
            ew += w * strain_energy(&f);
            ephi += w * phi;
            if let Some((r, wts)) = res.as_mut() {
                let mut p = [[0.0; 2]; 2];
                if wts.w != 0.0 {
                    p = add2(&p, &crate::tensor::scale2(&strain_energy_dF(&f), wts.w));
                }
                if wts.phi != 0.0 {
                    p = add2(&p, &crate::tensor::scale2(&self.params.penalty.dF(&f).0, wts.phi));
                }
                for (a, dl) in tab.dlam.iter().enumerate() {
                    let d = geo.grad(dl);
                    for i in 0..2 {
                        r[2 * a + i] += w * (p[i][0] * d[0] + p[i][1] * d[1]);
                    }
                }
            }
        }
        for (tab, &wq) in self.hess_tabs.iter().zip(&self.hess_rule.weights) {
            let w = wq * scale;
            let h = local_hess(&s.u, tab, geo);
            eh += 0.5 * w * crate::tensor::norm3_sq(&h);
            if let Some((r, wts)) = res.as_mut() {
                if wts.hess != 0.0 {
                    for (a, d2) in tab.d2lam.iter().enumerate() {
                        let hp = geo.hess(d2);
                        for i in 0..2 {
                            let mut acc = 0.0;
                            for j in 0..2 {
                                for l in 0..2 {
                                    acc += h[i][j][l] * hp[j][l];
                                }
                            }
                            r[2 * a + i] += wts.hess * w * acc;
                        }
                    }
                }
            }
        }
        [ew, ephi, eh, if clamped { 1.0 } else { 0.0 }]
    }

    /// Physical basis gradients and Hessians on both sides of interior edge `i` at edge point `p`.
    fn edge_basis(&self, i: usize, p: usize, s: &mut Scratch) {
        let space = &*self.space;
        let e = &space.edges().interior[i];
        let (gp, gm) = (space.geometry(e.plus), space.geometry(e.minus));
        let tp = &self.edge_tabs[e.plus_local][0][p];
        let tm = &self.edge_tabs[e.minus_local][1][p];
        for a in 0..space.n_local() {
            s.dp[a] = gp.grad(&tp.dlam[a]);
            s.dm[a] = gm.grad(&tm.dlam[a]);
            s.hp[a] = gp.hess(&tp.d2lam[a]);
            s.hm[a] = gm.hess(&tm.d2lam[a]);
        }
    }

    /// Edge terms of interior edge `i`: `[consistency, ∫|[∇u]|²/h_e]`.
    fn edge(&self, i: usize, coeffs: &[f64], mut res: Option<(&mut [f64], &Weights)>, s: &mut Scratch) -> [f64; 2] {
        let space = &*self.space;
        let nloc = space.n_local();
        let e = &space.edges().interior[i];
        let n = e.normal;
        space.gather(e.plus, coeffs, &mut s.u);
        space.gather(e.minus, coeffs, &mut s.v);
        if let Some((r, _)) = res.as_mut() {
            r.iter_mut().for_each(|x| *x = 0.0);
        }
        let (mut cons, mut pen) = (0.0, 0.0);
        let alpha = self.params.alpha;
        for (p, &wq) in self.edge_rule.weights.iter().enumerate() {
            let w = wq * e.length;
            self.edge_basis(i, p, s);
            let (jump, avg) = jump_and_average(&s.u, &s.v, s);
            // {h}·([g] ⊗ n)
            let mut c = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    c += jump[a][b] * (avg[a][b][0] * n[0] + avg[a][b][1] * n[1]);
                }
            }
            cons -= w * c;
            pen += w * crate::tensor::frob_sq(&jump) / e.length;
            if let Some((r, wts)) = res.as_mut() {
                let (r_plus, r_minus) = r.split_at_mut(2 * nloc);
                for (side, rr, sign) in [(0usize, r_plus, 1.0), (1, r_minus, -1.0)] {
                    let (d, hh) = if side == 0 { (&s.dp, &s.hp) } else { (&s.dm, &s.hm) };
                    for a in 0..nloc {
                        let hn = [hh[a][0][0] * n[0] + hh[a][0][1] * n[1], hh[a][1][0] * n[0] + hh[a][1][1] * n[1]];
                        for comp in 0..2 {
                            // δ[g]_{comp,j} = sign·d_a[j]; δ{h}_{comp,j,l} = ½ hh_a[j][l].
                            let mut dc = 0.0;
                            let mut dpen = 0.0;
                            for j in 0..2 {
                                let an = avg[comp][j][0] * n[0] + avg[comp][j][1] * n[1];
                                dc += sign * d[a][j] * an + 0.5 * hn[j] * jump[comp][j];
                                dpen += jump[comp][j] * sign * d[a][j];
                            }
                            rr[2 * a + comp] +=
                                w * (-wts.cons * dc + wts.pen * 2.0 * alpha * dpen / e.length);
                        }
                    }
                }
            }
        }
        [cons, pen]
    }

    /// Lifting `R_h(∇u)` on the broken space of degree `q - 2`, 8 components.
    pub fn lifting(&self, coeffs: &[f64]) -> Result<BrokenField> {
        self.check_len(coeffs)?;
        self.lift_edges(coeffs, None)
    }

    /// Lifting of the jump on a single interior edge.
    pub fn edge_lifting(&self, coeffs: &[f64], edge: usize) -> Result<BrokenField> {
        self.check_len(coeffs)?;
        if edge >= self.space.edges().interior.len() {
            return Err(Error::Space(format!("no interior edge {edge}")));
        }
        self.lift_edges(coeffs, Some(edge))
    }

    fn lift_edges(&self, coeffs: &[f64], only: Option<usize>) -> Result<BrokenField> {
        let space = &*self.space;
        let nl = self.lift_basis.len();
        let mut rhs = BrokenField::zeros(space.n_elements(), self.lift_basis.degree, 8);
        let mut s = Scratch::new(space.n_local());
        for (i, e) in space.edges().interior.iter().enumerate() {
            if only.is_some_and(|o| o != i) {
                continue;
            }
            space.gather(e.plus, coeffs, &mut s.u);
            space.gather(e.minus, coeffs, &mut s.v);
            for (p, &wq) in self.edge_rule.weights.iter().enumerate() {
                let w = wq * e.length;
                self.edge_basis(i, p, &mut s);
                let (jump, _) = jump_and_average(&s.u, &s.v, &s);
                let jn = to_flat3(&crate::tensor::outer(&jump, &e.normal));
                for (k, tab) in [
                    (e.plus, &self.lift_edge_tabs[e.plus_local][0][p]),
                    (e.minus, &self.lift_edge_tabs[e.minus_local][1][p]),
                ] {
                    for a in 0..nl {
                        let node = rhs.node_mut(k, a);
                        for c in 0..8 {
                            node[c] += 0.5 * w * tab.value[a] * jn[c];
                        }
                    }
                }
            }
        }
        Ok(self.apply_mass_inverse(&rhs))
    }

    fn apply_mass_inverse(&self, rhs: &BrokenField) -> BrokenField {
        let space = &*self.space;
        let nl = self.lift_basis.len();
        let mut out = BrokenField::zeros(space.n_elements(), self.lift_basis.degree, 8);
        for k in 0..space.n_elements() {
            let inv_scale = 1.0 / (2.0 * space.geometry(k).area);
            for a in 0..nl {
                let mut acc = [0.0; 8];
                for b in 0..nl {
                    let m = self.lift_mass_inv[a * nl + b] * inv_scale;
                    for (c, x) in rhs.node(k, b).iter().enumerate() {
                        acc[c] += m * x;
                    }
                }
                out.node_mut(k, a).copy_from_slice(&acc);
            }
        }
        out
    }

    /// `Σ_e ∫_e {w}·[∇φ_n ⊗ n_e]` for every DOF `n`: the transpose of the lifting map.
    pub fn lifting_transpose(&self, w: &BrokenField) -> Result<Vec<f64>> {
        self.lifting_transpose_edges(w, None)
    }

    fn lifting_transpose_edges(&self, w: &BrokenField, only: Option<usize>) -> Result<Vec<f64>> {
        let space = &*self.space;
        if w.degree() != self.lift_basis.degree || w.components() != 8 || w.n_elements() != space.n_elements() {
            return Err(Error::Space("lifting-transpose input has the wrong shape".into()));
        }
        let nloc = space.n_local();
        let mut g = vec![0.0; space.n_dofs()];
        let mut s = Scratch::new(nloc);
        let mut wp = [0.0; 8];
        let mut wm = [0.0; 8];
        let mut rp = vec![0.0; 2 * nloc];
        let mut rm = vec![0.0; 2 * nloc];
        for (i, e) in space.edges().interior.iter().enumerate() {
            if only.is_some_and(|o| o != i) {
                continue;
            }
            rp.iter_mut().for_each(|x| *x = 0.0);
            rm.iter_mut().for_each(|x| *x = 0.0);
            let n = e.normal;
            for (p, &wq) in self.edge_rule.weights.iter().enumerate() {
                let wt = wq * e.length;
                self.edge_basis(i, p, &mut s);
                w.value_with(e.plus, &self.lift_edge_tabs[e.plus_local][0][p].value, &mut wp);
                w.value_with(e.minus, &self.lift_edge_tabs[e.minus_local][1][p].value, &mut wm);
                for a in 0..nloc {
                    for comp in 0..2 {
                        let mut sp = 0.0;
                        let mut sm = 0.0;
                        for j in 0..2 {
                            for l in 0..2 {
                                let idx = 4 * comp + 2 * j + l;
                                let avg = 0.5 * (wp[idx] + wm[idx]);
                                sp += avg * s.dp[a][j] * n[l];
                                sm -= avg * s.dm[a][j] * n[l];
                            }
                        }
                        rp[2 * a + comp] += wt * sp;
                        rm[2 * a + comp] += wt * sm;
                    }
                }
            }
            scatter(&mut g, space.element_nodes(e.plus), &rp);
            scatter(&mut g, space.element_nodes(e.minus), &rm);
        }
        Ok(g)
    }

    /// `Σ_e ∫_e {w}·[∇u ⊗ n_e]`, the right side of the lifting identity.
    pub fn jump_moment(&self, coeffs: &[f64], w: &BrokenField) -> Result<f64> {
        self.check_len(coeffs)?;
        let g = self.lifting_transpose(w)?;
        Ok(g.iter().zip(coeffs).map(|(a, b)| a * b).sum())
    }

    /// `∫_e {w}·[∇u ⊗ n_e]` for a single interior edge.
    pub fn edge_jump_moment(&self, coeffs: &[f64], w: &BrokenField, edge: usize) -> Result<f64> {
        self.check_len(coeffs)?;
        let g = self.lifting_transpose_edges(w, Some(edge))?;
        Ok(g.iter().zip(coeffs).map(|(a, b)| a * b).sum())
    }

    /// Elementwise Hessian as a broken field of degree `q - 2`.
    pub fn broken_hessian(&self, coeffs: &[f64]) -> Result<BrokenField> {
        self.check_len(coeffs)?;
        let space = &*self.space;
        let nodes = self.lift_basis.node_barycentric();
        let tabs: Vec<_> = nodes.iter().map(|&l| space.basis().tabulate(l)).collect();
        let mut u = vec![[0.0; 2]; space.n_local()];
        let mut out = BrokenField::zeros(space.n_elements(), self.lift_basis.degree, 8);
        for k in 0..space.n_elements() {
            space.gather(k, coeffs, &mut u);
            for (a, tab) in tabs.iter().enumerate() {
                let h = local_hess(&u, tab, space.geometry(k));
                out.node_mut(k, a).copy_from_slice(&to_flat3(&h));
            }
        }
        Ok(out)
    }

    /// `G_h = ∇_h∇u − R_h(∇u)`.
    pub fn discrete_gradient(&self, coeffs: &[f64]) -> Result<BrokenField> {
        let mut g = self.broken_hessian(coeffs)?;
        g.axpy(-1.0, &self.lifting(coeffs)?);
        Ok(g)
    }

    /// `Σ_e h_e⁻¹ ∫_e |[∇u]|²`.
    pub fn jump_seminorm_sq(&self, coeffs: &[f64]) -> Result<f64> {
        self.check_len(coeffs)?;
        let mut s = Scratch::new(self.space.n_local());
        Ok((0..self.space.edges().interior.len()).map(|i| self.edge(i, coeffs, None, &mut s)[1]).sum())
    }

    /// Action of the jump form `Σ_e h_e⁻¹ ∫_e [∇u]:[∇v]` on every basis function.
    pub fn jump_form_apply(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_len(coeffs)?;
        let w = Weights { w: 0.0, phi: 0.0, hess: 0.0, cons: 0.0, pen: 0.5 / self.params.alpha };
        let space = &*self.space;
        let nloc = space.n_local();
        let mut g = vec![0.0; space.n_dofs()];
        let mut r = vec![0.0; 4 * nloc];
        let mut s = Scratch::new(nloc);
        for (i, e) in space.edges().interior.iter().enumerate() {
            self.edge(i, coeffs, Some((&mut r, &w)), &mut s);
            scatter(&mut g, space.element_nodes(e.plus), &r[..2 * nloc]);
            scatter(&mut g, space.element_nodes(e.minus), &r[2 * nloc..]);
        }
        Ok(g)
    }

    /// Squared broken H² seminorm `Σ_K ∫|∇∇u|² + Σ_e h_e⁻¹ ∫|[∇u]|²`.
    pub fn broken_h2_seminorm_sq(&self, coeffs: &[f64]) -> Result<f64> {
        let b = self.energy(coeffs)?;
        Ok(2.0 * b.hess_term + b.penalty_term / self.params.alpha)
    }

    /// Largest ratio `∫|R_h(∇u)|² / Σ_e h_e⁻¹ ∫|[∇u]|²` over fields with nonzero jumps.
    ///
    /// Block power iteration `x ← B⁺ A x` accelerated by Rayleigh–Ritz on the
    /// iterates, their residual corrections and the previous step (LOBPCG),
    /// where `A` is the lifting Gram form and `B` the jump form.
    pub fn estimate_cr(&self, iters: usize, seed: u64) -> Result<CrEstimate> {
        let space = &*self.space;
        if space.edges().interior.is_empty() {
            return Err(Error::Space("the lifting constant needs at least one interior edge".into()));
        }
        let n = space.n_dofs();
        let m = 4.min(n);
        let diag = self.jump_form_diagonal();
        let apply_a = |x: &[f64]| -> Result<Vec<f64>> { self.lifting_transpose(&self.lifting(x)?) };
        let apply_b = |x: &[f64]| self.jump_form_apply(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut ax: Vec<Vec<f64>> = x.iter().map(|v| apply_a(v)).collect::<Result<_>>()?;
        let mut bx: Vec<Vec<f64>> = x.iter().map(|v| apply_b(v)).collect::<Result<_>>()?;
        let mut p: Vec<Vec<f64>> = Vec::new();
        let mut ap: Vec<Vec<f64>> = Vec::new();
        let mut bp: Vec<Vec<f64>> = Vec::new();
        let mut lambda: Vec<f64> = vec![0.0; m];
        let mut value = 0.0;
        let mut converged = false;
        let mut done = 0;
        for it in 0..iters.max(1) {
            done = it + 1;
            let (mut v, mut av, mut bv) = (x.clone(), ax.clone(), bx.clone());
            if it > 0 {
                for i in 0..x.len() {
                    let r: Vec<f64> = ax[i].iter().zip(&bx[i]).map(|(a, b)| a - lambda[i] * b).collect();
                    let w = pcg(|y| apply_b(y).expect("length checked"), &r, &diag, 1e-2, 40);
                    av.push(apply_a(&w)?);
                    bv.push(apply_b(&w)?);
                    v.push(w);
                }
                v.extend(p.iter().cloned());
                av.extend(ap.iter().cloned());
                bv.extend(bp.iter().cloned());
            }
            for ((vi, ai), bi) in v.iter_mut().zip(av.iter_mut()).zip(bv.iter_mut()) {
                let norm = dot(vi, vi).sqrt();
                if norm > 0.0 {
                    for y in vi.iter_mut().chain(ai.iter_mut()).chain(bi.iter_mut()) {
                        *y /= norm;
                    }
                }
            }
            let k = v.len();
            // Orthonormalize first so jump-free components of large norm cannot
            // pass the B-Gram truncation and turn rounding noise into spurious ratios.
            let ge = nalgebra::SymmetricEigen::new(DMatrix::from_fn(k, k, |i, j| dot(&v[i], &v[j])));
            let emax = ge.eigenvalues.iter().cloned().fold(0.0, f64::max);
            let basis: Vec<usize> = (0..k).filter(|&i| ge.eigenvalues[i] > 1e-14 * emax).collect();
            let t0 = DMatrix::from_fn(k, basis.len(), |r, c| {
                ge.eigenvectors[(r, basis[c])] / ge.eigenvalues[basis[c]].sqrt()
            });
            let ga = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&v[i], &av[j]) + dot(&v[j], &av[i])));
            let gb = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&v[i], &bv[j]) + dot(&v[j], &bv[i])));
            let gb = t0.transpose() * gb * &t0;
            let eb = nalgebra::SymmetricEigen::new((&gb + gb.transpose()) * 0.5);
            let bmax = eb.eigenvalues.iter().cloned().fold(0.0, f64::max);
            let keep: Vec<usize> = (0..basis.len()).filter(|&i| eb.eigenvalues[i] > 1e-10 * bmax).collect();
            if keep.is_empty() {
                return Err(Error::Internal("iterates collapsed onto jump-free fields".into()));
            }
            let t = &t0
                * DMatrix::from_fn(basis.len(), keep.len(), |r, c| {
                    eb.eigenvectors[(r, keep[c])] / eb.eigenvalues[keep[c]].sqrt()
                });
            let reduced = t.transpose() * &ga * &t;
            let reduced = (&reduced + reduced.transpose()) * 0.5;
            let ea = nalgebra::SymmetricEigen::new(reduced);
            let mut order: Vec<usize> = (0..keep.len()).collect();
            order.sort_by(|&a, &b| ea.eigenvalues[b].total_cmp(&ea.eigenvalues[a]));
            let take = m.min(order.len());
            let coef = &t * ea.eigenvectors.select_columns(&order[..take]);
            let combine = |vs: &[Vec<f64>], from: usize, c: usize| -> Vec<f64> {
                let mut out = vec![0.0; n];
                for (j, vj) in vs.iter().enumerate().skip(from) {
                    let a = coef[(j, c)];
                    if a != 0.0 {
                        out.iter_mut().zip(vj).for_each(|(o, y)| *o += a * y);
                    }
                }
                out
            };
            let nx = x.len();
            if it > 0 {
                p = (0..take).map(|c| combine(&v, nx, c)).collect();
                ap = (0..take).map(|c| combine(&av, nx, c)).collect();
                bp = (0..take).map(|c| combine(&bv, nx, c)).collect();
            }
            x = (0..take).map(|c| combine(&v, 0, c)).collect();
            ax = (0..take).map(|c| combine(&av, 0, c)).collect();
            bx = (0..take).map(|c| combine(&bv, 0, c)).collect();
            lambda = order[..take].iter().map(|&i| ea.eigenvalues[i]).collect();
            let prev = value;
            value = lambda[0];
            let res: f64 = ax[0].iter().zip(&bx[0]).map(|(a, b)| (a - value * b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = ax[0].iter().map(|a| a * a).sum::<f64>().sqrt();
            if it > 0 && ((value - prev).abs() <= 1e-13 * value.abs() || res <= 1e-10 * scale) {
                converged = true;
                break;
            }
        }
        Ok(CrEstimate { value, iterations: done, converged })
    }

    fn jump_form_diagonal(&self) -> Vec<f64> {
        let space = &*self.space;
        let mut d = vec![0.0; space.n_dofs()];
        let mut s = Scratch::new(space.n_local());
        for (i, e) in space.edges().interior.iter().enumerate() {
            for (p, &wq) in self.edge_rule.weights.iter().enumerate() {
                let w = wq;
                self.edge_basis(i, p, &mut s);
                for (k, grads) in [(e.plus, &s.dp), (e.minus, &s.dm)] {
                    for (a, &node) in space.element_nodes(k).iter().enumerate() {
                        let v = w * (grads[a][0] * grads[a][0] + grads[a][1] * grads[a][1]);
                        d[2 * node] += v;
                        d[2 * node + 1] += v;
                    }
                }
            }
        }
        let max = d.iter().cloned().fold(0.0, f64::max);
        d.iter().map(|&x| if x > 1e-14 * max { x } else { max.max(1.0) }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Jump of the gradient and average of the Hessian at the current edge point.
fn jump_and_average(up: &[[f64; 2]], um: &[[f64; 2]], s: &Scratch) -> (Mat2, Tensor3) {
    let mut jump = [[0.0; 2]; 2];
    let mut avg = ZERO3;
    for a in 0..up.len() {
        for i in 0..2 {
            for j in 0..2 {
                jump[i][j] += up[a][i] * s.dp[a][j] - um[a][i] * s.dm[a][j];
                for l in 0..2 {
                    avg[i][j][l] += 0.5 * (up[a][i] * s.hp[a][j][l] + um[a][i] * s.hm[a][j][l]);
                }
            }
        }
    }
    (jump, avg)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn scatter(g: &mut [f64], nodes: &[usize], r: &[f64]) {
    for (a, &n) in nodes.iter().enumerate() {
        g[2 * n] += r[2 * a];
        g[2 * n + 1] += r[2 * a + 1];
    }
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// semidefinite operator and a consistent right side, started from zero.
pub fn pcg<A: Fn(&[f64]) -> Vec<f64>>(apply: A, b: &[f64], diag: &[f64], rtol: f64, max_iter: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let bnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return x;
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= rtol * bnorm {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

pub fn assemble_energy(u: &Field, p: &EnergyParams) -> Result<EnergyBreakdown> {
    Assembler::new(u.space(), p.clone())?.energy(u.coeffs())
}

pub fn assemble_gradient(u: &Field, p: &EnergyParams) -> Result<Vec<f64>> {
    Assembler::new(u.space(), p.clone())?.gradient(u.coeffs())
}

pub fn lifting(u: &Field) -> Result<BrokenField> {
    Assembler::new(u.space(), EnergyParams::default())?.lifting(u.coeffs())
}

pub fn discrete_gradient(u: &Field) -> Result<BrokenField> {
    Assembler::new(u.space(), EnergyParams::default())?.discrete_gradient(u.coeffs())
}

pub fn broken_h2_seminorm(u: &Field) -> Result<f64> {
    Ok(Assembler::new(u.space(), EnergyParams::default())?.broken_h2_seminorm_sq(u.coeffs())?.sqrt())
}

pub fn estimate_cr(space: &Arc<Space>, iters: usize) -> Result<f64> {
    Ok(Assembler::new(space, EnergyParams::default())?.estimate_cr(iters, 0x5eed)?.value)
}
