//! Energy minimization with fixed boundary values: Polak–Ribière+ nonlinear
//! conjugate gradients with a strong-Wolfe line search, and incremental
//! loading over a contraction schedule.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{Assembler, EnergyBreakdown, EnergyParams};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, Circle, Point};
use crate::space::{Field, Space};

/// Energies above this value are flagged in the history.
pub const FLAG_ENERGY: f64 = 1e6;

/// A differentiable objective on a flat coefficient vector.
pub trait Objective {
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>> Objective for F {
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub max_iters: usize,
    /// Stop once the free-DOF gradient sup-norm drops below `grad_tol` times its initial value.
    pub grad_tol: f64,
    /// Absolute floor for the stopping threshold.
    pub grad_abs_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_probes: usize,
    pub restart: usize,
    /// Contraction fractions applied in turn, each warm-started from the last.
    pub schedule: Vec<f64>,
    pub log_stride: usize,
    pub seed: u64,
    /// Scale search directions by the inverse diagonal of the elementwise gradient Gram matrix.
    pub precondition: bool,
    pub initial_guess: InitialGuess,
}

/// Start of each continuation stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialGuess {
    /// Previous state plus the harmonic extension of the change in boundary data.
    #[default]
    Harmonic,
    /// Boundary data on fixed nodes, previous state (or zero) elsewhere.
    Boundary,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iters: 20_000,
            grad_tol: 1e-6,
            grad_abs_tol: 1e-10,
            c1: 1e-4,
            c2: 0.4,
            max_probes: 25,
            restart: 200,
            schedule: vec![0.5],
            log_stride: 100,
            seed: 0,
            precondition: true,
            initial_guess: InitialGuess::Harmonic,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Validation { key: format!("solver.{key}"), message });
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return bad("c1", format!("need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}", self.c1, self.c2));
        }
        if self.max_probes == 0 {
            return bad("max_probes", "must be positive".into());
        }
        if self.restart == 0 {
            return bad("restart", "must be positive".into());
        }
        if self.log_stride == 0 {
            return bad("log_stride", "must be positive".into());
        }
        if !(self.grad_tol >= 0.0 && self.grad_abs_tol >= 0.0) {
            return bad("grad_tol", "tolerances must be non-negative".into());
        }
        if self.schedule.is_empty() {
            return bad("schedule", "needs at least one contraction value".into());
        }
        for w in self.schedule.windows(2) {
            if w[1] < w[0] {
                return bad("schedule", format!("must be non-decreasing, got {:?}", self.schedule));
            }
        }
        if self.schedule.iter().any(|&d| !(0.0..1.0).contains(&d)) {
            return bad("schedule", format!("contractions must lie in [0, 1), got {:?}", self.schedule));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub energy: f64,
    pub flagged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Wolfe,
    Fallback,
}

/// Data of one accepted step, enough to re-check the acceptance conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub kind: StepKind,
    pub step: f64,
    pub f0: f64,
    pub f1: f64,
    pub slope0: f64,
    pub slope1: f64,
    pub probes: usize,
}

#[derive(Clone, Debug)]
pub struct MinimizeOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<HistoryEntry>,
    pub steps: Vec<StepRecord>,
    pub message: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub field: Field,
    pub history: Vec<HistoryEntry>,
    pub steps: Vec<StepRecord>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub breakdown: EnergyBreakdown,
    pub contraction: f64,
    pub message: Option<String>,
}

fn sup_free(g: &[f64], free: &[bool]) -> f64 {
    g.iter().zip(free).filter(|(_, &f)| f).fold(0.0, |m, (v, _)| m.max(v.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Probe {
    step: f64,
    f: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct Searcher<'a, O: Objective> {
    obj: &'a O,
    x: &'a [f64],
    d: &'a [f64],
    free: &'a [bool],
    probes: usize,
}

impl<O: Objective> Searcher<'_, O> {
    fn at(&mut self, step: f64) -> Result<Probe> {
        self.probes += 1;
        let mut x = self.x.to_vec();
        for i in 0..x.len() {
            if self.free[i] {
                x[i] += step * self.d[i];
            }
        }
        let (f, g) = self.obj.eval(&x)?;
        let (f, slope) = if f.is_finite() { (f, dot(&g, self.d)) } else { (f64::INFINITY, f64::NAN) };
        Ok(Probe { step, f, slope, x, g })
    }
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, if it lies safely inside the interval.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    if ![fa, da, fb, db].iter().all(|v| v.is_finite()) {
        return None;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let (lo, hi) = (a.min(b), a.max(b));
    let margin = 0.1 * (hi - lo);
    (t.is_finite() && t > lo + margin && t < hi - margin).then_some(t)
}

/// Energy differences below this are rounding noise; there the slope decides.
fn roundoff(f: f64) -> f64 {
    8.0 * f64::EPSILON * f.abs()
}

/// Strong-Wolfe line search; `None` when no acceptable step is found within the probe budget.
fn strong_wolfe<O: Objective>(
    s: &mut Searcher<'_, O>,
    f0: f64,
    d0: f64,
    init: f64,
    cfg: &SolveConfig,
) -> Result<Option<Probe>> {
    let (c1, c2) = (cfg.c1, cfg.c2);
    let noise = roundoff(f0);
    let mut prev = Probe { step: 0.0, f: f0, slope: d0, x: Vec::new(), g: Vec::new() };
    let mut step = init;
    let mut first = true;
    loop {
        if s.probes >= cfg.max_probes {
            return Ok(None);
        }
        let p = s.at(step)?;
        if p.f > f0 + c1 * p.step * d0 + noise || (!first && p.f > prev.f + noise) {
            return zoom(s, f0, d0, prev, p, cfg);
        }
        if p.slope.abs() <= -c2 * d0 {
            return Ok(Some(p));
        }
        if p.slope >= 0.0 {
            return zoom(s, f0, d0, p, prev, cfg);
        }
        first = false;
        step = 2.0 * p.step;
        prev = p;
    }
}

fn zoom<O: Objective>(
    s: &mut Searcher<'_, O>,
    f0: f64,
    d0: f64,
    mut lo: Probe,
    mut hi: Probe,
    cfg: &SolveConfig,
) -> Result<Option<Probe>> {
    let (c1, c2) = (cfg.c1, cfg.c2);
    let noise = roundoff(f0);
    while s.probes < cfg.max_probes {
        let t = cubic_min(lo.step, lo.f, lo.slope, hi.step, hi.f, hi.slope).unwrap_or(0.5 * (lo.step + hi.step));
        if (hi.step - lo.step).abs() <= 1e-14 * lo.step.abs().max(hi.step.abs()) {
            return Ok(None);
        }
        let p = s.at(t)?;
        if p.f > f0 + c1 * p.step * d0 + noise || p.f > lo.f + noise {
            hi = p;
        } else {
            if p.slope.abs() <= -c2 * d0 {
                return Ok(Some(p));
            }
            if p.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    Ok(None)
}

/// Nonlinear conjugate gradients on the entries of `x0` marked free.
/// `precond` holds positive scaling weights for the search direction.
pub fn minimize_objective<O: Objective>(
    obj: &O,
    x0: Vec<f64>,
    free: &[bool],
    precond: Option<&[f64]>,
    cfg: &SolveConfig,
) -> Result<MinimizeOutcome> {
    cfg.validate()?;
    if free.len() != x0.len() {
        return Err(Error::Solver("mask length differs from the coefficient vector".into()));
    }
    let mut x = x0;
    let (mut f, mut g) = obj.eval(&x)?;
    if !f.is_finite() {
        return Err(Error::Solver("initial energy is not finite".into()));
    }
    let project = |g: &[f64]| -> Vec<f64> {
        g.iter()
            .enumerate()
            .map(|(i, &v)| if !free[i] { 0.0 } else { precond.map_or(v, |p| v / p[i]) })
            .collect()
    };
    let g0 = sup_free(&g, free);
    let tol = (cfg.grad_tol * g0).max(cfg.grad_abs_tol);
    let mut z = project(&g);
    let mut d: Vec<f64> = z.iter().map(|v| -v).collect();
    let mut history = vec![HistoryEntry { iteration: 0, energy: f, flagged: f > FLAG_ENERGY }];
    let mut steps = Vec::new();
    let mut last_step: Option<(f64, f64)> = None;
    let mut gnorm = g0;
    let mut message = None;
    let mut converged = gnorm <= tol;
    let mut it = 0;
    while !converged && it < cfg.max_iters {
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = z.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let dmax = sup_free(&d, free);
        let init = match last_step {
            Some((s, prev_slope)) => (s * prev_slope / slope).clamp(1e-10 * s, 1e10 * s.max(1e-12)),
            None => 0.1 / dmax.max(1e-300).max(1.0),
        };
        let mut searcher = Searcher { obj, x: &x, d: &d, free, probes: 0 };
        let found = strong_wolfe(&mut searcher, f, slope, init, cfg)?;
        let wolfe_probes = searcher.probes;
        let (accepted, kind, probes) = match found {
            Some(p) => (Some(p), StepKind::Wolfe, wolfe_probes),
            None => {
                // Steepest descent with halving steps.
                let sd: Vec<f64> = z.iter().map(|v| -v).collect();
                let sd_slope = dot(&g, &sd);
                let mut fb = Searcher { obj, x: &x, d: &sd, free, probes: 0 };
                let mut step = init.max(0.1 / sup_free(&sd, free).max(1.0));
                let mut out = None;
                for _ in 0..60 {
                    let p = fb.at(step)?;
                    if p.f < f {
                        out = Some(p);
                        break;
                    }
                    step *= 0.5;
                }
                let probes = wolfe_probes + fb.probes;
                if out.is_some() {
                    d = sd;
                    slope = sd_slope;
                }
                (out, StepKind::Fallback, probes)
            }
        };
        let Some(p) = accepted else {
            message = Some(format!("no decrease along the steepest-descent direction at iteration {it}"));
            break;
        };
        it += 1;
        steps.push(StepRecord {
            iteration: it,
            kind,
            step: p.step,
            f0: f,
            f1: p.f,
            slope0: slope,
            slope1: p.slope,
            probes,
        });
        last_step = Some((p.step, slope));
        let z_new = project(&p.g);
        let gz_old = dot(&g, &z);
        let beta = if it % cfg.restart == 0 {
            0.0
        } else {
            let num: f64 = p.g.iter().zip(z_new.iter().zip(&z)).map(|(gn, (zn, zo))| gn * (zn - zo)).sum();
            (num / gz_old).max(0.0)
        };
        x = p.x;
        f = p.f;
        g = p.g;
        z = z_new;
        for i in 0..d.len() {
            d[i] = -z[i] + beta * d[i];
        }
        gnorm = sup_free(&g, free);
        converged = gnorm <= tol;
        if it % cfg.log_stride == 0 {
            history.push(HistoryEntry { iteration: it, energy: f, flagged: f > FLAG_ENERGY });
        }
    }
    if history.last().map(|h| h.iteration) != Some(it) {
        history.push(HistoryEntry { iteration: it, energy: f, flagged: f > FLAG_ENERGY });
    }
    if !converged && message.is_none() {
        message = Some(format!("reached {} iterations with gradient norm {gnorm:.3e} (target {tol:.3e})", cfg.max_iters));
    }
    Ok(MinimizeOutcome { x, f, grad_norm: gnorm, iterations: it, converged, history, steps, message })
}

/// Radial contraction of the cells; the outer boundary is held fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub cells: Vec<Circle>,
    /// Contraction fraction per cell, each in `[0, 1)`.
    pub contraction: Vec<f64>,
}

impl BoundaryData {
    pub fn uniform(cells: Vec<Circle>, delta: f64) -> Self {
        let contraction = vec![delta; cells.len()];
        BoundaryData { cells, contraction }
    }

    pub fn value(&self, tag: BoundaryTag, x: Point) -> Result<[f64; 2]> {
        match tag {
            BoundaryTag::Outer => Ok([0.0, 0.0]),
            BoundaryTag::Cell(i) => {
                let (c, d) = match (self.cells.get(i), self.contraction.get(i)) {
                    (Some(c), Some(&d)) => (c, d),
                    _ => return Err(Error::Solver(format!("no boundary data for cell {i}"))),
                };
                Ok([-d * (x[0] - c.center[0]), -d * (x[1] - c.center[1])])
            }
            BoundaryTag::Interior => Err(Error::Solver("boundary value requested for an interior node".into())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dirichlet {
    /// Per coefficient: whether it is held fixed.
    pub fixed: Vec<bool>,
    /// Fixed values (zero on free coefficients).
    pub values: Vec<f64>,
    pub initial: Field,
}

impl Dirichlet {
    pub fn free(&self) -> Vec<bool> {
        self.fixed.iter().map(|f| !f).collect()
    }

    /// Copy of `coeffs` with the fixed entries overwritten by the boundary values.
    pub fn impose(&self, coeffs: &[f64]) -> Vec<f64> {
        coeffs.iter().zip(&self.fixed).zip(&self.values).map(|((&c, &f), &v)| if f { v } else { c }).collect()
    }
}

pub fn apply_dirichlet(space: &Arc<Space>, bd: &BoundaryData) -> Result<Dirichlet> {
    let n = space.n_dofs();
    let mut fixed = vec![false; n];
    let mut values = vec![0.0; n];
    for (node, &on) in space.on_boundary().iter().enumerate() {
        if !on {
            continue;
        }
        let tag = space.node_tags()[node];
        if !tag.is_boundary() {
            let p = space.node_coords()[node];
            return Err(Error::Solver(format!("untagged boundary node {node} at ({}, {})", p[0], p[1])));
        }
        let v = bd.value(tag, space.node_coords()[node])?;
        for c in 0..2 {
            fixed[2 * node + c] = true;
            values[2 * node + c] = v[c];
        }
    }
    let initial = Field::from_coeffs(space, values.clone())?;
    Ok(Dirichlet { fixed, values, initial })
}

/// Element matrices `∫_K ∇φ_a·∇φ_b`, stored `n_local²` per element.
fn element_stiffness(space: &Space) -> Vec<f64> {
    let rule = crate::quadrature::cell_rule(2 * (space.degree() - 1)).expect("degree within limit");
    let tabs = space.tabulate_cell(&rule);
    let n = space.n_local();
    let mut out = vec![0.0; space.n_elements() * n * n];
    for (k, m) in out.chunks_mut(n * n).enumerate() {
        let geo = space.geometry(k);
        for (tab, w) in tabs.iter().zip(&rule.weights) {
            let g: Vec<[f64; 2]> = tab.dlam.iter().map(|d| geo.grad(d)).collect();
            for a in 0..n {
                for b in 0..n {
                    m[a * n + b] += w * 2.0 * geo.area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
    }
    out
}

/// Diagonal of `Σ_K ∫ ∇φ_a·∇φ_a`, repeated for both components and normalized by its mean.
pub fn stiffness_diagonal(space: &Space) -> Vec<f64> {
    let n = space.n_local();
    let mats = element_stiffness(space);
    let mut d = vec![0.0; space.n_dofs()];
    for k in 0..space.n_elements() {
        for (a, &node) in space.element_nodes(k).iter().enumerate() {
            let v = mats[(k * n + a) * n + a];
            d[2 * node] += v;
            d[2 * node + 1] += v;
        }
    }
    let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
    d.iter().map(|&x| if x > 0.0 { x / mean } else { 1.0 }).collect()
}

/// Componentwise harmonic extension: minimizes `∫|∇u|²` over the free
/// coefficients with the fixed ones set to `values`.
pub fn harmonic_extension(space: &Space, fixed: &[bool], values: &[f64]) -> Result<Vec<f64>> {
    let n_dofs = space.n_dofs();
    if fixed.len() != n_dofs || values.len() != n_dofs {
        return Err(Error::Solver("boundary data length differs from the space".into()));
    }
    let n = space.n_local();
    let mats = element_stiffness(space);
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; n_dofs];
        for k in 0..space.n_elements() {
            let nodes = space.element_nodes(k);
            let m = &mats[k * n * n..(k + 1) * n * n];
            for (a, &na) in nodes.iter().enumerate() {
                let (mut y0, mut y1) = (0.0, 0.0);
                for (b, &nb) in nodes.iter().enumerate() {
                    y0 += m[a * n + b] * x[2 * nb];
                    y1 += m[a * n + b] * x[2 * nb + 1];
                }
                y[2 * na] += y0;
                y[2 * na + 1] += y1;
            }
        }
        y
    };
    let masked = |mut y: Vec<f64>| {
        y.iter_mut().zip(fixed).for_each(|(v, &f)| if f { *v = 0.0 });
        y
    };
    let boundary: Vec<f64> = values.iter().zip(fixed).map(|(&v, &f)| if f { v } else { 0.0 }).collect();
    let rhs: Vec<f64> = masked(apply(&boundary)).iter().map(|v| -v).collect();
    let diag = stiffness_diagonal(space);
    let inner = crate::energy::pcg(|x| masked(apply(x)), &rhs, &diag, 1e-10, 10 * n_dofs + 100);
    Ok(inner.iter().zip(&boundary).zip(fixed).map(|((&i, &b), &f)| if f { b } else { i }).collect())
}

/// Minimizes the energy over the free coefficients, starting from `u0`.
pub fn minimize(u0: &Field, fixed: &[bool], params: &EnergyParams, cfg: &SolveConfig) -> Result<SolveResult> {
    let asm = Assembler::new(u0.space(), params.clone())?;
    minimize_with(&asm, u0, fixed, cfg)
}

pub fn minimize_with(asm: &Assembler, u0: &Field, fixed: &[bool], cfg: &SolveConfig) -> Result<SolveResult> {
    let space = u0.space();
    let free: Vec<bool> = fixed.iter().map(|f| !f).collect();
    let obj = |x: &[f64]| asm.energy_and_gradient(x).map(|(e, g)| (e.total, g));
    let pre = cfg.precondition.then(|| stiffness_diagonal(space));
    let out = minimize_objective(&obj, u0.coeffs().to_vec(), &free, pre.as_deref(), cfg)?;
    let breakdown = asm.energy(&out.x)?;
    Ok(SolveResult {
        field: Field::from_coeffs(space, out.x)?,
        history: out.history,
        steps: out.steps,
        converged: out.converged,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        breakdown,
        contraction: f64::NAN,
        message: out.message,
    })
}

/// Solves each stage of `cfg.schedule` in turn, applying the contraction to
/// every cell and warm-starting from the previous stage.
pub fn continuation_solve(
    space: &Arc<Space>,
    cells: &[Circle],
    params: &EnergyParams,
    cfg: &SolveConfig,
) -> Result<Vec<SolveResult>> {
    cfg.validate()?;
    let asm = Assembler::new(space, params.clone())?;
    let mut results: Vec<SolveResult> = Vec::with_capacity(cfg.schedule.len());
    for &delta in &cfg.schedule {
        let bd = BoundaryData::uniform(cells.to_vec(), delta);
        let dir = apply_dirichlet(space, &bd)?;
        // Warm start: previous state plus the harmonic extension of the boundary increment.
        let start = match (cfg.initial_guess, results.last()) {
            (InitialGuess::Boundary, Some(prev)) => Field::from_coeffs(space, dir.impose(prev.field.coeffs()))?,
            (InitialGuess::Boundary, None) => dir.initial.clone(),
            (InitialGuess::Harmonic, Some(prev)) => {
                let old = prev.field.coeffs();
                let step: Vec<f64> = dir.values.iter().zip(old).map(|(v, o)| v - o).collect();
                let ext = harmonic_extension(space, &dir.fixed, &step)?;
                let sum: Vec<f64> = old.iter().zip(&ext).map(|(o, e)| o + e).collect();
                Field::from_coeffs(space, dir.impose(&sum))?
            }
            (InitialGuess::Harmonic, None) => {
                Field::from_coeffs(space, harmonic_extension(space, &dir.fixed, &dir.values)?)?
            }
        };
        let mut r = minimize_with(&asm, &start, &dir.fixed, cfg)?;
        r.contraction = delta;
        results.push(r);
    }
    Ok(results)
}

/// Writes the energy history as `iteration,energy,flagged`.
pub fn write_history_csv<W: Write>(history: &[HistoryEntry], mut w: W) -> Result<()> {
    writeln!(w, "iteration,energy,flagged")?;
    for h in history {
        writeln!(w, "{},{:.16e},{}", h.iteration, h.energy, h.flagged as u8)?;
    }
    Ok(())
}
