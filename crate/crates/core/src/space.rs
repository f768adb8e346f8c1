//! Continuous Lagrange spaces over a mesh and their broken companions.
//!
//! Global node numbering: mesh vertices first, then `q - 1` nodes per mesh
//! edge (ordered from the lower to the higher vertex index), then the
//! element-interior nodes. Displacement coefficients are interleaved
//! `(u_x, u_y)` per node.

use std::fmt;
use std::sync::Arc;

use crate::basis::{ElementGeometry, LagrangeBasis, PointTab};
use crate::error::{Error, Result};
use crate::geometry::{barycentric, build_edges, BoundaryTag, EdgeRef, EdgeSet, Mesh, Point};
use crate::quadrature::{cell_rule, CellRule, EdgeRule};
use crate::tensor::{Mat2, Tensor3, ZERO2, ZERO3};

pub struct Space {
    mesh: Mesh,
    edges: EdgeSet,
    basis: LagrangeBasis,
    geometry: Vec<ElementGeometry>,
    elem_nodes: Vec<usize>,
    node_coords: Vec<Point>,
    node_tags: Vec<BoundaryTag>,
    on_boundary: Vec<bool>,
}

impl fmt::Debug for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Space")
            .field("degree", &self.basis.degree)
            .field("n_elements", &self.mesh.n_triangles())
            .field("n_nodes", &self.node_coords.len())
            .finish()
    }
}

/// Barycentric coordinates of the point at parameter `s` along local edge `e`,
/// which runs from local vertex `e+1` to local vertex `e+2`.
pub fn edge_barycentric(e: usize, s: f64) -> [f64; 3] {
    let mut lam = [0.0; 3];
    lam[(e + 1) % 3] = 1.0 - s;
    lam[(e + 2) % 3] = s;
    lam
}

impl Space {
    pub fn new(mesh: Mesh, degree: usize) -> Result<Arc<Self>> {
        if degree == 0 {
            return Err(Error::Space("continuous spaces need degree ≥ 1".into()));
        }
        let edges = build_edges(&mesh)?;
        let basis = LagrangeBasis::new(degree);
        let q = degree;
        let nloc = basis.len();
        let nv = mesh.n_vertices();
        let n_edge_nodes = q - 1;
        let n_int = nloc - 3 - 3 * n_edge_nodes;
        let int_base = nv + edges.n_edges() * n_edge_nodes;
        let n_nodes = int_base + mesh.n_triangles() * n_int;

        let geometry: Vec<_> =
            (0..mesh.n_triangles()).map(|k| ElementGeometry::new(mesh.triangle_points(k))).collect();
        let node_bary = basis.node_barycentric();
        let mut elem_nodes = Vec::with_capacity(mesh.n_triangles() * nloc);
        let mut node_coords = vec![[f64::NAN; 2]; n_nodes];
        let mut node_tags = vec![BoundaryTag::Interior; n_nodes];
        let mut on_boundary = vec![false; n_nodes];
        for v in 0..nv {
            node_tags[v] = mesh.tags()[v];
        }
        for (k, tri) in mesh.triangles().iter().enumerate() {
            let pts = mesh.triangle_points(k);
            for (i, lam) in node_bary.iter().enumerate() {
                let global = if i < 3 {
                    tri[i]
                } else if i < 3 + 3 * n_edge_nodes {
                    let e = (i - 3) / n_edge_nodes;
                    let m = (i - 3) % n_edge_nodes + 1;
                    let (a, b) = (tri[(e + 1) % 3], tri[(e + 2) % 3]);
                    let r = edges.element_edges[k][e];
                    let base = nv + edges.global_index(r) * n_edge_nodes;
                    let g = if a < b { base + m - 1 } else { base + n_edge_nodes - m };
                    if let EdgeRef::Boundary(j) = r {
                        node_tags[g] = edges.boundary[j].tag;
                    }
                    g
                } else {
                    int_base + k * n_int + (i - 3 - 3 * n_edge_nodes)
                };
                elem_nodes.push(global);
                node_coords[global] = [
                    lam[0] * pts[0][0] + lam[1] * pts[1][0] + lam[2] * pts[2][0],
                    lam[0] * pts[0][1] + lam[1] * pts[1][1] + lam[2] * pts[2][1],
                ];
            }
        }
        // Nodes on topological boundary edges: the two vertices plus the edge nodes.
        for be in &edges.boundary {
            let k = be.element;
            let e = be.local;
            let loc = &elem_nodes[k * nloc..(k + 1) * nloc];
            on_boundary[loc[(e + 1) % 3]] = true;
            on_boundary[loc[(e + 2) % 3]] = true;
            for m in 0..n_edge_nodes {
                on_boundary[loc[3 + e * n_edge_nodes + m]] = true;
            }
        }
        Ok(Arc::new(Space { mesh, edges, basis, geometry, elem_nodes, node_coords, node_tags, on_boundary }))
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn edges(&self) -> &EdgeSet {
        &self.edges
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_triangles()
    }

    pub fn n_local(&self) -> usize {
        self.basis.len()
    }

    pub fn element_nodes(&self, k: usize) -> &[usize] {
        let n = self.n_local();
        &self.elem_nodes[k * n..(k + 1) * n]
    }

    pub fn geometry(&self, k: usize) -> &ElementGeometry {
        &self.geometry[k]
    }

    pub fn node_coords(&self) -> &[Point] {
        &self.node_coords
    }

    pub fn node_tags(&self) -> &[BoundaryTag] {
        &self.node_tags
    }

    /// Whether each node lies on a boundary edge of the triangulation.
    pub fn on_boundary(&self) -> &[bool] {
        &self.on_boundary
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&n| self.on_boundary[n]).collect()
    }

    /// Tabulates the element basis at each point of a cell rule.
    pub fn tabulate_cell(&self, rule: &CellRule) -> Vec<PointTab> {
        rule.points.iter().map(|&p| self.basis.tabulate(p)).collect()
    }

    /// Basis tabulated along each local edge, in both traversal directions.
    /// Index `[e][flip]`: `flip` means the parameter runs from local vertex `e+2` to `e+1`.
    pub fn tabulate_edges(&self, rule: &EdgeRule) -> [[Vec<PointTab>; 2]; 3] {
        tabulate_edges_with(&self.basis, rule)
    }

    /// Gathers the element's nodal values as `[node][component]`.
    pub fn gather(&self, k: usize, coeffs: &[f64], out: &mut [[f64; 2]]) {
        for (o, &n) in out.iter_mut().zip(self.element_nodes(k)) {
            *o = [coeffs[2 * n], coeffs[2 * n + 1]];
        }
    }

    /// Barycentric coordinates of a physical point, checking it lies in element `k`.
    pub fn locate_in(&self, k: usize, p: Point) -> Result<[f64; 3]> {
        let lam = barycentric(self.mesh.triangle_points(k), p);
        if lam.iter().any(|&l| l < -1e-10) {
            return Err(Error::PointOutside { element: k, x: p[0], y: p[1] });
        }
        Ok(lam)
    }

    /// Reference cell rule used for L² products of broken fields of degree `d`.
    pub(crate) fn product_rule(d: usize) -> CellRule {
        cell_rule((2 * d).min(crate::quadrature::MAX_DEGREE)).expect("degree within limit")
    }
}

pub(crate) fn tabulate_edges_with(basis: &LagrangeBasis, rule: &EdgeRule) -> [[Vec<PointTab>; 2]; 3] {
    std::array::from_fn(|e| {
        std::array::from_fn(|flip| {
            rule.points
                .iter()
                .map(|&t| basis.tabulate(edge_barycentric(e, if flip == 1 { 1.0 - t } else { t })))
                .collect()
        })
    })
}

/// Value of a vector field from gathered nodal values.
#[inline]
pub fn local_value(u: &[[f64; 2]], tab: &PointTab) -> [f64; 2] {
    let mut v = [0.0; 2];
    for (ua, &phi) in u.iter().zip(&tab.value) {
        v[0] += ua[0] * phi;
        v[1] += ua[1] * phi;
    }
    v
}

/// Displacement gradient `g[i][j] = ∂_j u_i` from gathered nodal values.
#[inline]
pub fn local_grad(u: &[[f64; 2]], tab: &PointTab, geo: &ElementGeometry) -> Mat2 {
    let mut g = ZERO2;
    for (ua, dl) in u.iter().zip(&tab.dlam) {
        let d = geo.grad(dl);
        for i in 0..2 {
            g[i][0] += ua[i] * d[0];
            g[i][1] += ua[i] * d[1];
        }
    }
    g
}

/// Second gradient `h[i][j][k] = ∂_j ∂_k u_i` from gathered nodal values.
#[inline]
pub fn local_hess(u: &[[f64; 2]], tab: &PointTab, geo: &ElementGeometry) -> Tensor3 {
    let mut h = ZERO3;
    for (ua, d2) in u.iter().zip(&tab.d2lam) {
        let hp = geo.hess(d2);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    h[i][j][k] += ua[i] * hp[j][k];
                }
            }
        }
    }
    h
}

/// Displacement field in a continuous vector Lagrange space.
#[derive(Clone)]
pub struct Field {
    space: Arc<Space>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field").field("space", &self.space).field("n_coeffs", &self.coeffs.len()).finish()
    }
}

impl Field {
    pub fn zeros(space: &Arc<Space>) -> Self {
        Field { space: space.clone(), coeffs: vec![0.0; space.n_dofs()] }
    }

    pub fn from_coeffs(space: &Arc<Space>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(Error::Space(format!(
                "coefficient vector has length {}, space expects {}",
                coeffs.len(),
                space.n_dofs()
            )));
        }
        Ok(Field { space: space.clone(), coeffs })
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn node_value(&self, n: usize) -> [f64; 2] {
        [self.coeffs[2 * n], self.coeffs[2 * n + 1]]
    }

    fn gathered(&self, k: usize) -> Vec<[f64; 2]> {
        let mut u = vec![[0.0; 2]; self.space.n_local()];
        self.space.gather(k, &self.coeffs, &mut u);
        u
    }

    /// Values of the field at physical points of element `k`.
    pub fn eval(&self, k: usize, points: &[Point]) -> Result<Vec<[f64; 2]>> {
        let u = self.gathered(k);
        points
            .iter()
            .map(|&p| {
                let lam = self.space.locate_in(k, p)?;
                Ok(local_value(&u, &self.space.basis.tabulate(lam)))
            })
            .collect()
    }

    pub fn eval_grad(&self, k: usize, points: &[Point]) -> Result<Vec<Mat2>> {
        let u = self.gathered(k);
        let geo = self.space.geometry(k);
        points
            .iter()
            .map(|&p| {
                let lam = self.space.locate_in(k, p)?;
                Ok(local_grad(&u, &self.space.basis.tabulate(lam), geo))
            })
            .collect()
    }

    pub fn eval_hess(&self, k: usize, points: &[Point]) -> Result<Vec<Tensor3>> {
        let u = self.gathered(k);
        let geo = self.space.geometry(k);
        points
            .iter()
            .map(|&p| {
                let lam = self.space.locate_in(k, p)?;
                Ok(local_hess(&u, &self.space.basis.tabulate(lam), geo))
            })
            .collect()
    }

    /// Gradient at barycentric coordinates of element `k`, without a containment check.
    pub fn grad_at(&self, k: usize, lam: [f64; 3]) -> Mat2 {
        local_grad(&self.gathered(k), &self.space.basis.tabulate(lam), self.space.geometry(k))
    }
}

/// Nodal interpolant of `g`.
pub fn interpolate<G: Fn(Point) -> [f64; 2]>(space: &Arc<Space>, g: G) -> Result<Field> {
    let mut coeffs = vec![0.0; space.n_dofs()];
    for (n, &x) in space.node_coords.iter().enumerate() {
        let v = g(x);
        if !(v[0].is_finite() && v[1].is_finite()) {
            return Err(Error::NonFinite { node: n });
        }
        coeffs[2 * n] = v[0];
        coeffs[2 * n + 1] = v[1];
    }
    Field::from_coeffs(space, coeffs)
}

/// Elementwise Lagrange polynomials with no inter-element continuity.
///
/// Storage is `data[(k * n_local + a) * components + c]` for element `k`,
/// local basis function `a` and component `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrokenField {
    degree: usize,
    components: usize,
    n_elements: usize,
    n_local: usize,
    data: Vec<f64>,
}

impl BrokenField {
    pub fn zeros(n_elements: usize, degree: usize, components: usize) -> Self {
        let n_local = crate::basis::n_local(degree);
        BrokenField { degree, components, n_elements, n_local, data: vec![0.0; n_elements * n_local * components] }
    }

    /// Elementwise nodal interpolant: `f(k, λ)` returns the components at local node `λ` of element `k`.
    pub fn from_element_fn<F: Fn(usize, [f64; 3]) -> Vec<f64>>(
        n_elements: usize,
        degree: usize,
        components: usize,
        f: F,
    ) -> Self {
        let mut b = BrokenField::zeros(n_elements, degree, components);
        let nodes = LagrangeBasis::new(degree).node_barycentric();
        for k in 0..n_elements {
            for (a, &lam) in nodes.iter().enumerate() {
                let v = f(k, lam);
                b.node_mut(k, a).copy_from_slice(&v[..components]);
            }
        }
        b
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn element(&self, k: usize) -> &[f64] {
        let s = self.n_local * self.components;
        &self.data[k * s..(k + 1) * s]
    }

    pub fn element_mut(&mut self, k: usize) -> &mut [f64] {
        let s = self.n_local * self.components;
        &mut self.data[k * s..(k + 1) * s]
    }

    pub fn node(&self, k: usize, a: usize) -> &[f64] {
        let i = (k * self.n_local + a) * self.components;
        &self.data[i..i + self.components]
    }

    pub fn node_mut(&mut self, k: usize, a: usize) -> &mut [f64] {
        let i = (k * self.n_local + a) * self.components;
        &mut self.data[i..i + self.components]
    }

    /// Components at a point given by a tabulation of the degree-`degree` basis.
    pub fn value_with(&self, k: usize, values: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let el = self.element(k);
        for (a, &phi) in values.iter().enumerate() {
            for c in 0..self.components {
                out[c] += el[a * self.components + c] * phi;
            }
        }
    }

    pub fn eval(&self, k: usize, lam: [f64; 3]) -> Vec<f64> {
        let tab = LagrangeBasis::new(self.degree).tabulate(lam);
        let mut out = vec![0.0; self.components];
        self.value_with(k, &tab.value, &mut out);
        out
    }

    pub fn axpy(&mut self, a: f64, other: &BrokenField) {
        assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    /// L² inner product over the mesh.
    pub fn inner(&self, other: &BrokenField, space: &Space) -> f64 {
        assert_eq!((self.degree, self.components), (other.degree, other.components));
        if self.degree == 0 {
            return (0..self.n_elements)
                .map(|k| {
                    let s: f64 = self.element(k).iter().zip(other.element(k)).map(|(a, b)| a * b).sum();
                    s * space.geometry(k).area
                })
                .sum();
        }
        let rule = Space::product_rule(self.degree);
        let basis = LagrangeBasis::new(self.degree);
        let tabs: Vec<_> = rule.points.iter().map(|&p| basis.tabulate(p)).collect();
        let mut a = vec![0.0; self.components];
        let mut b = vec![0.0; self.components];
        let mut total = 0.0;
        for k in 0..self.n_elements {
            let scale = 2.0 * space.geometry(k).area;
            for (tab, w) in tabs.iter().zip(&rule.weights) {
                self.value_with(k, &tab.value, &mut a);
                other.value_with(k, &tab.value, &mut b);
                total += w * scale * a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        total
    }

    pub fn norm_sq(&self, space: &Space) -> f64 {
        self.inner(self, space)
    }
}

/// Broken nodal field carrying each element's own copy of a continuous field.
pub fn broken_copy(field: &Field) -> BrokenField {
    let space = field.space();
    let mut b = BrokenField::zeros(space.n_elements(), space.degree(), 2);
    for k in 0..space.n_elements() {
        for (a, &n) in space.element_nodes(k).iter().enumerate() {
            b.node_mut(k, a).copy_from_slice(&field.coeffs()[2 * n..2 * n + 2]);
        }
    }
    b
}

/// Node-averaging reconstruction: each shared node receives the arithmetic
/// mean of the values the adjacent elements assign to it.
pub fn reconstruct(space: &Arc<Space>, broken: &BrokenField) -> Result<Field> {
    if broken.degree() != space.degree() || broken.components() != 2 {
        return Err(Error::Space(format!(
            "reconstruction needs a degree-{} two-component broken field, got degree {} with {} components",
            space.degree(),
            broken.degree(),
            broken.components()
        )));
    }
    if broken.n_elements() != space.n_elements() {
        return Err(Error::Space("broken field element count mismatch".into()));
    }
    let mut sum = vec![0.0; space.n_dofs()];
    let mut count = vec![0usize; space.n_nodes()];
    for k in 0..space.n_elements() {
        for (a, &n) in space.element_nodes(k).iter().enumerate() {
            let v = broken.node(k, a);
            sum[2 * n] += v[0];
            sum[2 * n + 1] += v[1];
            count[n] += 1;
        }
    }
    for (n, &c) in count.iter().enumerate() {
        sum[2 * n] /= c as f64;
        sum[2 * n + 1] /= c as f64;
    }
    Field::from_coeffs(space, sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_mesh, Circle, DomainSpec};
    use crate::quadrature::edge_rule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(n: usize, q: usize) -> Arc<Space> {
        Space::new(Mesh::structured_rectangle([0.0, 0.0], [1.0, 1.0], n, n).unwrap(), q).unwrap()
    }

    #[test]
    fn dof_counts() {
        let s = square(2, 2);
        // 9 vertices + 16 edges.
        assert_eq!(s.n_nodes(), 25);
        let s3 = square(2, 3);
        // 9 + 2·16 + 8 interior.
        assert_eq!(s3.n_nodes(), 49);
        assert!(s3.node_coords().iter().all(|p| p[0].is_finite()));
    }

    #[test]
    fn boundary_nodes_are_tagged() {
        let s = square(3, 2);
        for (n, &b) in s.on_boundary().iter().enumerate() {
            let p = s.node_coords()[n];
            let geometric = p[0].abs() < 1e-14 || p[1].abs() < 1e-14 || (p[0] - 1.0).abs() < 1e-14 || (p[1] - 1.0).abs() < 1e-14;
            assert_eq!(b, geometric);
            assert_eq!(s.node_tags()[n].is_boundary(), geometric);
        }
    }

    #[test]
    fn affine_reproduction() {
        for q in 1..=3 {
            let s = square(3, q);
            let g = |p: Point| [0.3 + 1.2 * p[0] - 0.4 * p[1], -0.7 + 0.1 * p[0] + 2.0 * p[1]];
            let u = interpolate(&s, g).unwrap();
            let rule = cell_rule(4).unwrap();
            for k in 0..s.n_elements() {
                let t = s.mesh().triangle_points(k);
                for lam in &rule.points {
                    let x = [
                        lam[0] * t[0][0] + lam[1] * t[1][0] + lam[2] * t[2][0],
                        lam[0] * t[0][1] + lam[1] * t[1][1] + lam[2] * t[2][1],
                    ];
                    let v = u.eval(k, &[x]).unwrap()[0];
                    let e = g(x);
                    assert!((v[0] - e[0]).abs() < 1e-13 && (v[1] - e[1]).abs() < 1e-13);
                    let gr = u.eval_grad(k, &[x]).unwrap()[0];
                    assert!((gr[0][0] - 1.2).abs() < 1e-12 && (gr[1][1] - 2.0).abs() < 1e-12);
                    let h = u.eval_hess(k, &[x]).unwrap()[0];
                    assert!(crate::tensor::norm3_sq(&h) < 1e-20);
                }
            }
        }
    }

    #[test]
    fn zero_function_gives_zero_coefficients() {
        let s = square(2, 2);
        let u = interpolate(&s, |_| [0.0, 0.0]).unwrap();
        assert!(u.coeffs().iter().all(|&c| c == 0.0));
        assert!(matches!(interpolate(&s, |_| [f64::NAN, 0.0]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn quadratic_hessian() {
        let s = square(3, 2);
        let u = interpolate(&s, |p| [p[0] * p[0], 0.0]).unwrap();
        for k in 0..s.n_elements() {
            let t = s.mesh().triangle_points(k);
            let c = [(t[0][0] + t[1][0] + t[2][0]) / 3.0, (t[0][1] + t[1][1] + t[2][1]) / 3.0];
            let h = u.eval_hess(k, &[c]).unwrap()[0];
            for i in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        let e = if (i, j, l) == (0, 0, 0) { 2.0 } else { 0.0 };
                        assert!((h[i][j][l] - e).abs() < 1e-11);
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = square(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coeffs: Vec<f64> = (0..s.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = Field::from_coeffs(&s, coeffs).unwrap();
        let k = 3;
        let t = s.mesh().triangle_points(k);
        let x = [0.5 * t[0][0] + 0.3 * t[1][0] + 0.2 * t[2][0], 0.5 * t[0][1] + 0.3 * t[1][1] + 0.2 * t[2][1]];
        let g = u.eval_grad(k, &[x]).unwrap()[0];
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let vp = u.eval(k, &[xp]).unwrap()[0];
            let vm = u.eval(k, &[xm]).unwrap()[0];
            for i in 0..2 {
                let fd = (vp[i] - vm[i]) / (2.0 * h);
                assert!((fd - g[i][j]).abs() <= 1e-8 * fd.abs().max(1.0), "{fd} vs {}", g[i][j]);
            }
        }
    }

    #[test]
    fn point_outside_rejected() {
        let s = square(2, 2);
        let u = Field::zeros(&s);
        assert!(matches!(u.eval(0, &[[5.0, 5.0]]), Err(Error::PointOutside { .. })));
    }

    #[test]
    fn traces_agree_across_interior_edges() {
        let spec = DomainSpec::disk(3.0, vec![Circle { center: [0.2, 0.0], radius: 1.0 }], 0.6);
        for q in 2..=3 {
            let s = Space::new(generate_mesh(&spec).unwrap(), q).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let coeffs: Vec<f64> = (0..s.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u = Field::from_coeffs(&s, coeffs).unwrap();
            let rule = edge_rule(2 * q).unwrap();
            let tabs = s.tabulate_edges(&rule);
            let mut up = vec![[0.0; 2]; s.n_local()];
            let mut um = vec![[0.0; 2]; s.n_local()];
            for e in &s.edges().interior {
                s.gather(e.plus, u.coeffs(), &mut up);
                s.gather(e.minus, u.coeffs(), &mut um);
                for qp in 0..rule.points.len() {
                    let a = local_value(&up, &tabs[e.plus_local][0][qp]);
                    let b = local_value(&um, &tabs[e.minus_local][1][qp]);
                    assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn nodal_reproduction() {
        let s = square(3, 2);
        let g = |p: Point| [p[0].sin() * p[1].exp(), (3.0 * p[1]).cos()];
        let u = interpolate(&s, g).unwrap();
        let nodes = s.basis().node_barycentric();
        for k in 0..s.n_elements() {
            let t = s.mesh().triangle_points(k);
            for lam in &nodes {
                let x = [
                    lam[0] * t[0][0] + lam[1] * t[1][0] + lam[2] * t[2][0],
                    lam[0] * t[0][1] + lam[1] * t[1][1] + lam[2] * t[2][1],
                ];
                let v = u.eval(k, &[x]).unwrap()[0];
                let e = g(x);
                assert!((v[0] - e[0]).abs() < 1e-14 && (v[1] - e[1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reconstruction_of_continuous_field_is_identity() {
        let s = square(3, 2);
        let u = interpolate(&s, |p| [p[0] * p[1], p[1] * p[1] - p[0]]).unwrap();
        let q = reconstruct(&s, &broken_copy(&u)).unwrap();
        for (a, b) in q.coeffs().iter().zip(u.coeffs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn reconstruction_averages_two_elements() {
        let mesh = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![BoundaryTag::Outer; 4],
            None,
        )
        .unwrap();
        let s = Space::new(mesh, 1).unwrap();
        let (a, b) = (2.0, 5.0);
        let broken = BrokenField::from_element_fn(2, 1, 2, |k, _| vec![if k == 0 { a } else { b }; 2]);
        let q = reconstruct(&s, &broken).unwrap();
        for n in [0, 2] {
            assert_eq!(q.node_value(n), [(a + b) / 2.0; 2]);
        }
        assert_eq!(q.node_value(1), [a; 2]);
        assert_eq!(q.node_value(3), [b; 2]);
        let wrong = BrokenField::zeros(2, 2, 2);
        assert!(reconstruct(&s, &wrong).is_err());
    }
}
