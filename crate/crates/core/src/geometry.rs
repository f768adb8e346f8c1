//! Triangulations of matrix domains with circular cell holes.
//!
//! A [`Mesh`] is an immutable, counterclockwise-oriented, conforming
//! triangulation together with per-vertex boundary tags. The edge topology
//! needed by interior-penalty assembly lives in [`EdgeSet`].

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Which part of the boundary a vertex (or boundary edge) belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryTag {
    Interior,
    Outer,
    Cell(usize),
}

impl BoundaryTag {
    pub fn is_boundary(self) -> bool {
        self != BoundaryTag::Interior
    }

    /// Integer code used by the mesh text format: 0 interior, 1 outer, 2+i cell i.
    pub fn code(self) -> usize {
        match self {
            BoundaryTag::Interior => 0,
            BoundaryTag::Outer => 1,
            BoundaryTag::Cell(i) => 2 + i,
        }
    }

    pub fn from_code(code: usize) -> Self {
        match code {
            0 => BoundaryTag::Interior,
            1 => BoundaryTag::Outer,
            c => BoundaryTag::Cell(c - 2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    pub fn project(&self, p: Point) -> Point {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let r = dx.hypot(dy);
        if r == 0.0 {
            return p;
        }
        let s = self.radius / r;
        [self.center[0] + dx * s, self.center[1] + dy * s]
    }

    fn distance_to_curve(&self, p: Point) -> f64 {
        ((p[0] - self.center[0]).hypot(p[1] - self.center[1]) - self.radius).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum OuterShape {
    Disk { center: Point, radius: f64 },
    Rect { min: Point, max: Point },
}

impl OuterShape {
    fn contains(&self, p: Point) -> bool {
        match *self {
            OuterShape::Disk { center, radius } => {
                (p[0] - center[0]).hypot(p[1] - center[1]) < radius
            }
            OuterShape::Rect { min, max } => {
                p[0] > min[0] && p[0] < max[0] && p[1] > min[1] && p[1] < max[1]
            }
        }
    }

    /// Whether a closed disk lies strictly inside.
    fn contains_disk(&self, c: &Circle) -> bool {
        match *self {
            OuterShape::Disk { center, radius } => {
                (c.center[0] - center[0]).hypot(c.center[1] - center[1]) + c.radius < radius
            }
            OuterShape::Rect { min, max } => {
                c.center[0] - c.radius > min[0]
                    && c.center[0] + c.radius < max[0]
                    && c.center[1] - c.radius > min[1]
                    && c.center[1] + c.radius < max[1]
            }
        }
    }

    fn distance_to_curve(&self, p: Point) -> f64 {
        match *self {
            OuterShape::Disk { center, radius } => Circle { center, radius }.distance_to_curve(p),
            OuterShape::Rect { min, max } => {
                let dx = (p[0] - min[0]).abs().min((p[0] - max[0]).abs());
                let dy = (p[1] - min[1]).abs().min((p[1] - max[1]).abs());
                dx.min(dy)
            }
        }
    }
}

/// Geometric description of a matrix domain with embedded cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub outer: OuterShape,
    pub cells: Vec<Circle>,
    /// Target mesh size.
    pub h: f64,
}

impl DomainSpec {
    pub fn disk(radius: f64, cells: Vec<Circle>, h: f64) -> Self {
        DomainSpec { outer: OuterShape::Disk { center: [0.0, 0.0], radius }, cells, h }
    }

    pub fn rect(min: Point, max: Point, cells: Vec<Circle>, h: f64) -> Self {
        DomainSpec { outer: OuterShape::Rect { min, max }, cells, h }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDomain(m));
        if !(self.h.is_finite() && self.h > 0.0) {
            return bad(format!("mesh size h must be positive, got {}", self.h));
        }
        match self.outer {
            OuterShape::Disk { radius, .. } if !(radius > 0.0) => {
                return bad(format!("outer radius must be positive, got {radius}"))
            }
            OuterShape::Rect { min, max } if !(max[0] > min[0] && max[1] > min[1]) => {
                return bad("rectangle max must exceed min in both coordinates".into())
            }
            _ => {}
        }
        for (i, c) in self.cells.iter().enumerate() {
            if !(c.radius > 0.0) {
                return bad(format!("cell {i} has non-positive radius {}", c.radius));
            }
            if self.h > c.radius {
                return bad(format!(
                    "target h = {} exceeds the radius {} of cell {i}",
                    self.h, c.radius
                ));
            }
            if !self.outer.contains_disk(c) {
                return bad(format!("cell {i} is not strictly inside the outer boundary"));
            }
        }
        for i in 0..self.cells.len() {
            for j in i + 1..self.cells.len() {
                let (a, b) = (&self.cells[i], &self.cells[j]);
                let d = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
                if d <= a.radius + b.radius {
                    return bad(format!("cells {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }

    /// Whether `p` is in the open matrix region (inside the outer shape, outside every cell).
    pub fn contains(&self, p: Point) -> bool {
        self.outer.contains(p)
            && self
                .cells
                .iter()
                .all(|c| (p[0] - c.center[0]).hypot(p[1] - c.center[1]) > c.radius)
    }

    /// Nearest boundary curve of `p`.
    pub fn nearest_tag(&self, p: Point) -> BoundaryTag {
        let mut best = (self.outer.distance_to_curve(p), BoundaryTag::Outer);
        for (i, c) in self.cells.iter().enumerate() {
            let d = c.distance_to_curve(p);
            if d < best.0 {
                best = (d, BoundaryTag::Cell(i));
            }
        }
        best.1
    }

    /// Analytic circle carrying a boundary tag, if that boundary is curved.
    pub fn curve(&self, tag: BoundaryTag) -> Option<Circle> {
        match tag {
            BoundaryTag::Cell(i) => self.cells.get(i).copied(),
            BoundaryTag::Outer => match self.outer {
                OuterShape::Disk { center, radius } => Some(Circle { center, radius }),
                OuterShape::Rect { .. } => None,
            },
            BoundaryTag::Interior => None,
        }
    }
}

fn circle_polygon(c: &Circle, h: f64) -> Vec<Point> {
    let n = ((2.0 * PI * c.radius / h).ceil() as usize).max(3);
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            [c.center[0] + c.radius * t.cos(), c.center[1] + c.radius * t.sin()]
        })
        .collect()
}

fn rect_polygon(min: Point, max: Point, h: f64) -> Vec<Point> {
    let nx = ((max[0] - min[0]) / h).ceil().max(1.0) as usize;
    let ny = ((max[1] - min[1]) / h).ceil().max(1.0) as usize;
    let mut pts = Vec::with_capacity(2 * (nx + ny));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    for i in 0..nx {
        pts.push([lerp(min[0], max[0], i as f64 / nx as f64), min[1]]);
    }
    for j in 0..ny {
        pts.push([max[0], lerp(min[1], max[1], j as f64 / ny as f64)]);
    }
    for i in 0..nx {
        pts.push([lerp(max[0], min[0], i as f64 / nx as f64), max[1]]);
    }
    for j in 0..ny {
        pts.push([min[0], lerp(max[1], min[1], j as f64 / ny as f64)]);
    }
    pts
}

/// Signed area of the triangle `(a, b, c)`; positive when counterclockwise.
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Conforming triangulation with boundary tags.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    tags: Vec<BoundaryTag>,
    domain: Option<DomainSpec>,
}

impl Mesh {
    /// Builds a mesh after checking indices, tag count, and positive orientation.
    pub fn new(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        tags: Vec<BoundaryTag>,
        domain: Option<DomainSpec>,
    ) -> Result<Self> {
        if tags.len() != vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} tags for {} vertices",
                tags.len(),
                vertices.len()
            )));
        }
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("triangle {k} references a missing vertex")));
            }
            let a = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if !(a > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {k} has non-positive signed area {a:e}"
                )));
            }
        }
        Ok(Mesh { vertices, triangles, tags, domain })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn tags(&self) -> &[BoundaryTag] {
        &self.tags
    }

    /// The analytic domain this mesh was generated from, when known.
    pub fn domain(&self) -> Option<&DomainSpec> {
        self.domain.as_ref()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_points(&self, k: usize) -> [Point; 3] {
        let t = self.triangles[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn area(&self, k: usize) -> f64 {
        let [a, b, c] = self.triangle_points(k);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|k| self.area(k)).sum()
    }

    /// Uniform `nx × ny` grid on a rectangle, each square split along its
    /// lower-left to upper-right diagonal. All boundary vertices are tagged outer.
    pub fn structured_rectangle(min: Point, max: Point, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidDomain("grid needs at least one cell per direction".into()));
        }
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut tags = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = min[0] + (max[0] - min[0]) * i as f64 / nx as f64;
                let y = min[1] + (max[1] - min[1]) * j as f64 / ny as f64;
                vertices.push([x, y]);
                let on_boundary = i == 0 || j == 0 || i == nx || j == ny;
                tags.push(if on_boundary { BoundaryTag::Outer } else { BoundaryTag::Interior });
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        let h = ((max[0] - min[0]) / nx as f64).max((max[1] - min[1]) / ny as f64);
        let domain = DomainSpec::rect(min, max, Vec::new(), h);
        Mesh::new(vertices, triangles, tags, Some(domain))
    }

    /// Same mesh with triangles reordered: new triangle `i` is old triangle `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_triangles() {
            return Err(Error::InvalidMesh("permutation length mismatch".into()));
        }
        let triangles = order.iter().map(|&k| self.triangles[k]).collect();
        Mesh::new(self.vertices.clone(), triangles, self.tags.clone(), self.domain.clone())
    }
}

/// Generates a conforming, shape-regular triangulation of the matrix region.
///
/// Boundary curves are polygonalized with `ceil(2π r / h)` segments and the
/// interior is filled by constrained Delaunay refinement with a 33° minimum
/// angle and a maximum area of an equilateral triangle of side `h`.
pub fn generate_mesh(spec: &DomainSpec) -> Result<Mesh> {
    spec.validate()?;
    let h = spec.h;
    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> =
        ConstrainedDelaunayTriangulation::new();
    let mut loops = vec![match spec.outer {
        OuterShape::Disk { center, radius } => circle_polygon(&Circle { center, radius }, h),
        OuterShape::Rect { min, max } => rect_polygon(min, max, h),
    }];
    loops.extend(spec.cells.iter().map(|c| circle_polygon(c, h)));
    for poly in &loops {
        cdt.add_constraint_edges(poly.iter().map(|p| Point2::new(p[0], p[1])), true)
            .map_err(|e| Error::InvalidDomain(format!("boundary insertion failed: {e:?}")))?;
    }
    let max_area = 3f64.sqrt() / 4.0 * h * h;
    let params = RefinementParameters::<f64>::new()
        .exclude_outer_faces(true)
        .with_max_allowed_area(max_area)
        .with_angle_limit(spade::AngleLimit::from_deg(33.0))
        .with_max_additional_vertices(20_000_000);
    cdt.refine(params);

    let mut index = vec![usize::MAX; cdt.num_vertices()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        let pos = face.positions();
        let pts = pos.map(|p| [p.x, p.y]);
        let centroid = [
            (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
            (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
        ];
        if !spec.contains(centroid) {
            continue;
        }
        let vs = face.vertices().map(|v| v.fix().index());
        let mut tri = [0usize; 3];
        for (slot, &v) in tri.iter_mut().zip(vs.iter()) {
            if index[v] == usize::MAX {
                index[v] = vertices.len();
                let p = cdt.vertex(spade::handles::FixedVertexHandle::from_index(v)).position();
                vertices.push([p.x, p.y]);
            }
            *slot = index[v];
        }
        if signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]) < 0.0 {
            tri.swap(1, 2);
        }
        triangles.push(tri);
    }
    if triangles.is_empty() {
        return Err(Error::InvalidDomain("mesh generation produced no triangles".into()));
    }
    let mut tags = vec![BoundaryTag::Interior; vertices.len()];
    for (a, b) in topological_boundary_edges(&triangles) {
        for v in [a, b] {
            tags[v] = spec.nearest_tag(vertices[v]);
        }
    }
    // Refinement may split boundary segments; put the Steiner points back on their curve.
    for (p, tag) in vertices.iter_mut().zip(&tags) {
        if let Some(c) = spec.curve(*tag) {
            *p = c.project(*p);
        }
    }
    let mesh = Mesh::new(vertices, triangles, tags, Some(spec.clone()))?;
    build_edges(&mesh)?;
    Ok(mesh)
}

/// Edges adjacent to exactly one triangle, as `(a, b)` in counterclockwise order.
fn topological_boundary_edges(triangles: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut count: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    for t in triangles {
        for e in 0..3 {
            let (a, b) = (t[(e + 1) % 3], t[(e + 2) % 3]);
            count.entry((a.min(b), a.max(b))).or_insert((0, a, b)).0 += 1;
        }
    }
    let mut out: Vec<(usize, usize)> =
        count.values().filter(|c| c.0 == 1).map(|c| (c.1, c.2)).collect();
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteriorEdge {
    /// Endpoints in the counterclockwise order of `plus`.
    pub vertices: [usize; 2],
    /// Adjacent triangle with the smaller index.
    pub plus: usize,
    pub minus: usize,
    /// Local edge index (edge `i` is opposite local vertex `i`) within each neighbor.
    pub plus_local: usize,
    pub minus_local: usize,
    /// Unit normal pointing out of `plus` into `minus`.
    pub normal: [f64; 2],
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub element: usize,
    pub local: usize,
    /// Outward unit normal.
    pub normal: [f64; 2],
    pub length: f64,
    pub tag: BoundaryTag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeRef {
    Interior(usize),
    Boundary(usize),
}

/// Classified edge topology of a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    pub interior: Vec<InteriorEdge>,
    pub boundary: Vec<BoundaryEdge>,
    /// For every triangle, its three local edges.
    pub element_edges: Vec<[EdgeRef; 3]>,
}

impl EdgeSet {
    pub fn n_edges(&self) -> usize {
        self.interior.len() + self.boundary.len()
    }

    /// Global edge number: interior edges first, then boundary edges.
    pub fn global_index(&self, r: EdgeRef) -> usize {
        match r {
            EdgeRef::Interior(i) => i,
            EdgeRef::Boundary(i) => self.interior.len() + i,
        }
    }
}

fn edge_geometry(a: Point, b: Point) -> ([f64; 2], f64) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len = d[0].hypot(d[1]);
    ([d[1] / len, -d[0] / len], len)
}

/// Classifies every triangle edge as interior or boundary.
pub fn build_edges(mesh: &Mesh) -> Result<EdgeSet> {
    let tris = mesh.triangles();
    let verts = mesh.vertices();
    // key -> (first triangle, local edge, optional second)
    let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(tris.len() * 2);
    let mut slots: Vec<(usize, usize, Option<(usize, usize)>)> = Vec::new();
    for (k, t) in tris.iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (t[(e + 1) % 3], t[(e + 2) % 3]);
            if a == b {
                return Err(Error::Topology(format!("triangle {k} is degenerate")));
            }
            let key = (a.min(b), a.max(b));
            match seen.get(&key) {
                None => {
                    seen.insert(key, slots.len());
                    slots.push((k, e, None));
                }
                Some(&s) => {
                    if slots[s].2.is_some() || slots[s].0 == k {
                        return Err(Error::Topology(format!(
                            "edge ({}, {}) is shared by more than two triangles",
                            key.0, key.1
                        )));
                    }
                    slots[s].2 = Some((k, e));
                }
            }
        }
    }

    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    let mut element_edges = vec![[EdgeRef::Interior(usize::MAX); 3]; tris.len()];
    for &(k, e, other) in &slots {
        let t = tris[k];
        let (a, b) = (t[(e + 1) % 3], t[(e + 2) % 3]);
        let (normal, length) = edge_geometry(verts[a], verts[b]);
        match other {
            Some((m, f)) => {
                let tm = tris[m];
                if (tm[(f + 1) % 3], tm[(f + 2) % 3]) != (b, a) {
                    return Err(Error::Topology(format!(
                        "triangles {k} and {m} have inconsistent orientation"
                    )));
                }
                element_edges[k][e] = EdgeRef::Interior(interior.len());
                element_edges[m][f] = EdgeRef::Interior(interior.len());
                interior.push(InteriorEdge {
                    vertices: [a, b],
                    plus: k,
                    minus: m,
                    plus_local: e,
                    minus_local: f,
                    normal,
                    length,
                });
            }
            None => {
                let tags = mesh.tags();
                let tag = if tags[a].is_boundary() { tags[a] } else { tags[b] };
                element_edges[k][e] = EdgeRef::Boundary(boundary.len());
                boundary.push(BoundaryEdge { vertices: [a, b], element: k, local: e, normal, length, tag });
            }
        }
    }
    check_hanging_vertices(verts, &boundary)?;
    Ok(EdgeSet { interior, boundary, element_edges })
}

/// A hanging vertex shows up as a vertex lying strictly inside some boundary edge.
fn check_hanging_vertices(verts: &[Point], boundary: &[BoundaryEdge]) -> Result<()> {
    let mut bverts: Vec<usize> = boundary.iter().flat_map(|e| e.vertices).collect();
    bverts.sort_unstable();
    bverts.dedup();
    bverts.sort_by(|&a, &b| verts[a][0].total_cmp(&verts[b][0]));
    let xs: Vec<f64> = bverts.iter().map(|&v| verts[v][0]).collect();
    for e in boundary {
        let (p, q) = (verts[e.vertices[0]], verts[e.vertices[1]]);
        let tol = 1e-10 * e.length;
        let lo = xs.partition_point(|&x| x < p[0].min(q[0]) - tol);
        let hi = xs.partition_point(|&x| x <= p[0].max(q[0]) + tol);
        for &v in &bverts[lo..hi] {
            if e.vertices.contains(&v) {
                continue;
            }
            let r = verts[v];
            let cross = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
            if cross.abs() > tol * e.length {
                continue;
            }
            let t = ((r[0] - p[0]) * (q[0] - p[0]) + (r[1] - p[1]) * (q[1] - p[1]))
                / (e.length * e.length);
            if t > 1e-10 && t < 1.0 - 1e-10 {
                return Err(Error::Topology(format!(
                    "hanging vertex {v} on edge ({}, {})",
                    e.vertices[0], e.vertices[1]
                )));
            }
        }
    }
    Ok(())
}

/// Red refinement: each triangle is split into four through its edge midpoints.
/// Midpoints of curved boundary edges are projected onto the analytic circle.
pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    let boundary: HashMap<(usize, usize), ()> = topological_boundary_edges(mesh.triangles())
        .into_iter()
        .map(|(a, b)| ((a.min(b), a.max(b)), ()))
        .collect();
    let mut vertices = mesh.vertices.clone();
    let mut tags = mesh.tags.clone();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut triangles = Vec::with_capacity(4 * mesh.n_triangles());
    for t in mesh.triangles() {
        let mut m = [0usize; 3];
        for e in 0..3 {
            let (a, b) = (t[(e + 1) % 3], t[(e + 2) % 3]);
            let key = (a.min(b), a.max(b));
            m[e] = *mid.entry(key).or_insert_with(|| {
                let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
                let mut p = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                let mut tag = BoundaryTag::Interior;
                if boundary.contains_key(&key) {
                    tag = if mesh.tags[a].is_boundary() { mesh.tags[a] } else { mesh.tags[b] };
                    if let Some(c) = mesh.domain.as_ref().and_then(|d| d.curve(tag)) {
                        p = c.project(p);
                    }
                }
                vertices.push(p);
                tags.push(tag);
                vertices.len() - 1
            });
        }
        // m[e] is the midpoint of the edge opposite local vertex e.
        let [a, b, c] = *t;
        triangles.push([a, m[2], m[1]]);
        triangles.push([m[2], b, m[0]]);
        triangles.push([m[1], m[0], c]);
        triangles.push([m[0], m[1], m[2]]);
    }
    // Projection thins the children along curved edges; let the new interior
    // midpoints next to a projected vertex relax to recover element quality.
    let n_old = mesh.n_vertices();
    let projected: Vec<bool> = (0..vertices.len())
        .map(|v| v >= n_old && tags[v].is_boundary() && mesh.domain.as_ref().and_then(|d| d.curve(tags[v])).is_some())
        .collect();
    let mut movable = vec![false; vertices.len()];
    for t in &triangles {
        if t.iter().any(|&v| projected[v]) {
            for &v in t {
                movable[v] = v >= n_old && !tags[v].is_boundary();
            }
        }
    }
    relax_vertices(&mut vertices, &triangles, &movable, 8);
    let domain = mesh.domain.clone().map(|mut d| {
        d.h *= 0.5;
        d
    });
    Mesh::new(vertices, triangles, tags, domain)
}

/// Moves each movable vertex toward the centroid of its neighbours whenever
/// that lowers the worst `h_K² / |K|` of its incident triangles.
fn relax_vertices(vertices: &mut [Point], triangles: &[[usize; 3]], movable: &[bool], sweeps: usize) {
    let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, t) in triangles.iter().enumerate() {
        for &v in t {
            if movable[v] {
                incident.entry(v).or_default().push(k);
            }
        }
    }
    let mut order: Vec<usize> = incident.keys().copied().collect();
    order.sort_unstable();
    let worst = |vs: &[Point], ks: &[usize]| -> f64 {
        ks.iter()
            .map(|&k| {
                let t = triangles[k];
                let p = [vs[t[0]], vs[t[1]], vs[t[2]]];
                if signed_area(p[0], p[1], p[2]) <= 0.0 {
                    return f64::INFINITY;
                }
                let (h, _, _) = triangle_shape(p);
                h * h / signed_area(p[0], p[1], p[2])
            })
            .fold(0.0, f64::max)
    };
    for _ in 0..sweeps {
        for &v in &order {
            let ks = &incident[&v];
            let mut c = [0.0; 2];
            let mut n = 0.0;
            for &k in ks {
                for &w in &triangles[k] {
                    if w != v {
                        c[0] += vertices[w][0];
                        c[1] += vertices[w][1];
                        n += 1.0;
                    }
                }
            }
            let target = [c[0] / n, c[1] / n];
            let old = vertices[v];
            let before = worst(vertices, ks);
            for step in [1.0, 0.5, 0.25] {
                vertices[v] = [old[0] + step * (target[0] - old[0]), old[1] + step * (target[1] - old[1])];
                if worst(vertices, ks) < before {
                    break;
                }
                vertices[v] = old;
            }
        }
    }
}

/// Per-mesh extremes of the shape quantities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeMetrics {
    /// Largest element diameter.
    pub max_h: f64,
    /// Largest diameter-to-inradius ratio.
    pub max_ratio: f64,
    /// Smallest interior angle, in radians.
    pub min_angle: f64,
}

/// Diameter, inradius, and minimum angle of a triangle.
pub fn triangle_shape(p: [Point; 3]) -> (f64, f64, f64) {
    let len = |a: Point, b: Point| (a[0] - b[0]).hypot(a[1] - b[1]);
    let l = [len(p[1], p[2]), len(p[2], p[0]), len(p[0], p[1])];
    let area = signed_area(p[0], p[1], p[2]).abs();
    let perimeter = l[0] + l[1] + l[2];
    let h = l[0].max(l[1]).max(l[2]);
    let rho = 2.0 * area / perimeter;
    let mut min_angle = f64::INFINITY;
    for i in 0..3 {
        let (a, b, c) = (l[i], l[(i + 1) % 3], l[(i + 2) % 3]);
        let cos = ((b * b + c * c - a * a) / (2.0 * b * c)).clamp(-1.0, 1.0);
        min_angle = min_angle.min(cos.acos());
    }
    (h, rho, min_angle)
}

pub fn shape_metrics(mesh: &Mesh) -> ShapeMetrics {
    let mut m = ShapeMetrics { max_h: 0.0, max_ratio: 0.0, min_angle: f64::INFINITY };
    for k in 0..mesh.n_triangles() {
        let (h, rho, ang) = triangle_shape(mesh.triangle_points(k));
        m.max_h = m.max_h.max(h);
        m.max_ratio = m.max_ratio.max(h / rho);
        m.min_angle = m.min_angle.min(ang);
    }
    m
}

/// Writes the plain-text mesh format:
/// `tethermesh 1`, `<nv> <nt>`, then `x y tag` per vertex and `i j k` per triangle.
pub fn write_mesh_text<W: Write>(mesh: &Mesh, mut w: W) -> Result<()> {
    writeln!(w, "tethermesh 1")?;
    writeln!(w, "{} {}", mesh.n_vertices(), mesh.n_triangles())?;
    for (p, t) in mesh.vertices.iter().zip(&mesh.tags) {
        writeln!(w, "{:?} {:?} {}", p[0], p[1], t.code())?;
    }
    for t in &mesh.triangles {
        writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
    }
    Ok(())
}

pub fn read_mesh_text<R: BufRead>(r: R) -> Result<Mesh> {
    let mut lines = r.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(Error::Parse { line: 0, message: format!("unexpected end of file, expected {what}") }),
        }
    };
    let perr = |line: usize, message: String| Error::Parse { line, message };
    let (ln, header) = next("header")?;
    if header.trim() != "tethermesh 1" {
        return Err(perr(ln, format!("bad header `{}`", header.trim())));
    }
    let (ln, counts) = next("counts")?;
    let c: Vec<usize> = counts
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| perr(ln, format!("bad count `{s}`"))))
        .collect::<Result<_>>()?;
    if c.len() != 2 {
        return Err(perr(ln, "expected `<nv> <nt>`".into()));
    }
    let mut vertices = Vec::with_capacity(c[0]);
    let mut tags = Vec::with_capacity(c[0]);
    for _ in 0..c[0] {
        let (ln, l) = next("vertex line")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(perr(ln, "expected `x y tag`".into()));
        }
        let x: f64 = f[0].parse().map_err(|_| perr(ln, format!("bad coordinate `{}`", f[0])))?;
        let y: f64 = f[1].parse().map_err(|_| perr(ln, format!("bad coordinate `{}`", f[1])))?;
        let t: usize = f[2].parse().map_err(|_| perr(ln, format!("bad tag `{}`", f[2])))?;
        vertices.push([x, y]);
        tags.push(BoundaryTag::from_code(t));
    }
    let mut triangles = Vec::with_capacity(c[1]);
    for _ in 0..c[1] {
        let (ln, l) = next("triangle line")?;
        let f: Vec<usize> = l
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| perr(ln, format!("bad index `{s}`"))))
            .collect::<Result<_>>()?;
        if f.len() != 3 {
            return Err(perr(ln, "expected `i j k`".into()));
        }
        triangles.push([f[0], f[1], f[2]]);
    }
    Mesh::new(vertices, triangles, tags, None)
}

/// Bucket grid for locating the triangle containing a point.
pub struct Locator {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    pub fn new(mesh: &Mesh) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in mesh.vertices() {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let n = mesh.n_triangles().max(1) as f64;
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        let cell = extent / n.sqrt().max(1.0);
        let nx = (((hi[0] - lo[0]) / cell).floor() as usize) + 1;
        let ny = (((hi[1] - lo[1]) / cell).floor() as usize) + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for k in 0..mesh.n_triangles() {
            let pts = mesh.triangle_points(k);
            let bx = |v: f64| ((v - lo[0]) / cell).floor().clamp(0.0, (nx - 1) as f64) as usize;
            let by = |v: f64| ((v - lo[1]) / cell).floor().clamp(0.0, (ny - 1) as f64) as usize;
            let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p[0]), a.1.max(p[0])));
            let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p[1]), a.1.max(p[1])));
            for j in by(y0)..=by(y1) {
                for i in bx(x0)..=bx(x1) {
                    buckets[j * nx + i].push(k);
                }
            }
        }
        Locator { origin: lo, cell, nx, ny, buckets }
    }

    /// Triangle containing `p` and the barycentric coordinates of `p` in it.
    pub fn locate(&self, mesh: &Mesh, p: Point) -> Option<(usize, [f64; 3])> {
        let i = ((p[0] - self.origin[0]) / self.cell).floor();
        let j = ((p[1] - self.origin[1]) / self.cell).floor();
        if i < 0.0 || j < 0.0 || i as usize >= self.nx || j as usize >= self.ny {
            return None;
        }
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &k in &self.buckets[j as usize * self.nx + i as usize] {
            let l = barycentric(mesh.triangle_points(k), p);
            let worst = l[0].min(l[1]).min(l[2]);
            if worst >= -1e-12 {
                return Some((k, l));
            }
            if best.as_ref().is_none_or(|b| worst > b.2) {
                best = Some((k, l, worst));
            }
        }
        best.filter(|b| b.2 > -1e-9).map(|b| (b.0, b.1))
    }
}

pub fn barycentric(t: [Point; 3], p: Point) -> [f64; 3] {
    let area = signed_area(t[0], t[1], t[2]);
    let l1 = signed_area(t[0], p, t[2]) / area;
    let l2 = signed_area(t[0], t[1], p) / area;
    [1.0 - l1 - l2, l1, l2]
}
