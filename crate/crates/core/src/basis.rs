//! Lagrange basis of arbitrary degree on a triangle, written in barycentric
//! coordinates. Derivatives are with respect to the three barycentric
//! coordinates treated as independent variables; the chain rule through the
//! constant gradients of the barycentric coordinates gives physical derivatives.

/// Lattice indices `(a0, a1, a2)` with `a0 + a1 + a2 = degree`, ordered as:
/// the three vertices, then `degree - 1` nodes along each local edge `e`
/// (edge `e` runs from local vertex `e+1` to `e+2`), then interior nodes.
pub fn lattice(degree: usize) -> Vec<[usize; 3]> {
    let q = degree;
    if q == 0 {
        return vec![[0, 0, 0]];
    }
    let mut out = vec![[q, 0, 0], [0, q, 0], [0, 0, q]];
    for e in 0..3 {
        let (a, b) = ((e + 1) % 3, (e + 2) % 3);
        for m in 1..q {
            let mut idx = [0; 3];
            idx[a] = q - m;
            idx[b] = m;
            out.push(idx);
        }
    }
    for i in 1..q {
        for j in 1..q - i {
            let k = q - i - j;
            if k >= 1 {
                out.push([i, j, k]);
            }
        }
    }
    out
}

pub fn n_local(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Value and first two derivatives of the basis at one barycentric point.
#[derive(Clone, Debug)]
pub struct PointTab {
    pub value: Vec<f64>,
    pub dlam: Vec<[f64; 3]>,
    pub d2lam: Vec<[[f64; 3]; 3]>,
}

#[derive(Clone, Debug)]
pub struct LagrangeBasis {
    pub degree: usize,
    pub nodes: Vec<[usize; 3]>,
}

impl LagrangeBasis {
    pub fn new(degree: usize) -> Self {
        LagrangeBasis { degree, nodes: lattice(degree) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Barycentric coordinates of the local nodes (the centroid for degree 0).
    pub fn node_barycentric(&self) -> Vec<[f64; 3]> {
        if self.degree == 0 {
            return vec![[1.0 / 3.0; 3]];
        }
        let q = self.degree as f64;
        self.nodes.iter().map(|n| [n[0] as f64 / q, n[1] as f64 / q, n[2] as f64 / q]).collect()
    }

    /// `P_a(t) = Π_{m<a} (q t - m) / (m + 1)` and its first two derivatives.
    fn factor(&self, a: usize, t: f64) -> [f64; 3] {
        let q = self.degree as f64;
        let (mut p, mut dp, mut ddp) = (1.0, 0.0, 0.0);
        for m in 0..a {
            let f = (q * t - m as f64) / (m as f64 + 1.0);
            let df = q / (m as f64 + 1.0);
            ddp = ddp * f + 2.0 * dp * df;
            dp = dp * f + p * df;
            p *= f;
        }
        [p, dp, ddp]
    }

    pub fn tabulate(&self, lam: [f64; 3]) -> PointTab {
        let n = self.len();
        let mut tab = PointTab {
            value: vec![0.0; n],
            dlam: vec![[0.0; 3]; n],
            d2lam: vec![[[0.0; 3]; 3]; n],
        };
        for (i, node) in self.nodes.iter().enumerate() {
            let f = [
                self.factor(node[0], lam[0]),
                self.factor(node[1], lam[1]),
                self.factor(node[2], lam[2]),
            ];
            tab.value[i] = f[0][0] * f[1][0] * f[2][0];
            for d in 0..3 {
                let (o1, o2) = ((d + 1) % 3, (d + 2) % 3);
                tab.dlam[i][d] = f[d][1] * f[o1][0] * f[o2][0];
                tab.d2lam[i][d][d] = f[d][2] * f[o1][0] * f[o2][0];
                for e in 0..3 {
                    if e != d {
                        let o = 3 - d - e;
                        tab.d2lam[i][d][e] = f[d][1] * f[e][1] * f[o][0];
                    }
                }
            }
        }
        tab
    }
}

/// Affine map data of a physical triangle.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    pub area: f64,
    /// Physical gradients of the three barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(p: [[f64; 2]; 3]) -> Self {
        let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let mut g = [[0.0; 2]; 3];
        for (i, gi) in g.iter_mut().enumerate() {
            let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
            *gi = [(a[1] - b[1]) / area2, (b[0] - a[0]) / area2];
        }
        ElementGeometry { area: 0.5 * area2, grad_lambda: g }
    }

    #[inline]
    pub fn grad(&self, dlam: &[f64; 3]) -> [f64; 2] {
        let g = &self.grad_lambda;
        [
            dlam[0] * g[0][0] + dlam[1] * g[1][0] + dlam[2] * g[2][0],
            dlam[0] * g[0][1] + dlam[1] * g[1][1] + dlam[2] * g[2][1],
        ]
    }

    #[inline]
    pub fn hess(&self, d2: &[[f64; 3]; 3]) -> [[f64; 2]; 2] {
        let g = &self.grad_lambda;
        let mut h = [[0.0; 2]; 2];
        for (d, row) in d2.iter().enumerate() {
            for (e, &c) in row.iter().enumerate() {
                if c != 0.0 {
                    for j in 0..2 {
                        for k in 0..2 {
                            h[j][k] += c * g[d][j] * g[e][k];
                        }
                    }
                }
            }
        }
        h
    }
}
