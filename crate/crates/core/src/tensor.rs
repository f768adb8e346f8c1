//! Fixed-size 2×2 and 2×2×2 tensor helpers.
//!
//! Index conventions: for a displacement gradient `g[i][j] = ∂_j u_i`, and for
//! a second gradient `h[i][j][k] = ∂_j ∂_k u_i`.

pub type Mat2 = [[f64; 2]; 2];
pub type Tensor3 = [[[f64; 2]; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
pub const ZERO2: Mat2 = [[0.0; 2]; 2];
pub const ZERO3: Tensor3 = [[[0.0; 2]; 2]; 2];

#[inline]
pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Cofactor matrix, the derivative of `det` with respect to `m`.
#[inline]
pub fn cofactor(m: &Mat2) -> Mat2 {
    [[m[1][1], -m[1][0]], [-m[0][1], m[0][0]]]
}

#[inline]
pub fn frob_sq(m: &Mat2) -> f64 {
    m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]
}

#[inline]
pub fn dot2(a: &Mat2, b: &Mat2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

#[inline]
pub fn add2(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

#[inline]
pub fn sub2(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]]
}

#[inline]
pub fn scale2(a: &Mat2, s: f64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

#[inline]
pub fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = ZERO2;
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

#[inline]
pub fn dot3(a: &Tensor3, b: &Tensor3) -> f64 {
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                s += a[i][j][k] * b[i][j][k];
            }
        }
    }
    s
}

#[inline]
pub fn norm3_sq(a: &Tensor3) -> f64 {
    dot3(a, a)
}

/// Third-order tensor `(m ⊗ n)_{ijk} = m_{ij} n_k`.
#[inline]
pub fn outer(m: &Mat2, n: &[f64; 2]) -> Tensor3 {
    let mut t = ZERO3;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                t[i][j][k] = m[i][j] * n[k];
            }
        }
    }
    t
}

/// Flattened component index of a third-order tensor entry.
#[inline]
pub fn flat3(i: usize, j: usize, k: usize) -> usize {
    4 * i + 2 * j + k
}

pub fn to_flat3(t: &Tensor3) -> [f64; 8] {
    let mut out = [0.0; 8];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                out[flat3(i, j, k)] = t[i][j][k];
            }
        }
    }
    out
}

pub fn from_flat3(v: &[f64]) -> Tensor3 {
    let mut t = ZERO3;
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                t[i][j][k] = v[flat3(i, j, k)];
            }
        }
    }
    t
}
