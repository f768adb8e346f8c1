//! Gauss rules on the unit interval and collapsed (Duffy) Gauss rules on the
//! reference triangle `{(ξ, η) : ξ, η ≥ 0, ξ + η ≤ 1}`.

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 20;

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Quadrature on the reference triangle: barycentric points, weights summing to 1/2.
#[derive(Clone, Debug)]
pub struct CellRule {
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Quadrature on `[0, 1]`: weights sum to 1.
#[derive(Clone, Debug)]
pub struct EdgeRule {
    pub degree: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Triangle rule exact for total degree `degree`.
pub fn cell_rule(degree: usize) -> Result<CellRule> {
    if degree > MAX_DEGREE {
        return Err(Error::QuadratureDegree(degree));
    }
    // The collapsed coordinate carries an extra Jacobian factor (1 - u).
    let nu = (degree + 2).div_ceil(2);
    let nv = degree / 2 + 1;
    let (xu, wu) = gauss_legendre(nu);
    let (xv, wv) = gauss_legendre(nv);
    let mut points = Vec::with_capacity(nu * nv);
    let mut weights = Vec::with_capacity(nu * nv);
    for (&u, &a) in xu.iter().zip(&wu) {
        for (&v, &b) in xv.iter().zip(&wv) {
            let xi = u;
            let eta = (1.0 - u) * v;
            points.push([1.0 - xi - eta, xi, eta]);
            weights.push(a * b * (1.0 - u));
        }
    }
    Ok(CellRule { degree, points, weights })
}

/// Interval rule exact for degree `degree`.
pub fn edge_rule(degree: usize) -> Result<EdgeRule> {
    if degree > MAX_DEGREE {
        return Err(Error::QuadratureDegree(degree));
    }
    let (points, weights) = gauss_legendre(degree / 2 + 1);
    Ok(EdgeRule { degree, points, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    // ∫_T ξ^a η^b = a! b! / (a + b + 2)!
    fn monomial_exact(a: usize, b: usize) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn triangle_rules_integrate_monomials() {
        for deg in 0..=MAX_DEGREE {
            let r = cell_rule(deg).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for a in 0..=deg {
                for b in 0..=deg - a {
                    let q: f64 = r
                        .points
                        .iter()
                        .zip(&r.weights)
                        .map(|(p, w)| w * p[1].powi(a as i32) * p[2].powi(b as i32))
                        .sum();
                    let e = monomial_exact(a, b);
                    assert!((q - e).abs() <= 1e-13 * e.max(1e-3), "deg {deg} ({a},{b})");
                }
            }
        }
    }

    #[test]
    fn reference_area_and_quadratic() {
        let r = cell_rule(2).unwrap();
        let area: f64 = r.weights.iter().sum();
        assert!((area - 0.5).abs() < 1e-15);
        let q: f64 = r
            .points
            .iter()
            .zip(&r.weights)
            .map(|(p, w)| w * (p[1] * p[1] + p[1] * p[2]))
            .sum();
        assert!((q - (1.0 / 12.0 + 1.0 / 24.0)).abs() < 1e-15);
    }

    #[test]
    fn edge_rules_integrate_monomials() {
        for deg in 0..=MAX_DEGREE {
            let r = edge_rule(deg).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for a in 0..=deg {
                let q: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x.powi(a as i32)).sum();
                assert!((q - 1.0 / (a as f64 + 1.0)).abs() < 1e-14, "deg {deg} a {a}");
            }
        }
        let mid = edge_rule(1).unwrap();
        assert_eq!(mid.points.len(), 1);
        assert!((mid.points[0] - 0.5).abs() < 1e-15 && (mid.weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degree_above_limit_rejected() {
        assert!(cell_rule(21).is_err());
        assert!(edge_rule(21).is_err());
    }
}
