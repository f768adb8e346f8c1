//! Multi-well strain energy, interpenetration penalties and the fiber
//! averaging construction behind the strain energy.

use serde::{Deserialize, Serialize};

use crate::tensor::{add2, cofactor, det, frob_sq, scale2, Mat2, ZERO2};

/// Largest exponent passed to `exp` before clamping.
pub const EXP_CLAMP: f64 = 700.0;

/// Multi-well strain energy in terms of the deformation gradient.
pub fn strain_energy(f: &Mat2) -> f64 {
    let i1 = frob_sq(f);
    let j = det(f);
    (5.0 * i1.powi(3) - 9.0 * i1 * i1 - 12.0 * i1 * j * j + 12.0 * j * j + 8.0) / 96.0
}

#[allow(non_snake_case)]
pub fn strain_energy_dF(f: &Mat2) -> Mat2 {
    let i1 = frob_sq(f);
    let j = det(f);
    let a = (15.0 * i1 * i1 - 18.0 * i1 - 12.0 * j * j) * 2.0 / 96.0;
    let b = 24.0 * j * (1.0 - i1) / 96.0;
    add2(&scale2(f, a), &scale2(&cofactor(f), b))
}

/// One-dimensional fiber law whose angular average is [`strain_energy`].
pub fn fiber_energy(lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    l2 * l2 * l2 / 6.0 - l2 * l2 / 4.0 + 1.0 / 12.0
}

pub fn fiber_energy_derivative(lambda: f64) -> f64 {
    lambda.powi(5) - lambda.powi(3)
}

/// Trapezoidal average over fiber directions of the fiber law for principal stretches `(λ1, λ2)`.
pub fn angular_average_energy(l1: f64, l2: f64, n_theta: usize) -> f64 {
    let n = n_theta.max(1);
    let mut s = 0.0;
    for i in 0..n {
        let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        let (c, sn) = (l1 * t.cos(), l2 * t.sin());
        s += fiber_energy((c * c + sn * sn).sqrt());
    }
    s / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Penalty {
    /// `exp(a (b - J))`.
    Exponential { a: f64, b: f64 },
    /// `c0 |F|^(2 m0)`, bounded above by `c0 (|F|^(2 m0) + c1)`.
    Polynomial { c0: f64, m0: u32, c1: f64 },
    None,
}

impl Default for Penalty {
    fn default() -> Self {
        Penalty::Exponential { a: 60.0, b: 0.21 }
    }
}

impl Penalty {
    pub fn polynomial_default() -> Self {
        Penalty::Polynomial { c0: 1.0, m0: 2, c1: 1.0 }
    }

    /// Penalty value and whether the exponent had to be clamped.
    pub fn value(&self, f: &Mat2) -> (f64, bool) {
        match *self {
            Penalty::Exponential { a, b } => {
                let x = a * (b - det(f));
                (x.min(EXP_CLAMP).exp(), x > EXP_CLAMP)
            }
            Penalty::Polynomial { c0, m0, .. } => (c0 * frob_sq(f).powi(m0 as i32), false),
            Penalty::None => (0.0, false),
        }
    }

    #[allow(non_snake_case)]
    pub fn dF(&self, f: &Mat2) -> (Mat2, bool) {
        match *self {
            Penalty::Exponential { a, b } => {
                let x = a * (b - det(f));
                (scale2(&cofactor(f), -a * x.min(EXP_CLAMP).exp()), x > EXP_CLAMP)
            }
            Penalty::Polynomial { c0, m0, .. } => {
                if m0 == 0 {
                    return (ZERO2, false);
                }
                let s = frob_sq(f);
                (scale2(f, c0 * 2.0 * m0 as f64 * s.powi(m0 as i32 - 1)), false)
            }
            Penalty::None => (ZERO2, false),
        }
    }

    /// Upper growth envelope `c0 (|F|^(2 m0) + c1)` for the polynomial penalty.
    pub fn growth_bound(&self, f: &Mat2) -> Option<f64> {
        match *self {
            Penalty::Polynomial { c0, m0, c1 } => Some(c0 * (frob_sq(f).powi(m0 as i32) + c1)),
            _ => None,
        }
    }
}

/// Constant in the lower growth bound `Ŵ(F) ≥ ½|F|² - β`.
pub const COERCIVITY_BETA: f64 = 19.0 / 12.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoercivityReport {
    /// Smallest `Ŵ(F) - (½|F|² - β)` over the samples.
    pub margin: f64,
    pub worst: [f64; 2],
    /// Smallest `Ŵ(F) - (|F|² - β)`; negative values show the bound without the ½ fails.
    pub literal_margin: f64,
    pub literal_worst: [f64; 2],
}

pub fn coercivity_margin(f: &Mat2) -> f64 {
    strain_energy(f) - (0.5 * frob_sq(f) - COERCIVITY_BETA)
}

pub fn literal_coercivity_margin(f: &Mat2) -> f64 {
    strain_energy(f) - (frob_sq(f) - COERCIVITY_BETA)
}

/// Scans diagonal `F = diag(λ1, λ2)` on an `n × n` grid over `[-4, 4]²`,
/// plus the equality point `√2 I` and the identity.
pub fn coercivity_scan(n_samples: usize) -> CoercivityReport {
    let n = n_samples.max(1);
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n * n + 2);
    for i in 0..n {
        for j in 0..n {
            let t = |k: usize| if n == 1 { 0.0 } else { -4.0 + 8.0 * k as f64 / (n - 1) as f64 };
            pts.push([t(i), t(j)]);
        }
    }
    pts.push([2f64.sqrt(); 2]);
    pts.push([1.0, 1.0]);
    let mut r = CoercivityReport {
        margin: f64::INFINITY,
        worst: [0.0; 2],
        literal_margin: f64::INFINITY,
        literal_worst: [0.0; 2],
    };
    for p in pts {
        let f = [[p[0], 0.0], [0.0, p[1]]];
        let m = coercivity_margin(&f);
        if m < r.margin {
            r.margin = m;
            r.worst = p;
        }
        let l = literal_coercivity_margin(&f);
        if l < r.literal_margin {
            r.literal_margin = l;
            r.literal_worst = p;
        }
    }
    r
}
