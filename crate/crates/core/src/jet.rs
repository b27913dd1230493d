//! Second-order forward-mode jets in two variables.
//!
//! A [`Jet`] carries a value together with its exact gradient and Hessian, so
//! rational expressions such as `(D²u_G)^{-1}` can be differentiated twice
//! without finite differences.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::polytope::{DelzantPolytope, Point};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; 2],
    pub h: [[f64; 2]; 2],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet {
            v,
            g: [0.0; 2],
            h: [[0.0; 2]; 2],
        }
    }

    /// `a0 + a · x` seeded at the evaluation point.
    pub fn affine(value: f64, gradient: [f64; 2]) -> Self {
        Jet {
            v: value,
            g: gradient,
            h: [[0.0; 2]; 2],
        }
    }

    pub fn recip(self) -> Self {
        let inv = 1.0 / self.v;
        let inv2 = inv * inv;
        let mut h = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                h[a][b] = -self.h[a][b] * inv2 + 2.0 * self.g[a] * self.g[b] * inv2 * inv;
            }
        }
        Jet {
            v: inv,
            g: [-self.g[0] * inv2, -self.g[1] * inv2],
            h,
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut h = self.h;
        for a in 0..2 {
            for b in 0..2 {
                h[a][b] += o.h[a][b];
            }
        }
        Jet {
            v: self.v + o.v,
            g: [self.g[0] + o.g[0], self.g[1] + o.g[1]],
            h,
        }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self * -1.0
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut h = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                h[a][b] = self.h[a][b] * o.v
                    + self.g[a] * o.g[b]
                    + self.g[b] * o.g[a]
                    + self.v * o.h[a][b];
            }
        }
        Jet {
            v: self.v * o.v,
            g: [
                self.g[0] * o.v + self.v * o.g[0],
                self.g[1] * o.v + self.v * o.g[1],
            ],
            h,
        }
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, s: f64) -> Jet {
        Jet {
            v: self.v * s,
            g: [self.g[0] * s, self.g[1] * s],
            h: [
                [self.h[0][0] * s, self.h[0][1] * s],
                [self.h[1][0] * s, self.h[1][1] * s],
            ],
        }
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

/// Jets of the entries of `(D²u_G)^{-1}` at an interior point.
pub fn guillemin_inverse_hessian_jet(p: &DelzantPolytope, x: &Point) -> Vec<Vec<Jet>> {
    let d = p.dim();
    let mut g = vec![vec![Jet::constant(0.0); d]; d];
    for f in p.facets() {
        let n = f.normal_f64();
        let inv_ell = Jet::affine(f.ell(x), n).recip();
        for a in 0..d {
            for b in 0..d {
                g[a][b] = g[a][b] + inv_ell * (n[a] * n[b]);
            }
        }
    }
    if d == 1 {
        return vec![vec![g[0][0].recip()]];
    }
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let inv_det = det.recip();
    vec![
        vec![g[1][1] * inv_det, -(g[0][1] * inv_det)],
        vec![-(g[1][0] * inv_det), g[0][0] * inv_det],
    ]
}

/// `Σ_ab ∂_a ∂_b (G^{-1})^{ab}` for the canonical potential, by exact differentiation.
pub fn guillemin_double_divergence(p: &DelzantPolytope, x: &Point) -> f64 {
    let inv = guillemin_inverse_hessian_jet(p, x);
    let d = p.dim();
    let mut s = 0.0;
    for a in 0..d {
        for b in 0..d {
            s += inv[a][b].h[a][b];
        }
    }
    s
}
