//! Dense polynomials in one or two variables.
//!
//! A [`Poly`] is stored in local coordinates `ξ = (x - center) / scale` so that
//! high-degree Galerkin bases stay well conditioned on polytopes that sit far
//! from the origin. Derivatives are always reported in the original
//! coordinates.

use serde::{Deserialize, Serialize};

use crate::polytope::Point;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    dim: usize,
    degree: usize,
    center: Point,
    scale: f64,
    /// `coeffs[i * (degree + 1) + j]` multiplies `ξ^i η^j`.
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn zero(dim: usize, degree: usize) -> Self {
        Self::zero_local(dim, degree, [0.0; 2], 1.0)
    }

    pub fn zero_local(dim: usize, degree: usize, center: Point, scale: f64) -> Self {
        assert!(dim == 1 || dim == 2, "polynomials are defined for dim 1 or 2");
        assert!(scale > 0.0);
        Poly {
            dim,
            degree,
            center,
            scale,
            coeffs: vec![0.0; (degree + 1) * (degree + 1)],
        }
    }

    /// Builds `Σ c x^i y^j` in global coordinates from `(i, j, c)` triples.
    pub fn from_terms(dim: usize, terms: &[(usize, usize, f64)]) -> Self {
        let degree = terms.iter().map(|&(i, j, _)| i + j).max().unwrap_or(0);
        let mut p = Poly::zero(dim, degree);
        for &(i, j, c) in terms {
            assert!(dim == 2 || j == 0, "1D polynomial with a y power");
            *p.coeff_mut(i, j) += c;
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i > self.degree || j > self.degree {
            return 0.0;
        }
        self.coeffs[i * (self.degree + 1) + j]
    }

    pub fn coeff_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let d = self.degree;
        &mut self.coeffs[i * (d + 1) + j]
    }

    fn same_frame(&self, other: &Poly) -> bool {
        self.dim == other.dim && self.center == other.center && self.scale == other.scale
    }

    /// The same polynomial expressed in the frame `(center, scale)`.
    pub fn in_frame(&self, center: Point, scale: f64) -> Poly {
        let d = self.degree;
        let mut out = Poly::zero_local(self.dim, d, center, scale);
        // ξ_old = a ξ_new + b
        let a = scale / self.scale;
        let b = [
            (center[0] - self.center[0]) / self.scale,
            if self.dim == 2 { (center[1] - self.center[1]) / self.scale } else { 0.0 },
        ];
        let binom = binomial_table(d);
        // expansion[axis][i][p]: coefficient of ξ_new^p in (a ξ_new + b)^i
        let expansion: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|axis| {
                (0..=d)
                    .map(|i| (0..=i).map(|p| binom[i][p] * a.powi(p as i32) * b[axis].powi((i - p) as i32)).collect())
                    .collect()
            })
            .collect();
        for i in 0..=d {
            for j in 0..=(d - i) {
                let c = self.coeff(i, j);
                if c == 0.0 {
                    continue;
                }
                for (p, ep) in expansion[0][i].iter().enumerate() {
                    for (q, eq) in expansion[1][j].iter().enumerate() {
                        *out.coeff_mut(p, q) += c * ep * eq;
                    }
                }
            }
        }
        out
    }

    /// `self + alpha * other`, in the frame of `self`.
    pub fn axpy(&self, alpha: f64, other: &Poly) -> Poly {
        assert_eq!(self.dim, other.dim, "polynomials of different dimension");
        if !self.same_frame(other) {
            return self.axpy(alpha, &other.in_frame(self.center, self.scale));
        }
        let degree = self.degree.max(other.degree);
        let mut out = Poly::zero_local(self.dim, degree, self.center, self.scale);
        for i in 0..=degree {
            for j in 0..=degree {
                *out.coeff_mut(i, j) = self.coeff(i, j) + alpha * other.coeff(i, j);
            }
        }
        out
    }

    pub fn scaled(&self, alpha: f64) -> Poly {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= alpha);
        out
    }

    /// Linear combination `Σ c_k p_k` of polynomials sharing one frame.
    pub fn combine(polys: &[Poly], coeffs: &[f64], dim: usize) -> Poly {
        assert_eq!(polys.len(), coeffs.len());
        let Some(first) = polys.first() else {
            return Poly::zero(dim, 0);
        };
        let mut acc = Poly::zero_local(first.dim, first.degree, first.center, first.scale);
        for (p, &c) in polys.iter().zip(coeffs) {
            if c != 0.0 {
                acc = acc.axpy(c, p);
            }
        }
        acc
    }

    fn local(&self, x: &Point) -> (f64, f64) {
        let xi = (x[0] - self.center[0]) / self.scale;
        let eta = if self.dim == 2 {
            (x[1] - self.center[1]) / self.scale
        } else {
            0.0
        };
        (xi, eta)
    }

    /// Powers `t^k` and their first two derivatives for `k = 0..=degree`.
    fn power_table(&self, t: f64) -> [Vec<f64>; 3] {
        let d = self.degree;
        let mut p = vec![1.0; d + 1];
        for k in 1..=d {
            p[k] = p[k - 1] * t;
        }
        let mut dp = vec![0.0; d + 1];
        let mut ddp = vec![0.0; d + 1];
        for k in 1..=d {
            dp[k] = k as f64 * p[k - 1];
        }
        for k in 2..=d {
            ddp[k] = (k * (k - 1)) as f64 * p[k - 2];
        }
        [p, dp, ddp]
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.eval_all(x).0
    }

    pub fn gradient(&self, x: &Point) -> Point {
        self.eval_all(x).1
    }

    /// Hessian as `[[∂xx, ∂xy], [∂xy, ∂yy]]`; only `[0][0]` is meaningful in 1D.
    pub fn hessian(&self, x: &Point) -> [[f64; 2]; 2] {
        self.eval_all(x).2
    }

    /// Value, gradient and Hessian in one pass.
    pub fn eval_all(&self, x: &Point) -> (f64, Point, [[f64; 2]; 2]) {
        let (xi, eta) = self.local(x);
        let [px, dpx, ddpx] = self.power_table(xi);
        let d = self.degree;
        let (mut v, mut gx, mut gy, mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        if self.dim == 1 {
            for i in 0..=d {
                let c = self.coeffs[i * (d + 1)];
                v += c * px[i];
                gx += c * dpx[i];
                hxx += c * ddpx[i];
            }
        } else {
            let [py, dpy, ddpy] = self.power_table(eta);
            for i in 0..=d {
                for j in 0..=(d - i) {
                    let c = self.coeffs[i * (d + 1) + j];
                    if c == 0.0 {
                        continue;
                    }
                    v += c * px[i] * py[j];
                    gx += c * dpx[i] * py[j];
                    gy += c * px[i] * dpy[j];
                    hxx += c * ddpx[i] * py[j];
                    hxy += c * dpx[i] * dpy[j];
                    hyy += c * px[i] * ddpy[j];
                }
            }
        }
        let s = self.scale;
        let s2 = s * s;
        (
            v,
            [gx / s, gy / s],
            [[hxx / s2, hxy / s2], [hxy / s2, hyy / s2]],
        )
    }
}

fn binomial_table(n: usize) -> Vec<Vec<f64>> {
    let mut t = vec![vec![1.0]];
    for i in 1..=n {
        let prev: &Vec<f64> = &t[i - 1];
        let row = (0..=i)
            .map(|k| if k == 0 || k == i { 1.0 } else { prev[k - 1] + prev[k] })
            .collect();
        t.push(row);
    }
    t
}

/// Monomial coefficients of the Legendre polynomials `P_0..=P_n`.
pub fn legendre_coefficients(n: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    out.push(vec![1.0]);
    if n == 0 {
        return out;
    }
    out.push(vec![0.0, 1.0]);
    for k in 1..n {
        // (k+1) P_{k+1} = (2k+1) t P_k - k P_{k-1}
        let mut next = vec![0.0; k + 2];
        for (i, &c) in out[k].iter().enumerate() {
            next[i + 1] += (2 * k + 1) as f64 * c;
        }
        for (i, &c) in out[k - 1].iter().enumerate() {
            next[i] -= k as f64 * c;
        }
        next.iter_mut().for_each(|c| *c /= (k + 1) as f64);
        out.push(next);
    }
    out
}

/// `P_i(ξ) P_j(η)` in the given local frame (`j` must be 0 in 1D).
pub fn legendre_product(
    dim: usize,
    i: usize,
    j: usize,
    center: Point,
    scale: f64,
    table: &[Vec<f64>],
) -> Poly {
    let degree = i + j;
    let mut p = Poly::zero_local(dim, degree, center, scale);
    for (a, &ca) in table[i].iter().enumerate() {
        for (b, &cb) in table[j].iter().enumerate() {
            if ca != 0.0 && cb != 0.0 {
                *p.coeff_mut(a, b) += ca * cb;
            }
        }
    }
    p
}

/// Affine function `A(x) = constant + ⟨linear, x⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub constant: f64,
    pub linear: Point,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            constant: c,
            linear: [0.0; 2],
        }
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.constant + self.linear[0] * x[0] + self.linear[1] * x[1]
    }

    pub fn is_constant(&self, tol: f64) -> bool {
        self.linear.iter().all(|a| a.abs() <= tol)
    }

    pub fn to_poly(&self, dim: usize) -> Poly {
        let mut terms = vec![(0, 0, self.constant), (1, 0, self.linear[0])];
        if dim == 2 {
            terms.push((0, 1, self.linear[1]));
        }
        Poly::from_terms(dim, &terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn derivatives_of_a_known_polynomial() {
        // p = 1 + 2x - y + 3x^2 y + y^3
        let p = Poly::from_terms(2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 1, -1.0), (2, 1, 3.0), (0, 3, 1.0)]);
        let x = [0.3, -0.7];
        let (v, g, h) = p.eval_all(&x);
        assert_abs_diff_eq!(v, 1.0 + 0.6 + 0.7 + 3.0 * 0.09 * -0.7 + (-0.343), epsilon = 1e-14);
        assert_abs_diff_eq!(g[0], 2.0 + 6.0 * 0.3 * -0.7, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], -1.0 + 3.0 * 0.09 + 3.0 * 0.49, epsilon = 1e-14);
        assert_abs_diff_eq!(h[0][0], 6.0 * -0.7, epsilon = 1e-14);
        assert_abs_diff_eq!(h[0][1], 6.0 * 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(h[1][1], 6.0 * -0.7, epsilon = 1e-14);
    }

    #[test]
    fn local_frame_matches_global_derivatives() {
        let table = legendre_coefficients(4);
        let p = legendre_product(2, 3, 1, [0.5, 0.25], 0.5, &table);
        let x = [0.8, 0.1];
        let h = 1e-4;
        let fd = (p.value(&[x[0] + h, x[1]]) - p.value(&[x[0] - h, x[1]])) / (2.0 * h);
        assert_abs_diff_eq!(p.gradient(&x)[0], fd, epsilon = 1e-6);
        let fdd = (p.value(&[x[0], x[1] + h]) - 2.0 * p.value(&x) + p.value(&[x[0], x[1] - h])) / (h * h);
        assert_abs_diff_eq!(p.hessian(&x)[1][1], fdd, epsilon = 1e-4);
    }

    #[test]
    fn change_of_frame_preserves_values() {
        let p = Poly::from_terms(2, &[(0, 0, 1.0), (2, 1, -3.0), (0, 3, 0.5), (1, 1, 2.0)]);
        let q = p.in_frame([0.4, -0.2], 0.7);
        for x in [[0.3, 0.9], [-1.2, 0.5], [2.0, -1.0]] {
            assert_abs_diff_eq!(p.value(&x), q.value(&x), epsilon = 1e-12);
            assert_abs_diff_eq!(p.hessian(&x)[0][1], q.hessian(&x)[0][1], epsilon = 1e-12);
        }
        let sum = q.axpy(2.0, &p);
        assert_abs_diff_eq!(sum.value(&[0.1, 0.2]), 3.0 * p.value(&[0.1, 0.2]), epsilon = 1e-12);
    }

    #[test]
    fn legendre_table_matches_closed_forms() {
        let t = legendre_coefficients(3);
        assert_eq!(t[2], vec![-0.5, 0.0, 1.5]);
        assert_eq!(t[3], vec![0.0, -1.5, 0.0, 2.5]);
    }
}
