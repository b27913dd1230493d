//! Extremal affine function, the Donaldson–Futaki functional
//! `L_A(v) = ∫_∂P v dσ − ∫_P A v dμ`, and a uniform stability scan over
//! single-crease piecewise-linear convex functions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::Affine;
use crate::polytope::{polygon_rule, segment_rule, DelzantPolytope, Point, PolytopeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("Gram system of the affine functions is singular")]
    SingularGram,
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// `1, x¹, …, xⁿ`.
fn affine_basis(dim: usize) -> Vec<Affine> {
    let mut out = vec![Affine::constant(1.0)];
    for a in 0..dim {
        let mut linear = [0.0; 2];
        linear[a] = 1.0;
        out.push(Affine { constant: 0.0, linear });
    }
    out
}

/// The affine `A` with `∫_P A ℓ dμ = ∫_∂P ℓ dσ` for every affine `ℓ`.
pub fn extremal_affine(p: &DelzantPolytope) -> Result<Affine, StabilityError> {
    let dim = p.dim();
    let basis = affine_basis(dim);
    let rule = p.interior_quadrature(2)?;
    let brule = p.boundary_quadrature(2)?;
    let m = basis.len();
    let gram = DMatrix::from_fn(m, m, |i, j| rule.integrate(|x| basis[i].value(x) * basis[j].value(x)));
    let rhs = DVector::from_fn(m, |i, _| brule.integrate(|x| basis[i].value(x)));
    let sol = gram.clone().lu().solve(&rhs).ok_or(StabilityError::SingularGram)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(StabilityError::SingularGram);
    }
    let mut linear = [0.0; 2];
    linear[..dim].copy_from_slice(&sol.as_slice()[1..]);
    Ok(Affine {
        constant: sol[0],
        linear,
    })
}

/// `L_A(v)` by quadrature of the given order, for a continuous `v`.
pub fn futaki_pairing(
    p: &DelzantPolytope,
    a: &Affine,
    v: impl Fn(&Point) -> f64,
    order: usize,
) -> Result<f64, StabilityError> {
    let rule = p.interior_quadrature(order)?;
    let brule = p.boundary_quadrature(order)?;
    Ok(brule.integrate(&v) - rule.integrate(|x| a.value(x) * v(x)))
}

/// Largest `|L_A(ℓ)|` over `ℓ ∈ {1, x¹, …, xⁿ}`; zero exactly when `A` is extremal.
pub fn affine_obstruction(p: &DelzantPolytope, a: &Affine) -> Result<f64, StabilityError> {
    affine_basis(p.dim())
        .iter()
        .map(|l| futaki_pairing(p, a, |x| l.value(x), 2).map(f64::abs))
        .try_fold(0.0f64, |m, v| Ok(m.max(v?)))
}

/// The crease function `v(x) = max(0, ⟨a, x⟩ − b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub direction: Point,
    pub offset: f64,
}

impl Probe {
    pub fn value(&self, x: &Point) -> f64 {
        (self.direction[0] * x[0] + self.direction[1] * x[1] - self.offset).max(0.0)
    }

    fn linear(&self, x: &Point) -> f64 {
        self.direction[0] * x[0] + self.direction[1] * x[1] - self.offset
    }

    /// The probe `v ∘ φ^{-1}` for `φ(x) = g x + shift`.
    pub fn transformed(&self, g: [[i64; 2]; 2], shift: Point) -> Probe {
        let det = (g[0][0] * g[1][1] - g[0][1] * g[1][0]) as f64;
        // rows of g^{-T}
        let inv_t = [
            [g[1][1] as f64 / det, -g[1][0] as f64 / det],
            [-g[0][1] as f64 / det, g[0][0] as f64 / det],
        ];
        let a = self.direction;
        let d = [
            inv_t[0][0] * a[0] + inv_t[0][1] * a[1],
            inv_t[1][0] * a[0] + inv_t[1][1] * a[1],
        ];
        Probe {
            direction: d,
            offset: self.offset + d[0] * shift[0] + d[1] * shift[1],
        }
    }
}

/// Clips a convex polygon to `{⟨a, x⟩ ≥ b}`.
fn clip_polygon(vertices: &[Point], probe: &Probe) -> Vec<Point> {
    let mut out = Vec::new();
    let n = vertices.len();
    for i in 0..n {
        let (p, q) = (vertices[i], vertices[(i + 1) % n]);
        let (fp, fq) = (probe.linear(&p), probe.linear(&q));
        if fp >= 0.0 {
            out.push(p);
        }
        if (fp >= 0.0) != (fq >= 0.0) {
            let s = fp / (fp - fq);
            out.push([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
        }
    }
    out
}

/// Clips a segment to `{⟨a, x⟩ ≥ b}`.
fn clip_segment(p: Point, q: Point, probe: &Probe) -> Option<(Point, Point)> {
    let (fp, fq) = (probe.linear(&p), probe.linear(&q));
    match (fp >= 0.0, fq >= 0.0) {
        (true, true) => Some((p, q)),
        (false, false) => None,
        _ => {
            let s = fp / (fp - fq);
            let m = [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])];
            Some(if fp >= 0.0 { (p, m) } else { (m, q) })
        }
    }
}

/// `(L_A(v), ∫_∂P v dσ)` for a crease function, integrated exactly piece by piece.
pub fn crease_pairing(p: &DelzantPolytope, a: &Affine, probe: &Probe) -> (f64, f64) {
    if p.dim() == 1 {
        let (lo, hi) = (p.vertices()[0][0], p.vertices()[1][0]);
        let boundary = probe.value(&[lo, 0.0]) + probe.value(&[hi, 0.0]);
        let (nodes, weights) = {
            let c = probe.offset / probe.direction[0];
            let (s, e) = if probe.direction[0] > 0.0 { (c.max(lo), hi) } else { (lo, c.min(hi)) };
            if e > s {
                segment_rule(&[s, 0.0], &[e, 0.0], 2)
            } else {
                (Vec::new(), Vec::new())
            }
        };
        let interior: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * a.value(x) * probe.value(x)).sum();
        return (boundary - interior, boundary);
    }
    let clipped = clip_polygon(p.vertices(), probe);
    let interior = if clipped.len() >= 3 {
        let (nodes, weights) = polygon_rule(&clipped, 2);
        nodes.iter().zip(&weights).map(|(x, w)| w * a.value(x) * probe.linear(x)).sum()
    } else {
        0.0
    };
    let mut boundary = 0.0;
    for e in p.edges() {
        if let Some((s, t)) = clip_segment(e.start, e.end, probe) {
            let (nodes, weights) = segment_rule(&s, &t, 1);
            let inv = 1.0 / p.facets()[e.facet].norm();
            boundary += inv * nodes.iter().zip(&weights).map(|(x, w)| w * probe.linear(x)).sum::<f64>();
        }
    }
    (boundary - interior, boundary)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub probe: Probe,
    pub pairing: f64,
    pub boundary_integral: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub affine: Affine,
    /// Largest `|L_A(ℓ)|` over affine `ℓ`.
    pub affine_obstruction: f64,
    pub probes: Vec<ProbeResult>,
    /// `min L_A(v) / ∫_∂P v dσ` over the probes.
    pub lambda_hat: f64,
    pub worst: Option<ProbeResult>,
}

impl StabilityReport {
    pub fn all_positive(&self) -> bool {
        self.probes.iter().all(|p| p.pairing > 0.0)
    }
}

/// Random crease probes cutting through the interior of `p`.
pub fn sample_probes(p: &DelzantPolytope, n_probes: usize, seed: u64) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_probes)
        .map(|_| {
            let direction = if p.dim() == 1 {
                [if rng.gen_bool(0.5) { 1.0 } else { -1.0 }, 0.0]
            } else {
                let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                [t.cos(), t.sin()]
            };
            let values: Vec<f64> = p
                .vertices()
                .iter()
                .map(|v| direction[0] * v[0] + direction[1] * v[1])
                .collect();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = rng.gen_range(0.0..1.0);
            // strictly inside (lo, hi)
            let offset = lo + (hi - lo) * (1e-6 + s * (1.0 - 2e-6));
            Probe { direction, offset }
        })
        .collect()
}

/// Evaluates the stability ratio on the given probes.
pub fn scan_probes(p: &DelzantPolytope, a: &Affine, probes: &[Probe]) -> Result<StabilityReport, StabilityError> {
    let results: Vec<ProbeResult> = probes
        .par_iter()
        .map(|probe| {
            let (pairing, boundary_integral) = crease_pairing(p, a, probe);
            ProbeResult {
                probe: *probe,
                pairing,
                boundary_integral,
                ratio: pairing / boundary_integral,
            }
        })
        .collect();
    let worst = results.iter().copied().min_by(|x, y| x.ratio.total_cmp(&y.ratio));
    Ok(StabilityReport {
        affine: *a,
        affine_obstruction: affine_obstruction(p, a)?,
        lambda_hat: worst.map_or(f64::INFINITY, |w| w.ratio),
        worst,
        probes: results,
    })
}

/// Uniform stability estimate `λ̂` over `n_probes` random crease functions.
pub fn uniform_scan(p: &DelzantPolytope, a: &Affine, n_probes: usize, seed: u64) -> Result<StabilityReport, StabilityError> {
    scan_probes(p, a, &sample_probes(p, n_probes, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn extremal_affine_of_presets() {
        for (p, a0) in [
            (DelzantPolytope::unit_interval(), 2.0),
            (DelzantPolytope::unit_square(), 4.0),
            (DelzantPolytope::standard_simplex(), 6.0),
        ] {
            let a = extremal_affine(&p).unwrap();
            assert_abs_diff_eq!(a.constant, a0, epsilon = 1e-12);
            assert!(a.is_constant(1e-12));
            assert!(affine_obstruction(&p, &a).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn hand_computed_crease_pairing() {
        let p = DelzantPolytope::unit_interval();
        let probe = Probe {
            direction: [1.0, 0.0],
            offset: 0.5,
        };
        let (l, b) = crease_pairing(&p, &Affine::constant(2.0), &probe);
        assert_abs_diff_eq!(l, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(b, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn interval_ratio_family() {
        // ratio of max(0, x - b) is b, of max(0, b - x) is 1 - b
        let p = DelzantPolytope::unit_interval();
        for b in [0.1, 0.37, 0.9] {
            let (l, s) = crease_pairing(&p, &Affine::constant(2.0), &Probe { direction: [1.0, 0.0], offset: b });
            assert_abs_diff_eq!(l / s, b, epsilon = 1e-14);
            let (l, s) = crease_pairing(&p, &Affine::constant(2.0), &Probe { direction: [-1.0, 0.0], offset: -b });
            assert_abs_diff_eq!(l / s, 1.0 - b, epsilon = 1e-14);
        }
    }
}
