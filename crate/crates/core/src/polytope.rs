//! Delzant polytopes in dimension one and two.
//!
//! A polytope is given by facets `ℓ_i(x) = ⟨ν_i, x⟩ - c_i ≥ 0` with primitive
//! inward integer normals. The boundary measure on the facet `{ℓ_i = 0}` is the
//! Euclidean length divided by `|ν_i|`, the unique choice with
//! `dσ ∧ dℓ_i = ±dμ`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point of `ℝ^dim`; the second coordinate is ignored (and kept at zero) in 1D.
pub type Point = [f64; 2];

const GEOM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolytopeError {
    #[error("polytope dimension must be 1 or 2, got {0}")]
    UnsupportedDimension(usize),
    #[error("need at least {needed} facets in dimension {dim}, got {got}")]
    TooFewFacets { dim: usize, needed: usize, got: usize },
    #[error("facet {0} has a normal of the wrong length")]
    MismatchedNormal(usize),
    #[error("facet {0} has a non-primitive normal")]
    NonPrimitiveNormal(usize),
    #[error("facet inequalities do not cut out a bounded region")]
    NotBounded,
    #[error("facet inequalities have empty interior")]
    EmptyInterior,
    #[error("facet {0} is redundant")]
    RedundantFacet(usize),
    #[error("vertex {vertex:?} violates the Delzant condition (det = {det})")]
    NotDelzant { vertex: Point, det: i64 },
    #[error("point {0:?} is not in the interior of the polytope")]
    BoundaryEvaluation(Point),
    #[error("quadrature order must be at least 1")]
    InvalidOrder,
}

/// One facet inequality `⟨normal, x⟩ - offset ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub normal: Vec<i64>,
    pub offset: f64,
}

impl Facet {
    pub fn new(normal: &[i64], offset: f64) -> Self {
        Facet {
            normal: normal.to_vec(),
            offset,
        }
    }

    pub fn ell(&self, x: &Point) -> f64 {
        self.normal
            .iter()
            .zip(x)
            .map(|(&n, &xi)| n as f64 * xi)
            .sum::<f64>()
            - self.offset
    }

    pub fn normal_f64(&self) -> Point {
        let mut out = [0.0; 2];
        for (o, &n) in out.iter_mut().zip(&self.normal) {
            *o = n as f64;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.normal
            .iter()
            .map(|&n| (n * n) as f64)
            .sum::<f64>()
            .sqrt()
    }
}

/// Boundary segment of a polygon lying on one facet, oriented counterclockwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub facet: usize,
    pub start: Point,
    pub end: Point,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelzantPolytope {
    dim: usize,
    facets: Vec<Facet>,
    vertices: Vec<Point>,
    edges: Vec<Edge>,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl DelzantPolytope {
    /// Validates the facet data and enumerates vertices in boundary order.
    pub fn from_facets(facets: Vec<Facet>) -> Result<Self, PolytopeError> {
        let dim = facets.first().map(|f| f.normal.len()).unwrap_or(0);
        if dim != 1 && dim != 2 {
            return Err(PolytopeError::UnsupportedDimension(dim));
        }
        for (i, f) in facets.iter().enumerate() {
            if f.normal.len() != dim {
                return Err(PolytopeError::MismatchedNormal(i));
            }
            let g = f.normal.iter().fold(0, |acc, &n| gcd(acc, n));
            if g != 1 {
                return Err(PolytopeError::NonPrimitiveNormal(i));
            }
        }
        if dim == 1 {
            Self::build_interval(facets)
        } else {
            Self::build_polygon(facets)
        }
    }

    fn build_interval(facets: Vec<Facet>) -> Result<Self, PolytopeError> {
        if facets.len() < 2 {
            return Err(PolytopeError::TooFewFacets {
                dim: 1,
                needed: 2,
                got: facets.len(),
            });
        }
        let lower = facets
            .iter()
            .enumerate()
            .filter(|(_, f)| f.normal[0] == 1)
            .max_by(|a, b| a.1.offset.total_cmp(&b.1.offset));
        let upper = facets
            .iter()
            .enumerate()
            .filter(|(_, f)| f.normal[0] == -1)
            .min_by(|a, b| (-a.1.offset).total_cmp(&-b.1.offset));
        let (Some((lo_idx, lo)), Some((hi_idx, hi))) = (lower, upper) else {
            return Err(PolytopeError::NotBounded);
        };
        let (a, b) = (lo.offset, -hi.offset);
        if b - a <= GEOM_TOL {
            return Err(PolytopeError::EmptyInterior);
        }
        if let Some(extra) = (0..facets.len()).find(|&i| i != lo_idx && i != hi_idx) {
            return Err(PolytopeError::RedundantFacet(extra));
        }
        Ok(DelzantPolytope {
            dim: 1,
            facets,
            vertices: vec![[a, 0.0], [b, 0.0]],
            edges: Vec::new(),
        })
    }

    fn build_polygon(facets: Vec<Facet>) -> Result<Self, PolytopeError> {
        if facets.len() < 3 {
            return Err(PolytopeError::TooFewFacets {
                dim: 2,
                needed: 3,
                got: facets.len(),
            });
        }
        // Bounded iff the normals leave no angular gap of π or more.
        let mut angles: Vec<f64> = facets
            .iter()
            .map(|f| (f.normal[1] as f64).atan2(f.normal[0] as f64))
            .collect();
        angles.sort_by(f64::total_cmp);
        let mut max_gap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
        for w in angles.windows(2) {
            max_gap = max_gap.max(w[1] - w[0]);
        }
        if max_gap >= PI - 1e-12 {
            return Err(PolytopeError::NotBounded);
        }
        for i in 0..facets.len() {
            for j in 0..i {
                if facets[i] == facets[j] {
                    return Err(PolytopeError::RedundantFacet(i));
                }
            }
        }

        let scale = 1.0 + facets.iter().map(|f| f.offset.abs()).fold(0.0, f64::max);
        let mut vertices: Vec<Point> = Vec::new();
        for i in 0..facets.len() {
            for j in (i + 1)..facets.len() {
                let (n1, n2) = (facets[i].normal_f64(), facets[j].normal_f64());
                let det = n1[0] * n2[1] - n1[1] * n2[0];
                if det == 0.0 {
                    continue;
                }
                let (c1, c2) = (facets[i].offset, facets[j].offset);
                let p = [(c1 * n2[1] - c2 * n1[1]) / det, (n1[0] * c2 - n2[0] * c1) / det];
                if facets.iter().all(|f| f.ell(&p) >= -GEOM_TOL * scale)
                    && !vertices
                        .iter()
                        .any(|q| (q[0] - p[0]).abs() + (q[1] - p[1]).abs() <= GEOM_TOL * scale)
                {
                    vertices.push(p);
                }
            }
        }
        if vertices.len() < 3 {
            return Err(PolytopeError::EmptyInterior);
        }
        let cx = vertices.iter().map(|v| v[0]).sum::<f64>() / vertices.len() as f64;
        let cy = vertices.iter().map(|v| v[1]).sum::<f64>() / vertices.len() as f64;
        vertices.sort_by(|a, b| {
            let ta = (a[1] - cy).atan2(a[0] - cx);
            let tb = (b[1] - cy).atan2(b[0] - cx);
            ta.total_cmp(&tb)
        });
        let area = shoelace(&vertices);
        if area <= GEOM_TOL * scale * scale {
            return Err(PolytopeError::EmptyInterior);
        }

        let active = |p: &Point| -> Vec<usize> {
            (0..facets.len())
                .filter(|&k| facets[k].ell(p).abs() <= 1e-9 * scale)
                .collect()
        };
        let mut edges = Vec::with_capacity(vertices.len());
        for k in 0..vertices.len() {
            let (a, b) = (vertices[k], vertices[(k + 1) % vertices.len()]);
            let shared: Vec<usize> = active(&a)
                .into_iter()
                .filter(|i| active(&b).contains(i))
                .collect();
            if let Some(&facet) = shared.first() {
                edges.push(Edge {
                    facet,
                    start: a,
                    end: b,
                });
            }
        }
        for i in 0..facets.len() {
            if !edges.iter().any(|e| e.facet == i) {
                return Err(PolytopeError::RedundantFacet(i));
            }
        }
        for v in &vertices {
            let act = active(v);
            if act.len() != 2 {
                // A third facet through a vertex only touches the polygon there.
                let extra = act
                    .iter()
                    .copied()
                    .find(|&i| edges.iter().filter(|e| e.facet == i).count() == 0)
                    .unwrap_or(act[act.len() - 1]);
                return Err(PolytopeError::RedundantFacet(extra));
            }
            let (n1, n2) = (&facets[act[0]].normal, &facets[act[1]].normal);
            let det = n1[0] * n2[1] - n1[1] * n2[0];
            if det.abs() != 1 {
                return Err(PolytopeError::NotDelzant { vertex: *v, det });
            }
        }
        Ok(DelzantPolytope {
            dim: 2,
            facets,
            vertices,
            edges,
        })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self, PolytopeError> {
        Self::from_facets(vec![Facet::new(&[1], a), Facet::new(&[-1], -b)])
    }

    pub fn unit_interval() -> Self {
        Self::interval(0.0, 1.0).expect("unit interval is Delzant")
    }

    pub fn unit_square() -> Self {
        Self::from_facets(vec![
            Facet::new(&[1, 0], 0.0),
            Facet::new(&[0, 1], 0.0),
            Facet::new(&[-1, 0], -1.0),
            Facet::new(&[0, -1], -1.0),
        ])
        .expect("unit square is Delzant")
    }

    /// The moment polytope of the projective plane.
    pub fn standard_simplex() -> Self {
        Self::from_facets(vec![
            Facet::new(&[1, 0], 0.0),
            Facet::new(&[0, 1], 0.0),
            Facet::new(&[-1, -1], -1.0),
        ])
        .expect("standard simplex is Delzant")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn ells(&self, x: &Point) -> Vec<f64> {
        self.facets.iter().map(|f| f.ell(x)).collect()
    }

    pub fn is_interior(&self, x: &Point) -> bool {
        self.facets.iter().all(|f| f.ell(x) > 0.0)
    }

    /// Euclidean distance from `x` to the boundary (negative outside).
    pub fn distance_to_boundary(&self, x: &Point) -> f64 {
        self.facets
            .iter()
            .map(|f| f.ell(x) / f.norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn vertex_centroid(&self) -> Point {
        let n = self.vertices.len() as f64;
        [
            self.vertices.iter().map(|v| v[0]).sum::<f64>() / n,
            self.vertices.iter().map(|v| v[1]).sum::<f64>() / n,
        ]
    }

    /// Center and half-width of the bounding box.
    pub fn bounding_frame(&self) -> (Point, f64) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..self.dim {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let mut center = [0.0; 2];
        let mut half: f64 = 0.0;
        for k in 0..self.dim {
            center[k] = 0.5 * (lo[k] + hi[k]);
            half = half.max(0.5 * (hi[k] - lo[k]));
        }
        (center, half)
    }

    /// `μ(P)`.
    pub fn volume(&self) -> f64 {
        if self.dim == 1 {
            self.vertices[1][0] - self.vertices[0][0]
        } else {
            shoelace(&self.vertices)
        }
    }

    /// `σ(∂P)`.
    pub fn boundary_measure(&self) -> f64 {
        if self.dim == 1 {
            2.0
        } else {
            self.edges
                .iter()
                .map(|e| segment_length(&e.start, &e.end) / self.facets[e.facet].norm())
                .sum()
        }
    }

    pub fn interior_quadrature(&self, order: usize) -> Result<QuadratureRule, PolytopeError> {
        if order < 1 {
            return Err(PolytopeError::InvalidOrder);
        }
        let (nodes, weights) = if self.dim == 1 {
            interval_rule(self.vertices[0][0], self.vertices[1][0], order)
        } else {
            polygon_rule(&self.vertices, order)
        };
        Ok(QuadratureRule {
            nodes,
            weights,
            measure: MeasureTag::Interior,
            order,
        })
    }

    pub fn boundary_quadrature(&self, order: usize) -> Result<QuadratureRule, PolytopeError> {
        if order < 1 {
            return Err(PolytopeError::InvalidOrder);
        }
        let (nodes, weights) = if self.dim == 1 {
            (self.vertices.clone(), vec![1.0, 1.0])
        } else {
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            for e in &self.edges {
                let inv_norm = 1.0 / self.facets[e.facet].norm();
                let (n, w) = segment_rule(&e.start, &e.end, order);
                nodes.extend(n);
                weights.extend(w.into_iter().map(|w| w * inv_norm));
            }
            (nodes, weights)
        };
        Ok(QuadratureRule {
            nodes,
            weights,
            measure: MeasureTag::Boundary,
            order,
        })
    }

    /// Closed-form evaluator for the canonical potential `u_G = Σ ℓ_i log ℓ_i`.
    pub fn guillemin(&self) -> Guillemin<'_> {
        Guillemin { polytope: self }
    }

    /// Image under `x ↦ g x + t` of an integral matrix `g` with `det g = ±1`.
    pub fn transformed(&self, g: [[i64; 2]; 2], shift: Point) -> Result<Self, PolytopeError> {
        // ℓ(x) = ⟨ν, x⟩ - c with x = g^{-1}(x' - t): ν' = g^{-T} ν, c' = c + ⟨ν', t⟩.
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        assert!(det.abs() == 1, "lattice transform must be unimodular");
        let inv = [[g[1][1] * det, -g[0][1] * det], [-g[1][0] * det, g[0][0] * det]];
        let facets = self
            .facets
            .iter()
            .map(|f| {
                if self.dim == 1 {
                    let n = f.normal[0] * g[0][0];
                    Facet::new(&[n], f.offset + n as f64 * shift[0])
                } else {
                    let n = [
                        inv[0][0] * f.normal[0] + inv[1][0] * f.normal[1],
                        inv[0][1] * f.normal[0] + inv[1][1] * f.normal[1],
                    ];
                    Facet::new(&n, f.offset + n[0] as f64 * shift[0] + n[1] as f64 * shift[1])
                }
            })
            .collect();
        Self::from_facets(facets)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureTag {
    /// `dμ` on the interior.
    Interior,
    /// `dσ` on the facets.
    Boundary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
    pub measure: MeasureTag,
    pub order: usize,
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]` exact to degree `2m - 1`.
pub fn gauss_legendre_unit(m: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(m.max(1)).unwrap());
    let mut out: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn interval_rule(a: f64, b: f64, order: usize) -> (Vec<Point>, Vec<f64>) {
    let m = order / 2 + 1;
    gauss_legendre_unit(m)
        .into_iter()
        .map(|(t, w)| ([a + t * (b - a), 0.0], w * (b - a)))
        .unzip()
}

/// Gauss rule on the segment `[a, b]` with respect to arc length.
pub fn segment_rule(a: &Point, b: &Point, order: usize) -> (Vec<Point>, Vec<f64>) {
    let len = segment_length(a, b);
    let m = order / 2 + 1;
    gauss_legendre_unit(m)
        .into_iter()
        .map(|(t, w)| ([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], w * len))
        .unzip()
}

/// Collapsed (Duffy) tensor Gauss rule on the triangle `(c, a, b)`, exact to `order`.
pub fn triangle_rule(c: &Point, a: &Point, b: &Point, order: usize) -> (Vec<Point>, Vec<f64>) {
    // x = c + s (a - c) + s t (b - a), Jacobian s |det(a - c, b - a)|.
    let m = order / 2 + 1;
    let gl = gauss_legendre_unit(m);
    let e1 = [a[0] - c[0], a[1] - c[1]];
    let e2 = [b[0] - a[0], b[1] - a[1]];
    let jac = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
    let mut nodes = Vec::with_capacity(m * m);
    let mut weights = Vec::with_capacity(m * m);
    for &(s, ws) in &gl {
        for &(t, wt) in &gl {
            nodes.push([
                c[0] + s * e1[0] + s * t * e2[0],
                c[1] + s * e1[1] + s * t * e2[1],
            ]);
            weights.push(ws * wt * s * jac);
        }
    }
    (nodes, weights)
}

/// Fan triangulation of a convex polygon from its vertex centroid.
pub fn polygon_rule(vertices: &[Point], order: usize) -> (Vec<Point>, Vec<f64>) {
    let n = vertices.len() as f64;
    let c = [
        vertices.iter().map(|v| v[0]).sum::<f64>() / n,
        vertices.iter().map(|v| v[1]).sum::<f64>() / n,
    ];
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for k in 0..vertices.len() {
        let (a, b) = (&vertices[k], &vertices[(k + 1) % vertices.len()]);
        let (nk, wk) = triangle_rule(&c, a, b, order);
        nodes.extend(nk);
        weights.extend(wk);
    }
    (nodes, weights)
}

pub fn segment_length(a: &Point, b: &Point) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

fn shoelace(vertices: &[Point]) -> f64 {
    let mut s = 0.0;
    for k in 0..vertices.len() {
        let (a, b) = (vertices[k], vertices[(k + 1) % vertices.len()]);
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s.abs()
}

/// Evaluator for `u_G = Σ ℓ_i log ℓ_i` and its derivatives at interior points.
#[derive(Clone, Copy, Debug)]
pub struct Guillemin<'a> {
    polytope: &'a DelzantPolytope,
}

impl Guillemin<'_> {
    fn check(&self, x: &Point) -> Result<Vec<f64>, PolytopeError> {
        let ells = self.polytope.ells(x);
        if ells.iter().any(|&l| l <= 0.0) {
            return Err(PolytopeError::BoundaryEvaluation(*x));
        }
        Ok(ells)
    }

    pub fn value(&self, x: &Point) -> Result<f64, PolytopeError> {
        Ok(self.check(x)?.iter().map(|l| l * l.ln()).sum())
    }

    pub fn gradient(&self, x: &Point) -> Result<Point, PolytopeError> {
        let ells = self.check(x)?;
        let mut g = [0.0; 2];
        for (f, l) in self.polytope.facets.iter().zip(&ells) {
            let n = f.normal_f64();
            for k in 0..2 {
                g[k] += n[k] * (l.ln() + 1.0);
            }
        }
        Ok(g)
    }

    /// `D²u_G = Σ ν_i ν_iᵀ / ℓ_i`, of size `dim × dim`.
    pub fn hessian(&self, x: &Point) -> Result<DMatrix<f64>, PolytopeError> {
        let ells = self.check(x)?;
        let d = self.polytope.dim;
        let mut h = DMatrix::zeros(d, d);
        for (f, l) in self.polytope.facets.iter().zip(&ells) {
            let n = f.normal_f64();
            for a in 0..d {
                for b in 0..d {
                    h[(a, b)] += n[a] * n[b] / l;
                }
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interval_from_facets() {
        let p = DelzantPolytope::from_facets(vec![Facet::new(&[1], 0.0), Facet::new(&[-1], -1.0)]).unwrap();
        assert_eq!(p.vertices(), &[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(p.volume(), 1.0);
    }

    #[test]
    fn square_and_simplex_vertices() {
        let sq = DelzantPolytope::unit_square();
        assert_eq!(sq.vertices().len(), 4);
        assert_abs_diff_eq!(sq.volume(), 1.0, epsilon = 1e-15);
        let simplex = DelzantPolytope::standard_simplex();
        assert_eq!(simplex.vertices().len(), 3);
        // Every vertex sits on exactly two facets with |det| = 1.
        for v in simplex.vertices() {
            let act: Vec<&Facet> = simplex.facets().iter().filter(|f| f.ell(v).abs() < 1e-12).collect();
            assert_eq!(act.len(), 2);
            let det = act[0].normal[0] * act[1].normal[1] - act[0].normal[1] * act[1].normal[0];
            assert_eq!(det.abs(), 1);
        }
    }

    #[test]
    fn validation_errors() {
        let non_primitive = vec![Facet::new(&[2, 0], 0.0), Facet::new(&[0, 1], 0.0), Facet::new(&[-1, -1], -1.0)];
        assert_eq!(
            DelzantPolytope::from_facets(non_primitive).unwrap_err(),
            PolytopeError::NonPrimitiveNormal(0)
        );
        let strip = vec![Facet::new(&[1, 0], 0.0), Facet::new(&[-1, 0], -1.0), Facet::new(&[0, 1], 0.0)];
        assert_eq!(DelzantPolytope::from_facets(strip).unwrap_err(), PolytopeError::NotBounded);
        // Triangle with vertices (0,0), (2,0), (0,1): det((0,1), (-1,-2)) = 1 but det((1,0), (-1,-2)) = -2.
        let weighted = vec![Facet::new(&[1, 0], 0.0), Facet::new(&[0, 1], 0.0), Facet::new(&[-1, -2], -2.0)];
        assert!(matches!(
            DelzantPolytope::from_facets(weighted).unwrap_err(),
            PolytopeError::NotDelzant { det: -2, .. } | PolytopeError::NotDelzant { det: 2, .. }
        ));
        let redundant = vec![
            Facet::new(&[1, 0], 0.0),
            Facet::new(&[0, 1], 0.0),
            Facet::new(&[-1, 0], -1.0),
            Facet::new(&[0, -1], -1.0),
            Facet::new(&[-1, -1], -3.0),
        ];
        assert_eq!(DelzantPolytope::from_facets(redundant).unwrap_err(), PolytopeError::RedundantFacet(4));
        let empty = vec![Facet::new(&[1], 1.0), Facet::new(&[-1], 0.0)];
        assert_eq!(DelzantPolytope::from_facets(empty).unwrap_err(), PolytopeError::EmptyInterior);
        let one_sided = vec![Facet::new(&[1], 0.0), Facet::new(&[1], 1.0)];
        assert_eq!(DelzantPolytope::from_facets(one_sided).unwrap_err(), PolytopeError::NotBounded);
    }

    #[test]
    fn hirzebruch_surface_is_delzant() {
        // F_1: x ≥ 0, y ≥ 0, y ≤ 1, x + y ≤ 2.
        let p = DelzantPolytope::from_facets(vec![
            Facet::new(&[1, 0], 0.0),
            Facet::new(&[0, 1], 0.0),
            Facet::new(&[0, -1], -1.0),
            Facet::new(&[-1, -1], -2.0),
        ])
        .unwrap();
        assert_eq!(p.vertices().len(), 4);
        assert_abs_diff_eq!(p.volume(), 1.5, epsilon = 1e-14);
    }

    #[test]
    fn measures_match_hand_values() {
        assert_eq!(DelzantPolytope::unit_interval().boundary_measure(), 2.0);
        assert_abs_diff_eq!(DelzantPolytope::unit_square().boundary_measure(), 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(DelzantPolytope::standard_simplex().boundary_measure(), 3.0, epsilon = 1e-14);
        let b = DelzantPolytope::standard_simplex().boundary_quadrature(3).unwrap();
        assert_abs_diff_eq!(b.total_weight(), 3.0, epsilon = 1e-14);
        assert!(b.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn interior_rules_are_exact() {
        let sq = DelzantPolytope::unit_square();
        for order in 1..8 {
            assert_abs_diff_eq!(sq.interior_quadrature(order).unwrap().total_weight(), 1.0, epsilon = 1e-14);
        }
        let simplex = DelzantPolytope::standard_simplex();
        let q = simplex.interior_quadrature(2).unwrap();
        assert_abs_diff_eq!(q.integrate(|x| x[0]), 1.0 / 6.0, epsilon = 1e-15);
        assert!(q.nodes.iter().all(|x| simplex.is_interior(x)));
        let seg = DelzantPolytope::unit_interval().interior_quadrature(5).unwrap();
        assert_abs_diff_eq!(seg.integrate(|x| x[0] * x[0]), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(
            DelzantPolytope::unit_square().interior_quadrature(0).unwrap_err(),
            PolytopeError::InvalidOrder
        );
    }

    #[test]
    fn guillemin_hessian_values() {
        let seg = DelzantPolytope::unit_interval();
        let h = seg.guillemin().hessian(&[0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 4.0, epsilon = 1e-14);
        let sq = DelzantPolytope::unit_square();
        let h = sq.guillemin().hessian(&[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h[(1, 1)], 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h[(0, 1)], 0.0, epsilon = 1e-14);
        assert!(matches!(
            sq.guillemin().hessian(&[0.0, 0.5]),
            Err(PolytopeError::BoundaryEvaluation(_))
        ));
    }

    #[test]
    fn guillemin_gradient_matches_finite_differences() {
        let p = DelzantPolytope::standard_simplex();
        let g = p.guillemin();
        let x = [0.2, 0.3];
        let h = 1e-6;
        let grad = g.gradient(&x).unwrap();
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (g.value(&xp).unwrap() - g.value(&xm).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(grad[k], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn lattice_transform_preserves_measures() {
        let p = DelzantPolytope::standard_simplex();
        let q = p.transformed([[1, 1], [0, 1]], [0.3, -2.0]).unwrap();
        assert_abs_diff_eq!(q.volume(), p.volume(), epsilon = 1e-13);
        assert_abs_diff_eq!(q.boundary_measure(), p.boundary_measure(), epsilon = 1e-13);
    }
}
