//! Galerkin basis for the smooth part of a symplectic potential.
//!
//! Polynomials of total degree `2..=d`, orthonormal in `L²(dμ)` and orthogonal
//! to the affine functions, which span the kernel of the linearized operator.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::poly::Poly;
use crate::polytope::{DelzantPolytope, PolytopeError, QuadratureRule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BasisError {
    #[error("basis degree must be at least 2, got {0}")]
    DegreeTooLow(usize),
    #[error("Gram matrix of the candidate polynomials is numerically singular")]
    SingularGram,
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

#[derive(Clone, Debug)]
pub struct GalerkinBasis {
    dim: usize,
    degree: usize,
    functions: Vec<Poly>,
}

impl GalerkinBasis {
    pub fn new(polytope: &DelzantPolytope, degree: usize) -> Result<Self, BasisError> {
        if degree < 2 {
            return Err(BasisError::DegreeTooLow(degree));
        }
        let dim = polytope.dim();
        let (center, scale) = polytope.bounding_frame();
        let rule = polytope.interior_quadrature(2 * degree + 2)?;
        let sqrt_w: Vec<f64> = rule.weights.iter().map(|w| w.sqrt()).collect();
        let weighted_values =
            |p: &Poly| -> Vec<f64> { rule.nodes.iter().zip(&sqrt_w).map(|(x, s)| s * p.value(x)).collect() };

        // Arnoldi-style construction: each new candidate is a coordinate times an
        // already orthonormal polynomial of the previous degree, then orthogonalized
        // (twice) against everything built so far using its values at the nodes.
        let mut ortho: Vec<(Poly, Vec<f64>)> = Vec::new();
        let push = |candidate: Poly, ortho: &mut Vec<(Poly, Vec<f64>)>| -> Result<(), BasisError> {
            let mut p = candidate;
            let mut v = weighted_values(&p);
            for _ in 0..2 {
                for (q, qv) in ortho.iter() {
                    let c: f64 = v.iter().zip(qv).map(|(a, b)| a * b).sum();
                    p = p.axpy(-c, q);
                    v.iter_mut().zip(qv).for_each(|(a, b)| *a -= c * b);
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if !(norm > 1e-12) {
                return Err(BasisError::SingularGram);
            }
            let p = p.scaled(1.0 / norm);
            let v = weighted_values(&p);
            ortho.push((p, v));
            Ok(())
        };
        let mut one = Poly::zero_local(dim, 0, center, scale);
        *one.coeff_mut(0, 0) = 1.0;
        push(one, &mut ortho)?;
        // Indices (into `ortho`) of the polynomials of the previous total degree.
        let mut previous: Vec<usize> = vec![0];
        for _ in 1..=degree {
            let mut candidates: Vec<Poly> = previous.iter().map(|&k| times_coordinate(&ortho[k].0, 0)).collect();
            if dim == 2 {
                let last = *previous.last().unwrap();
                candidates.push(times_coordinate(&ortho[last].0, 1));
            }
            let first = ortho.len();
            for c in candidates {
                push(c, &mut ortho)?;
            }
            previous = (first..ortho.len()).collect();
        }
        let functions = ortho.into_iter().skip(dim + 1).map(|(p, _)| p).collect();
        Ok(GalerkinBasis {
            dim,
            degree,
            functions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[Poly] {
        &self.functions
    }

    /// The polynomial `Σ c_j φ_j`.
    pub fn combine(&self, coeffs: &[f64]) -> Poly {
        Poly::combine(&self.functions, coeffs, self.dim)
    }
}

/// `ξ_axis · p` in the local frame of `p`.
fn times_coordinate(p: &Poly, axis: usize) -> Poly {
    let d = p.degree();
    let mut out = Poly::zero_local(p.dim(), d + 1, p.center(), p.scale());
    for i in 0..=d {
        for j in 0..=(d - i) {
            let c = p.coeff(i, j);
            if axis == 0 {
                *out.coeff_mut(i + 1, j) += c;
            } else {
                *out.coeff_mut(i, j + 1) += c;
            }
        }
    }
    out
}

pub fn gram_matrix(polys: &[Poly], rule: &QuadratureRule) -> DMatrix<f64> {
    let values: Vec<Vec<f64>> = rule
        .nodes
        .iter()
        .map(|x| polys.iter().map(|p| p.value(x)).collect())
        .collect();
    let n = polys.len();
    let mut g = DMatrix::zeros(n, n);
    for (row, w) in values.iter().zip(&rule.weights) {
        for a in 0..n {
            for b in 0..=a {
                g[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            g[(b, a)] = g[(a, b)];
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_basis(p: &DelzantPolytope, degree: usize) {
        let basis = GalerkinBasis::new(p, degree).unwrap();
        let dim = p.dim();
        let expected = if dim == 1 {
            degree - 1
        } else {
            (degree + 1) * (degree + 2) / 2 - 3
        };
        assert_eq!(basis.len(), expected);
        let rule = p.interior_quadrature(2 * degree + 4).unwrap();
        let gram = gram_matrix(basis.functions(), &rule);
        let err = (gram - DMatrix::identity(basis.len(), basis.len())).abs().max();
        assert!(err <= 1e-10, "Gram error {err}");
        let mut affine = vec![Poly::from_terms(dim, &[(0, 0, 1.0)]), Poly::from_terms(dim, &[(1, 0, 1.0)])];
        if dim == 2 {
            affine.push(Poly::from_terms(2, &[(0, 1, 1.0)]));
        }
        for phi in basis.functions() {
            for a in &affine {
                let proj = rule.integrate(|x| phi.value(x) * a.value(x));
                assert!(proj.abs() <= 1e-10, "affine projection {proj}");
            }
        }
    }

    #[test]
    fn orthonormal_and_affine_free() {
        check_basis(&DelzantPolytope::unit_interval(), 10);
        check_basis(&DelzantPolytope::interval(3.0, 7.0).unwrap(), 8);
        check_basis(&DelzantPolytope::unit_square(), 8);
        check_basis(&DelzantPolytope::standard_simplex(), 8);
    }

    #[test]
    fn rejects_low_degree() {
        assert_eq!(
            GalerkinBasis::new(&DelzantPolytope::unit_square(), 1).unwrap_err(),
            BasisError::DegreeTooLow(1)
        );
    }
}
