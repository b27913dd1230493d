//! The deformed Abreu operator.
//!
//! At each interior point the potential `u = u_G + v` gives `G = D²u`, and the
//! deformation gives a complex symmetric `H`. With `W = G^{-1}`,
//! `M = W^{1/2} H W^{1/2}` and `N = M*M` (a Hermitian matrix similar to
//! `ᾱα = W H̄ W H`), the tensor
//!
//! ```text
//! T = W^{1/2} (1 + 2t k′(N) N) W^{1/2}
//! ```
//!
//! is Hermitian positive definite and the equation reads `−∂_a∂_b T^{ab} = A`.
//! The Galerkin discretization works with the weak form and the energy
//!
//! ```text
//! HK(u) = ∫_∂P u dσ − ∫_P A u dμ − ∫_P log det G dμ + t ∫_P Σ k(λ_a) dμ,
//! ```
//!
//! whose gradient in the correction coefficients is minus the weak residual.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::GalerkinBasis;
use crate::poly::{Affine, Poly};
use crate::polytope::{DelzantPolytope, Point, PolytopeError};
use crate::spectral::{divided_differences, CMatrix, HermitianEig, SpectralFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("D²u is not positive definite at {x:?} (min eigenvalue {min_eig:e})")]
    NotConvex { x: Point, min_eig: f64 },
    #[error("eigenvalue {lambda} at {x:?} exceeds the admissible bound {bound} of `{name}`")]
    DomainExceeded {
        x: Point,
        name: String,
        lambda: f64,
        bound: f64,
    },
    #[error("finite-difference stencil around {0:?} leaves the polytope")]
    StencilLeavesPolytope(Point),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("deformation matrix is not symmetric")]
    NotSymmetric,
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

fn hess_matrix(h: [[f64; 2]; 2], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |a, b| h[a][b])
}

/// The field `H = D²h`, either constant or the Hessian of a complex polynomial `h = re + i·im`.
#[derive(Clone, Debug, PartialEq)]
pub enum DeformationHessian {
    Constant(CMatrix),
    Potential { re: Poly, im: Poly },
}

impl DeformationHessian {
    pub fn zero(dim: usize) -> Self {
        DeformationHessian::Constant(CMatrix::zeros(dim, dim))
    }

    pub fn constant(h: CMatrix) -> Result<Self, OperatorError> {
        if h.nrows() != h.ncols() || h.nrows() == 0 || h.nrows() > 2 {
            return Err(OperatorError::DimensionMismatch(format!(
                "deformation matrix is {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if h != h.transpose() {
            return Err(OperatorError::NotSymmetric);
        }
        Ok(DeformationHessian::Constant(h))
    }

    pub fn constant_real(h: &DMatrix<f64>) -> Result<Self, OperatorError> {
        Self::constant(to_complex(h))
    }

    pub fn from_potential(re: Poly, im: Poly) -> Result<Self, OperatorError> {
        if re.dim() != im.dim() {
            return Err(OperatorError::DimensionMismatch("real and imaginary parts".into()));
        }
        Ok(DeformationHessian::Potential { re, im })
    }

    pub fn dim(&self) -> usize {
        match self {
            DeformationHessian::Constant(h) => h.nrows(),
            DeformationHessian::Potential { re, .. } => re.dim(),
        }
    }

    pub fn at(&self, x: &Point) -> CMatrix {
        match self {
            DeformationHessian::Constant(h) => h.clone(),
            DeformationHessian::Potential { re, im } => {
                let d = re.dim();
                let (hr, hi) = (re.hessian(x), im.hessian(x));
                CMatrix::from_fn(d, d, |a, b| Complex64::new(hr[a][b], hi[a][b]))
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            DeformationHessian::Constant(h) => DeformationHessian::Constant(h * Complex64::new(s, 0.0)),
            DeformationHessian::Potential { re, im } => DeformationHessian::Potential {
                re: re.scaled(s),
                im: im.scaled(s),
            },
        }
    }
}

/// `u = u_G + v` with `v` a polynomial correction.
#[derive(Clone, Debug)]
pub struct PotentialField {
    polytope: Arc<DelzantPolytope>,
    correction: Poly,
}

impl PotentialField {
    pub fn new(polytope: Arc<DelzantPolytope>, correction: Poly) -> Result<Self, OperatorError> {
        if polytope.dim() != correction.dim() {
            return Err(OperatorError::DimensionMismatch("potential and polytope".into()));
        }
        Ok(PotentialField { polytope, correction })
    }

    pub fn guillemin(polytope: Arc<DelzantPolytope>) -> Self {
        let dim = polytope.dim();
        PotentialField {
            polytope,
            correction: Poly::zero(dim, 0),
        }
    }

    pub fn polytope(&self) -> &DelzantPolytope {
        &self.polytope
    }

    pub fn correction(&self) -> &Poly {
        &self.correction
    }

    pub fn value(&self, x: &Point) -> Result<f64, OperatorError> {
        Ok(self.polytope.guillemin().value(x)? + self.correction.value(x))
    }

    pub fn gradient(&self, x: &Point) -> Result<Point, OperatorError> {
        let g = self.polytope.guillemin().gradient(x)?;
        let v = self.correction.gradient(x);
        Ok([g[0] + v[0], g[1] + v[1]])
    }

    /// `G = D²u`.
    pub fn hessian(&self, x: &Point) -> Result<DMatrix<f64>, OperatorError> {
        let d = self.polytope.dim();
        Ok(self.polytope.guillemin().hessian(x)? + hess_matrix(self.correction.hessian(x), d))
    }
}

/// Eigen-data of a symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactors {
    pub min_eig: f64,
    pub max_eig: f64,
    pub log_det: f64,
    pub sqrt: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
    pub inv: DMatrix<f64>,
}

/// Returns `Err(min_eig)` when `g` is not positive definite.
pub fn spd_factors(g: &DMatrix<f64>) -> Result<SpdFactors, f64> {
    let sym = (g + g.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > 0.0) {
        return Err(min_eig);
    }
    let v = &eig.eigenvectors;
    let build = |f: &dyn Fn(f64) -> f64| {
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
        v * d * v.transpose()
    };
    Ok(SpdFactors {
        min_eig,
        max_eig: eig.eigenvalues.max(),
        log_det: eig.eigenvalues.iter().map(|l| l.ln()).sum(),
        sqrt: build(&|l| l.sqrt()),
        inv_sqrt: build(&|l| 1.0 / l.sqrt()),
        inv: build(&|l| 1.0 / l),
    })
}

/// Pointwise tensor data.
#[derive(Clone, Debug)]
pub struct TensorSample {
    pub x: Point,
    pub g: DMatrix<f64>,
    pub factors: SpdFactors,
    /// The deformation actually used (after any continuation scaling).
    pub h: CMatrix,
    pub m: CMatrix,
    pub n: CMatrix,
    pub eig: HermitianEig,
    /// `T`, Hermitian positive definite.
    pub tensor: CMatrix,
    pub lambda_max: f64,
    pub min_eig_t: f64,
    /// Weight `t` of the deformation term.
    pub weight: f64,
}

impl TensorSample {
    pub fn min_eig_g(&self) -> f64 {
        self.factors.min_eig
    }

    /// `Σ k(λ_a)`.
    pub fn spectral_value(&self, k: &SpectralFunction) -> f64 {
        self.eig.values.iter().map(|&l| k.k(l.max(0.0))).sum()
    }
}

/// Builds the tensor data from `G` and `H`. Eigenvalues of `N` must stay below
/// `min(domain_bound, lambda_sup - margin)` whenever `weight > 0`.
pub fn sample_from_matrices(
    x: Point,
    g: DMatrix<f64>,
    h: CMatrix,
    k: &SpectralFunction,
    weight: f64,
    margin: f64,
) -> Result<TensorSample, OperatorError> {
    let factors = spd_factors(&g).map_err(|min_eig| OperatorError::NotConvex { x, min_eig })?;
    let w_half = to_complex(&factors.inv_sqrt);
    let m = &w_half * &h * &w_half;
    let n = hermitian_part(&(m.adjoint() * &m));
    let eig = HermitianEig::new(&n);
    let lambda_max = eig.lambda_max();
    if weight > 0.0 {
        let bound = k.domain_bound().min(k.lambda_sup() - margin);
        if !(lambda_max < bound) {
            return Err(OperatorError::DomainExceeded {
                x,
                name: k.name(),
                lambda: lambda_max,
                bound,
            });
        }
    }
    let d = g.nrows();
    let inner = CMatrix::identity(d, d)
        + eig.apply(|l| l * k.dk(l)) * Complex64::new(2.0 * weight, 0.0);
    let tensor = hermitian_part(&(&w_half * inner * &w_half));
    let min_eig_t = HermitianEig::new(&tensor).values[0];
    Ok(TensorSample {
        x,
        g,
        factors,
        h,
        m,
        n,
        eig,
        tensor,
        lambda_max,
        min_eig_t,
        weight,
    })
}

/// Tensor data of `(u, H, k)` at an interior point, with full deformation weight.
pub fn tensor_sample(
    u: &PotentialField,
    h: &DeformationHessian,
    k: &SpectralFunction,
    x: &Point,
) -> Result<TensorSample, OperatorError> {
    tensor_sample_weighted(u, h, k, x, 1.0)
}

pub fn tensor_sample_weighted(
    u: &PotentialField,
    h: &DeformationHessian,
    k: &SpectralFunction,
    x: &Point,
    weight: f64,
) -> Result<TensorSample, OperatorError> {
    if h.dim() != u.polytope().dim() {
        return Err(OperatorError::DimensionMismatch("deformation and polytope".into()));
    }
    sample_from_matrices(*x, u.hessian(x)?, h.at(x), k, weight, 0.0)
}

/// `ᾱα = G^{-1} H̄ G^{-1} H`, a non-Hermitian matrix with the spectrum of `N`.
pub fn alpha_bar_alpha(g: &DMatrix<f64>, h: &CMatrix) -> CMatrix {
    let w = to_complex(&g.clone().try_inverse().expect("G must be invertible"));
    let hbar = h.map(|z| z.conj());
    &w * hbar * &w * h
}

/// Derivative of `T` along `G ↦ G + εE` at a sample (fixed `H`, `k`, weight).
pub struct TensorDerivative {
    w: CMatrix,
    hbar_w_h: Option<(CMatrix, CMatrix)>,
    v: CMatrix,
    v_inv: CMatrix,
    gamma: CMatrix,
    hq: CMatrix,
    weight: f64,
}

impl TensorDerivative {
    pub fn new(s: &TensorSample, k: &SpectralFunction) -> Self {
        let w = to_complex(&s.factors.inv);
        let active = s.weight > 0.0 && s.h.iter().any(|z| z.norm() > 0.0);
        let v = to_complex(&s.factors.inv_sqrt) * &s.eig.vectors;
        let v_inv = s.eig.vectors.adjoint() * to_complex(&s.factors.sqrt);
        let hmap = k.weighted_gradient_map();
        let gamma = divided_differences(&s.eig.values, &hmap).map(|g| Complex64::new(g, 0.0));
        // h(Q) = V h(Λ) V^{-1} with h(λ) = λ k′(λ)
        let diag = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            s.eig.dim(),
            s.eig.values.iter().map(|&l| Complex64::new(l * k.dk(l), 0.0)),
        ));
        let hq = &v * diag * &v_inv;
        let hbar = s.h.map(|z| z.conj());
        TensorDerivative {
            hbar_w_h: active.then(|| (hbar, s.h.clone())),
            w,
            v,
            v_inv,
            gamma,
            hq,
            weight: s.weight,
        }
    }

    /// `dT[E]` for a real symmetric `E`.
    pub fn apply(&self, e: &DMatrix<f64>) -> CMatrix {
        let ec = to_complex(e);
        let dw = -(&self.w * &ec * &self.w);
        let Some((hbar, h)) = &self.hbar_w_h else {
            return dw;
        };
        let dq = &dw * hbar * &self.w * h + &self.w * hbar * &dw * h;
        let mut inner = &self.v_inv * dq * &self.v;
        inner.component_mul_assign(&self.gamma);
        let dh = &self.v * inner * &self.v_inv;
        let two_t = Complex64::new(2.0 * self.weight, 0.0);
        &dw + (dh * &self.w + &self.hq * &dw) * two_t
    }
}

/// `Re tr(T E)` for real symmetric `E`.
fn pair_re(t: &CMatrix, e: &DMatrix<f64>) -> f64 {
    t.iter().zip(e.iter()).map(|(a, b)| a.re * b).sum()
}

/// How the continuation parameter `t ∈ [0, 1]` enters the equation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuation {
    /// `T = W + 2t k′(Q) Q W`: the deformation term carries energy weight `t`.
    #[default]
    EnergyWeight,
    /// `H ↦ √t H` at full weight.
    ScaleDeformation,
}

impl Continuation {
    /// `(weight, deformation scale)` at parameter `t`.
    pub fn parameters(self, t: f64) -> (f64, f64) {
        match self {
            Continuation::EnergyWeight => (t, 1.0),
            Continuation::ScaleDeformation => (1.0, t.max(0.0).sqrt()),
        }
    }
}

/// Equation data independent of the discretization.
#[derive(Clone, Debug)]
pub struct Problem {
    pub polytope: Arc<DelzantPolytope>,
    pub deformation: DeformationHessian,
    pub spectral: SpectralFunction,
    pub affine: Affine,
}

impl Problem {
    pub fn new(
        polytope: Arc<DelzantPolytope>,
        deformation: DeformationHessian,
        spectral: SpectralFunction,
        affine: Affine,
    ) -> Result<Self, OperatorError> {
        if deformation.dim() != polytope.dim() {
            return Err(OperatorError::DimensionMismatch("deformation and polytope".into()));
        }
        Ok(Problem {
            polytope,
            deformation,
            spectral,
            affine,
        })
    }
}

#[derive(Clone, Debug)]
struct InteriorNode {
    x: Point,
    w: f64,
    g_base: DMatrix<f64>,
    h: CMatrix,
    a: f64,
    phi: Vec<f64>,
    hess: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
struct BoundaryNode {
    w: f64,
    phi: Vec<f64>,
}

/// Feasibility margins over the interior nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub min_eig_g: f64,
    pub lambda_max: f64,
    pub min_eig_t: f64,
}

/// Output of [`Discretization::energy_gradient_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub fd_derivative: f64,
    pub minus_residual: f64,
    pub discrepancy: f64,
}

/// Output of [`Discretization::galerkin_jacobian`].
#[derive(Clone, Debug)]
pub struct JacobianReport {
    /// Symmetrized finite-difference Hessian of the energy.
    pub matrix: DMatrix<f64>,
    /// `‖Jᵀ − J‖ / ‖J‖` before symmetrization.
    pub asymmetry: f64,
}

/// Galerkin discretization: a basis, quadrature rules and cached node data.
///
/// States are coefficient vectors `c`, standing for `u = u_G + v₀ + Σ c_j φ_j`
/// where `v₀` is a fixed offset polynomial (zero by default).
#[derive(Clone, Debug)]
pub struct Discretization {
    problem: Problem,
    basis: GalerkinBasis,
    offset: Poly,
    quad_order: usize,
    weight: f64,
    scale: f64,
    interior: Vec<InteriorNode>,
    boundary: Vec<BoundaryNode>,
}

/// Feasibility margin on `λ_max` used when a state is explored by a line search.
pub const LAMBDA_MARGIN: f64 = 1e-6;

impl Discretization {
    pub fn new(problem: Problem, basis: GalerkinBasis, quad_order: usize) -> Result<Self, OperatorError> {
        Self::with_offset(problem, basis, quad_order, None)
    }

    pub fn with_offset(
        problem: Problem,
        basis: GalerkinBasis,
        quad_order: usize,
        offset: Option<Poly>,
    ) -> Result<Self, OperatorError> {
        let p = problem.polytope.clone();
        let dim = p.dim();
        if basis.dim() != dim {
            return Err(OperatorError::DimensionMismatch("basis and polytope".into()));
        }
        let offset = offset.unwrap_or_else(|| Poly::zero(dim, 0));
        let rule = p.interior_quadrature(quad_order)?;
        let guillemin = p.guillemin();
        let interior = rule
            .nodes
            .par_iter()
            .zip(rule.weights.par_iter())
            .map(|(x, &w)| {
                let mut phi = Vec::with_capacity(basis.len());
                let mut hess = Vec::with_capacity(basis.len());
                for f in basis.functions() {
                    let (v, _, h) = f.eval_all(x);
                    phi.push(v);
                    hess.push(hess_matrix(h, dim));
                }
                let g_base = guillemin.hessian(x)? + hess_matrix(offset.hessian(x), dim);
                Ok(InteriorNode {
                    x: *x,
                    w,
                    g_base,
                    h: problem.deformation.at(x),
                    a: problem.affine.value(x),
                    phi,
                    hess,
                })
            })
            .collect::<Result<Vec<_>, OperatorError>>()?;
        let brule = p.boundary_quadrature(quad_order)?;
        let boundary = brule
            .nodes
            .iter()
            .zip(&brule.weights)
            .map(|(x, &w)| BoundaryNode {
                w,
                phi: basis.functions().iter().map(|f| f.value(x)).collect(),
            })
            .collect();
        Ok(Discretization {
            problem,
            basis,
            offset,
            quad_order,
            weight: 1.0,
            scale: 1.0,
            interior,
            boundary,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn basis(&self) -> &GalerkinBasis {
        &self.basis
    }

    pub fn offset(&self) -> &Poly {
        &self.offset
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.interior.len()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Sets the deformation weight `t` and the scale applied to `H`.
    pub fn set_deformation(&mut self, weight: f64, scale: f64) {
        self.weight = weight;
        self.scale = scale;
    }

    pub fn set_parameter(&mut self, t: f64, mode: Continuation) {
        let (w, s) = mode.parameters(t);
        self.set_deformation(w, s);
    }

    /// The potential represented by `c`.
    pub fn potential(&self, c: &[f64]) -> PotentialField {
        let v = self.offset.axpy(1.0, &self.basis.combine(c));
        PotentialField {
            polytope: self.problem.polytope.clone(),
            correction: v,
        }
    }

    /// The deformation field with the current scale applied.
    pub fn deformation(&self) -> DeformationHessian {
        self.problem.deformation.scaled(self.scale)
    }

    fn g_at(&self, node: &InteriorNode, c: &[f64]) -> DMatrix<f64> {
        let mut g = node.g_base.clone();
        for (cj, e) in c.iter().zip(&node.hess) {
            if *cj != 0.0 {
                g += e * *cj;
            }
        }
        g
    }

    fn sample_node(&self, node: &InteriorNode, c: &[f64], margin: f64) -> Result<TensorSample, OperatorError> {
        let h = if self.scale == 1.0 {
            node.h.clone()
        } else {
            &node.h * Complex64::new(self.scale, 0.0)
        };
        sample_from_matrices(node.x, self.g_at(node, c), h, &self.problem.spectral, self.weight, margin)
    }

    fn check_len(&self, c: &[f64]) {
        assert_eq!(c.len(), self.basis.len(), "coefficient vector has the wrong length");
    }

    /// Tensor samples at all interior nodes.
    pub fn samples(&self, c: &[f64]) -> Result<Vec<TensorSample>, OperatorError> {
        self.samples_with_margin(c, 0.0)
    }

    fn samples_with_margin(&self, c: &[f64], margin: f64) -> Result<Vec<TensorSample>, OperatorError> {
        self.check_len(c);
        self.interior
            .par_iter()
            .map(|n| self.sample_node(n, c, margin))
            .collect()
    }

    pub fn margins(&self, c: &[f64]) -> Result<Margins, OperatorError> {
        Ok(margins_of(&self.samples(c)?))
    }

    /// Whether `c` is strictly feasible: `G` positive definite and `λ_max` below the domain margin.
    pub fn is_feasible(&self, c: &[f64]) -> bool {
        self.samples_with_margin(c, LAMBDA_MARGIN).is_ok()
    }

    /// `r_j = ∫ Re tr(T D²φ_j) dμ − ∫_∂P φ_j dσ + ∫ A φ_j dμ`.
    pub fn weak_residual(&self, c: &[f64]) -> Result<DVector<f64>, OperatorError> {
        let samples = self.samples(c)?;
        Ok(self.residual_from_samples(&samples))
    }

    pub fn residual_from_samples(&self, samples: &[TensorSample]) -> DVector<f64> {
        let nb = self.basis.len();
        let parts: Vec<Vec<f64>> = self
            .interior
            .par_iter()
            .zip(samples.par_iter())
            .map(|(node, s)| {
                (0..nb)
                    .map(|j| node.w * (pair_re(&s.tensor, &node.hess[j]) + node.a * node.phi[j]))
                    .collect()
            })
            .collect();
        let mut r = DVector::zeros(nb);
        for p in &parts {
            for (rj, v) in r.iter_mut().zip(p) {
                *rj += v;
            }
        }
        for b in &self.boundary {
            for (rj, v) in r.iter_mut().zip(&b.phi) {
                *rj -= b.w * v;
            }
        }
        r
    }

    /// Weak residual against arbitrary test polynomials (e.g. affine functions).
    pub fn residual_against(&self, c: &[f64], tests: &[Poly]) -> Result<Vec<f64>, OperatorError> {
        let samples = self.samples(c)?;
        let p = &self.problem.polytope;
        let dim = p.dim();
        let brule = p.boundary_quadrature(self.quad_order)?;
        Ok(tests
            .iter()
            .map(|phi| {
                let interior: f64 = self
                    .interior
                    .iter()
                    .zip(&samples)
                    .map(|(node, s)| {
                        let (v, _, h) = phi.eval_all(&node.x);
                        node.w * (pair_re(&s.tensor, &hess_matrix(h, dim)) + node.a * v)
                    })
                    .sum();
                interior - brule.integrate(|x| phi.value(x))
            })
            .collect())
    }

    /// `HK(c) − HK(c_ref)`; every term is a bounded integrand.
    pub fn energy_between(&self, c: &[f64], c_ref: &[f64]) -> Result<f64, OperatorError> {
        self.energy_between_with_margin(c, c_ref, 0.0)
    }

    /// As [`Self::energy_between`], with `λ_max` required below `lambda_sup − margin`.
    pub fn energy_between_with_margin(&self, c: &[f64], c_ref: &[f64], margin: f64) -> Result<f64, OperatorError> {
        self.check_len(c);
        self.check_len(c_ref);
        let dc: Vec<f64> = c.iter().zip(c_ref).map(|(a, b)| a - b).collect();
        let k = &self.problem.spectral;
        let weight = self.weight;
        let parts: Vec<f64> = self
            .interior
            .par_iter()
            .map(|node| {
                let s = self.sample_node(node, c, margin)?;
                let s_ref = self.sample_node(node, c_ref, margin)?;
                let dv: f64 = dc.iter().zip(&node.phi).map(|(a, b)| a * b).sum();
                let log_ratio = log_det_ratio(&s.g, &s_ref.g, &s_ref.factors.inv);
                let mut e = -node.a * dv - log_ratio;
                if weight > 0.0 {
                    e += weight * (s.spectral_value(k) - s_ref.spectral_value(k));
                }
                Ok(node.w * e)
            })
            .collect::<Result<_, OperatorError>>()?;
        let mut total: f64 = parts.iter().sum();
        for b in &self.boundary {
            total += b.w * dc.iter().zip(&b.phi).map(|(a, v)| a * v).sum::<f64>();
        }
        Ok(total)
    }

    /// `HK(c) − HK(0)`, the energy relative to `u_G + v₀`.
    pub fn energy(&self, c: &[f64]) -> Result<f64, OperatorError> {
        self.energy_between(c, &vec![0.0; self.basis.len()])
    }

    /// Energy relative to `u_G + v₀`, failing when `c` is outside the strict feasible set.
    pub fn energy_feasible(&self, c: &[f64]) -> Result<f64, OperatorError> {
        self.energy_between_with_margin(c, &vec![0.0; self.basis.len()], LAMBDA_MARGIN)
    }

    /// Fourth-order central difference of the energy along `w` compared with `−r(c)·w`.
    pub fn energy_gradient_check(&self, c: &[f64], w: &[f64], step: f64) -> Result<GradientCheck, OperatorError> {
        let at = |s: f64| -> Result<f64, OperatorError> {
            let x: Vec<f64> = c.iter().zip(w).map(|(a, b)| a + s * step * b).collect();
            self.energy_between(&x, c)
        };
        let fd = (8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * step);
        let r = self.weak_residual(c)?;
        let minus_residual = -r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        Ok(GradientCheck {
            fd_derivative: fd,
            minus_residual,
            discrepancy: (fd - minus_residual).abs(),
        })
    }

    /// Analytic Hessian of the energy, `−∂r/∂c`.
    pub fn hessian(&self, c: &[f64]) -> Result<DMatrix<f64>, OperatorError> {
        let samples = self.samples(c)?;
        Ok(self.hessian_from_samples(&samples))
    }

    pub fn hessian_from_samples(&self, samples: &[TensorSample]) -> DMatrix<f64> {
        let nb = self.basis.len();
        let k = &self.problem.spectral;
        let parts: Vec<DMatrix<f64>> = self
            .interior
            .par_iter()
            .zip(samples.par_iter())
            .map(|(node, s)| {
                let d = TensorDerivative::new(s, k);
                let mut local = DMatrix::zeros(nb, nb);
                for j in 0..nb {
                    let dt = d.apply(&node.hess[j]);
                    for i in 0..nb {
                        local[(i, j)] = -node.w * pair_re(&dt, &node.hess[i]);
                    }
                }
                local
            })
            .collect();
        let mut h = DMatrix::zeros(nb, nb);
        for p in &parts {
            h += p;
        }
        (&h + h.transpose()) * 0.5
    }

    /// Fourth-order central finite-difference Jacobian of `−r`, symmetrized, with its asymmetry.
    pub fn galerkin_jacobian(&self, c: &[f64]) -> Result<JacobianReport, OperatorError> {
        let nb = self.basis.len();
        let mut j = DMatrix::zeros(nb, nb);
        for col in 0..nb {
            let h = 1e-5 * (1.0 + c[col].abs());
            let at = |s: f64| -> Result<DVector<f64>, OperatorError> {
                let mut x = c.to_vec();
                x[col] += s * h;
                self.weak_residual(&x)
            };
            let d = ((at(1.0)? - at(-1.0)?) * 8.0 - (at(2.0)? - at(-2.0)?)) / (-12.0 * h);
            j.set_column(col, &d);
        }
        let norm = j.norm();
        let asymmetry = if norm > 0.0 {
            (j.transpose() - &j).norm() / norm
        } else {
            0.0
        };
        Ok(JacobianReport {
            matrix: (&j + j.transpose()) * 0.5,
            asymmetry,
        })
    }
}

pub fn margins_of(samples: &[TensorSample]) -> Margins {
    samples.iter().fold(
        Margins {
            min_eig_g: f64::INFINITY,
            lambda_max: 0.0,
            min_eig_t: f64::INFINITY,
        },
        |m, s| Margins {
            min_eig_g: m.min_eig_g.min(s.min_eig_g()),
            lambda_max: m.lambda_max.max(s.lambda_max),
            min_eig_t: m.min_eig_t.min(s.min_eig_t),
        },
    )
}

/// `log det G − log det G_ref` computed as `log det(1 + G_ref^{-1}(G − G_ref))`.
fn log_det_ratio(g: &DMatrix<f64>, g_ref: &DMatrix<f64>, g_ref_inv: &DMatrix<f64>) -> f64 {
    let m = g_ref_inv * (g - g_ref);
    if m.nrows() == 1 {
        m[(0, 0)].ln_1p()
    } else {
        // det(1 + M) − 1 = tr M + det M for 2×2 M
        (m.trace() + m.determinant()).ln_1p()
    }
}

/// `Σ_ab ∂_a∂_b Re F^{ab}(x)` by fourth-order central differences with step `h`.
pub fn fd_double_divergence(
    polytope: &DelzantPolytope,
    x: &Point,
    h: f64,
    field: impl Fn(&Point) -> Result<CMatrix, OperatorError>,
) -> Result<f64, OperatorError> {
    let dim = polytope.dim();
    if polytope.distance_to_boundary(x) <= 2.0 * h {
        return Err(OperatorError::StencilLeavesPolytope(*x));
    }
    let shifted = |da: f64, db: f64| -> Point { [x[0] + da, x[1] + db] };
    let second = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
    let first = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
    let offsets = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut total = 0.0;
    for a in 0..dim {
        for (o, w) in offsets.iter().zip(&second) {
            let p = if a == 0 { shifted(o * h, 0.0) } else { shifted(0.0, o * h) };
            total += w * field(&p)?[(a, a)].re / (h * h);
        }
    }
    if dim == 2 {
        let mut mixed = 0.0;
        for (oa, wa) in offsets.iter().zip(&first) {
            for (ob, wb) in offsets.iter().zip(&first) {
                if *wa == 0.0 || *wb == 0.0 {
                    continue;
                }
                mixed += wa * wb * field(&shifted(oa * h, ob * h))?[(0, 1)].re;
            }
        }
        total += 2.0 * mixed / (h * h);
    }
    Ok(total)
}

/// Default spatial step for strong-form stencils at `x`.
pub fn default_fd_step(polytope: &DelzantPolytope, x: &Point) -> f64 {
    (1e-3f64).min(polytope.distance_to_boundary(x) / 4.0)
}

/// `−∂_a∂_b T^{ab}(x) − A(x)` by finite differences of the tensor field.
pub fn strong_residual_at(
    u: &PotentialField,
    h: &DeformationHessian,
    k: &SpectralFunction,
    a: &Affine,
    x: &Point,
    fd_step: Option<f64>,
) -> Result<f64, OperatorError> {
    strong_residual_weighted(u, h, k, a, x, fd_step, 1.0)
}

pub fn strong_residual_weighted(
    u: &PotentialField,
    h: &DeformationHessian,
    k: &SpectralFunction,
    a: &Affine,
    x: &Point,
    fd_step: Option<f64>,
    weight: f64,
) -> Result<f64, OperatorError> {
    let p = u.polytope();
    let step = fd_step.unwrap_or_else(|| default_fd_step(p, x));
    let div = fd_double_divergence(p, x, step, |y| Ok(tensor_sample_weighted(u, h, k, y, weight)?.tensor))?;
    Ok(-div - a.value(x))
}

/// The scalar-curvature proxy `−∂_a∂_b (G^{-1})^{ab}(x)`.
pub fn scalar_curvature_proxy(u: &PotentialField, x: &Point, fd_step: Option<f64>) -> Result<f64, OperatorError> {
    let p = u.polytope();
    let step = fd_step.unwrap_or_else(|| default_fd_step(p, x));
    let div = fd_double_divergence(p, x, step, |y| {
        let g = u.hessian(y)?;
        let f = spd_factors(&g).map_err(|min_eig| OperatorError::NotConvex { x: *y, min_eig })?;
        Ok(to_complex(&f.inv))
    })?;
    Ok(-div)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn interval() -> Arc<DelzantPolytope> {
        Arc::new(DelzantPolytope::unit_interval())
    }

    #[test]
    fn trivial_tensor_cases() {
        let k = SpectralFunction::hyperkahler();
        let g = DMatrix::identity(2, 2);
        let s = sample_from_matrices([0.0; 2], g.clone(), CMatrix::zeros(2, 2), &k, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!((s.tensor - CMatrix::identity(2, 2)).norm(), 0.0, epsilon = 1e-15);

        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, -0.6]));
        let s = sample_from_matrices([0.0; 2], g, to_complex(&h), &k, 1.0, 0.0).unwrap();
        for (a, ha) in [0.3f64, -0.6].iter().enumerate() {
            let l = ha * ha;
            assert_abs_diff_eq!(s.tensor[(a, a)].re, 1.0 + 2.0 * k.dk(l) * l, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(s.tensor[(0, 1)].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn midpoint_tensor_on_interval() {
        let u = PotentialField::guillemin(interval());
        let s = tensor_sample(&u, &DeformationHessian::zero(1), &SpectralFunction::linear(), &[0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(s.tensor[(0, 0)].re, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn domain_and_convexity_errors() {
        let k = SpectralFunction::hyperkahler();
        let g = DMatrix::identity(1, 1);
        let h = CMatrix::from_element(1, 1, Complex64::new(1.5, 0.0));
        assert!(matches!(
            sample_from_matrices([0.0; 2], g.clone(), h.clone(), &k, 1.0, 0.0),
            Err(OperatorError::DomainExceeded { .. })
        ));
        // the deformation term is switched off at zero weight
        assert!(sample_from_matrices([0.0; 2], g, h, &k, 0.0, 0.0).is_ok());
        let bad = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(
            sample_from_matrices([0.0; 2], bad, CMatrix::zeros(1, 1), &k, 1.0, 0.0),
            Err(OperatorError::NotConvex { .. })
        ));
    }

    #[test]
    fn log_det_ratio_matches_direct() {
        let g: DMatrix<f64> = DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, 2.0]);
        let r: DMatrix<f64> = DMatrix::from_row_slice(2, 2, &[2.0, -0.1, -0.1, 1.5]);
        let direct = g.determinant().ln() - r.determinant().ln();
        let inv = r.clone().try_inverse().unwrap();
        assert_abs_diff_eq!(log_det_ratio(&g, &r, &inv), direct, epsilon = 1e-14);
    }

    #[test]
    fn deformation_from_potential() {
        let re = Poly::from_terms(2, &[(2, 0, 0.5), (1, 1, 0.2)]);
        let im = Poly::from_terms(2, &[(0, 2, -1.0)]);
        let h = DeformationHessian::from_potential(re, im).unwrap();
        let m = h.at(&[0.3, 0.3]);
        assert_eq!(m[(0, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(m[(0, 1)], Complex64::new(0.2, 0.0));
        assert_eq!(m[(1, 1)], Complex64::new(0.0, -2.0));
        assert!(DeformationHessian::constant(CMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(1.0, 0.0), Complex64::new(0.1, 0.0), Complex64::new(0.2, 0.0), Complex64::new(1.0, 0.0)]
        ))
        .is_err());
    }
}
