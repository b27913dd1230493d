//! Spectral functions `f(N) = Σ_a k(λ_a)` of Hermitian matrices and their
//! first derivatives.
//!
//! The catalogue holds the convex non-decreasing scalars `k` used by the
//! deformed equation. Matrix calculus goes through a single primitive, the
//! Hermitian eigendecomposition: `f′(N) = U diag(k′(λ)) U*`, and directional
//! derivatives of `h(N)` use the divided-difference (Daleckii–Krein) formula.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type CMatrix = DMatrix<Complex64>;

/// Relative eigenvalue gap below which two eigenvalues are treated as equal.
pub const DEGENERACY_GAP: f64 = 1e-8;

/// The hyperkähler potential is only used strictly below `1 - HYPERKAHLER_GUARD`.
pub const HYPERKAHLER_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("unknown spectral function `{0}`")]
    UnknownSpectralFunction(String),
    #[error("eigenvalue {lambda} outside the domain of `{name}` (must be < {bound})")]
    DomainExceeded { name: String, lambda: f64, bound: f64 },
    #[error("polynomial k is not convex and non-decreasing on [0, {0}]")]
    NotConvexNondecreasing(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralKind {
    /// `k(λ) = λ`
    Linear,
    /// `k(λ) = λ²/2`
    Quadratic,
    /// `k(λ) = 1 - √(1-λ) + log((1 + √(1-λ))/2)`, for `λ < 1`.
    Hyperkahler,
    /// `k(λ) = Σ a_i λ^i`.
    Polynomial(Vec<f64>),
}

/// A convex, non-decreasing scalar `k` together with `k′`, `k″`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralFunction {
    kind: SpectralKind,
}

/// Grid extent used to certify convexity of polynomial `k` (which has no finite domain bound).
const POLY_CHECK_EXTENT: f64 = 100.0;

impl SpectralFunction {
    pub fn builtin(name: &str) -> Result<Self, SpectralError> {
        let kind = match name {
            "linear" => SpectralKind::Linear,
            "quadratic" => SpectralKind::Quadratic,
            "hyperkahler" => SpectralKind::Hyperkahler,
            other => return Err(SpectralError::UnknownSpectralFunction(other.to_string())),
        };
        Ok(SpectralFunction { kind })
    }

    pub fn linear() -> Self {
        SpectralFunction {
            kind: SpectralKind::Linear,
        }
    }

    pub fn quadratic() -> Self {
        SpectralFunction {
            kind: SpectralKind::Quadratic,
        }
    }

    pub fn hyperkahler() -> Self {
        SpectralFunction {
            kind: SpectralKind::Hyperkahler,
        }
    }

    /// Custom `k` from polynomial coefficients `a_0, a_1, …`; derivatives are exact.
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self, SpectralError> {
        let k = SpectralFunction {
            kind: SpectralKind::Polynomial(coeffs),
        };
        if !k.is_convex_nondecreasing_on_grid(1000) {
            return Err(SpectralError::NotConvexNondecreasing(POLY_CHECK_EXTENT));
        }
        Ok(k)
    }

    pub fn builtins() -> Vec<SpectralFunction> {
        vec![Self::linear(), Self::quadratic(), Self::hyperkahler()]
    }

    pub fn kind(&self) -> &SpectralKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            SpectralKind::Linear => "linear".into(),
            SpectralKind::Quadratic => "quadratic".into(),
            SpectralKind::Hyperkahler => "hyperkahler".into(),
            SpectralKind::Polynomial(c) => format!("polynomial{c:?}"),
        }
    }

    /// Least upper bound of the domain of `k`.
    pub fn lambda_sup(&self) -> f64 {
        match self.kind {
            SpectralKind::Hyperkahler => 1.0,
            _ => f64::INFINITY,
        }
    }

    /// Largest eigenvalue accepted before reporting [`SpectralError::DomainExceeded`].
    pub fn domain_bound(&self) -> f64 {
        match self.kind {
            SpectralKind::Hyperkahler => 1.0 - HYPERKAHLER_GUARD,
            _ => f64::INFINITY,
        }
    }

    pub fn check_domain(&self, lambda: f64) -> Result<(), SpectralError> {
        if lambda >= self.domain_bound() || lambda.is_nan() {
            return Err(SpectralError::DomainExceeded {
                name: self.name(),
                lambda,
                bound: self.domain_bound(),
            });
        }
        Ok(())
    }

    pub fn k(&self, lambda: f64) -> f64 {
        match &self.kind {
            SpectralKind::Linear => lambda,
            SpectralKind::Quadratic => 0.5 * lambda * lambda,
            SpectralKind::Hyperkahler => {
                let s = (1.0 - lambda).sqrt();
                1.0 - s + ((1.0 + s) / 2.0).ln()
            }
            SpectralKind::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &a| acc * lambda + a),
        }
    }

    pub fn dk(&self, lambda: f64) -> f64 {
        match &self.kind {
            SpectralKind::Linear => 1.0,
            SpectralKind::Quadratic => lambda,
            SpectralKind::Hyperkahler => 1.0 / (2.0 * (1.0 + (1.0 - lambda).sqrt())),
            SpectralKind::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (i, &a)| acc * lambda + i as f64 * a),
        }
    }

    pub fn d2k(&self, lambda: f64) -> f64 {
        match &self.kind {
            SpectralKind::Linear => 0.0,
            SpectralKind::Quadratic => 1.0,
            SpectralKind::Hyperkahler => {
                let s = (1.0 - lambda).sqrt();
                1.0 / (4.0 * s * (1.0 + s) * (1.0 + s))
            }
            SpectralKind::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (i, &a)| acc * lambda + (i * (i - 1)) as f64 * a),
        }
    }

    /// Checks `k′ ≥ 0` and `k″ ≥ 0` on `n` equispaced points of the domain.
    pub fn is_convex_nondecreasing_on_grid(&self, n: usize) -> bool {
        let top = match self.lambda_sup() {
            s if s.is_finite() => self.domain_bound(),
            _ => POLY_CHECK_EXTENT,
        };
        (0..n).all(|i| {
            let lambda = top * i as f64 / n as f64;
            self.dk(lambda) >= 0.0 && self.d2k(lambda) >= 0.0
        })
    }

    /// `k′` as a scalar map (its derivative is `k″`).
    pub fn gradient_map(&self) -> impl ScalarMap + '_ {
        FnMap(|x| self.dk(x), |x| self.d2k(x))
    }

    /// `λ ↦ λ k′(λ)`, the scalar behind `f′(N) N`.
    pub fn weighted_gradient_map(&self) -> impl ScalarMap + '_ {
        FnMap(|x| x * self.dk(x), |x| self.dk(x) + x * self.d2k(x))
    }
}

/// A differentiable scalar function used in spectral calculus.
pub trait ScalarMap {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

/// Adapter turning a pair of closures `(h, h′)` into a [`ScalarMap`].
pub struct FnMap<F, G>(pub F, pub G);

impl<F: Fn(f64) -> f64, G: Fn(f64) -> f64> ScalarMap for FnMap<F, G> {
    fn value(&self, x: f64) -> f64 {
        (self.0)(x)
    }
    fn derivative(&self, x: f64) -> f64 {
        (self.1)(x)
    }
}

/// Eigendecomposition `N = U diag(λ) U*` with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEig {
    pub fn new(n: &CMatrix) -> Self {
        let eig = SymmetricEigen::new(n.clone());
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMatrix::from_fn(n.nrows(), n.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
        HermitianEig { values, vectors }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `U diag(h(λ)) U*`.
    pub fn apply(&self, h: impl Fn(f64) -> f64) -> CMatrix {
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.dim(),
            self.values.iter().map(|&l| Complex64::new(h(l), 0.0)),
        ));
        &self.vectors * d * self.vectors.adjoint()
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.apply(|l| l)
    }
}

/// First divided differences `Γ_ab` of `h` on the spectrum.
pub fn divided_differences(values: &[f64], h: &impl ScalarMap) -> DMatrix<f64> {
    let n = values.len();
    DMatrix::from_fn(n, n, |a, b| {
        let (la, lb) = (values[a], values[b]);
        if a == b || (la - lb).abs() < DEGENERACY_GAP * (la.abs() + lb.abs()).max(1.0) {
            h.derivative(0.5 * (la + lb))
        } else {
            (h.value(la) - h.value(lb)) / (la - lb)
        }
    })
}

/// `U (Γ ∘ (U* E U)) U*`, the derivative of `h` at `N` in direction `E`.
pub fn loewner_from_eig(eig: &HermitianEig, e: &CMatrix, h: &impl ScalarMap) -> CMatrix {
    let u = &eig.vectors;
    let gamma = divided_differences(&eig.values, h);
    let mut inner = u.adjoint() * e * u;
    inner.component_mul_assign(&gamma.map(|g| Complex64::new(g, 0.0)));
    u * inner * u.adjoint()
}

/// `f(N) = Σ k(λ_a)`.
pub fn eval_f(eigs: &[f64], k: &SpectralFunction) -> Result<f64, SpectralError> {
    eigs.iter().try_fold(0.0, |acc, &l| {
        k.check_domain(l)?;
        Ok(acc + k.k(l))
    })
}

/// `f′(N) = U diag(k′(λ_a)) U*`.
pub fn matrix_gradient(n: &CMatrix, k: &SpectralFunction) -> Result<CMatrix, SpectralError> {
    let eig = HermitianEig::new(n);
    k.check_domain(eig.lambda_max())?;
    Ok(eig.apply(|l| k.dk(l)))
}

/// `d/dt|₀ h(N + tE)` for Hermitian `N`, `E`, with `h = k′` checked against the domain of `k`.
pub fn loewner_derivative(
    n: &CMatrix,
    e: &CMatrix,
    h: &impl ScalarMap,
    k: &SpectralFunction,
) -> Result<CMatrix, SpectralError> {
    let eig = HermitianEig::new(n);
    k.check_domain(eig.lambda_max())?;
    Ok(loewner_from_eig(&eig, e, h))
}
