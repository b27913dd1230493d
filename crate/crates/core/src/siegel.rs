//! Compatible complex structures on `(ℝ^{2n}, Ω₀)`, the Siegel upper half
//! space, and the spectral potential `f = Σ k(λ_a)` with
//! `λ_a` the eigenvalues of `Y^{-1/2} S Y^{-1} S̄ Y^{-1/2}`, `Y = Im Z`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{divided_differences, CMatrix, HermitianEig, SpectralError, SpectralFunction};

pub const MAX_DIM: usize = 4;
const TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SiegelError {
    #[error("dimension n = {0} outside 1..=4")]
    UnsupportedDimension(usize),
    #[error("matrix is not symplectic (defect {0:e})")]
    NotSymplectic(f64),
    #[error("J is not a compatible complex structure (defect {0:e})")]
    NotCompatible(f64),
    #[error("square root of Ω₀J is not symplectic (defect {0:e})")]
    SqrtNotSymplectic(f64),
    #[error("CZ + D is singular")]
    SingularDenominator,
    #[error("A is not tangent at J (defect {0:e})")]
    NotTangent(f64),
    #[error("tangent vector is not in block form at the base point (defect {0:e})")]
    NotBaseTangent(f64),
    #[error("matrix is not in the Siegel upper half space")]
    NotInSiegel,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

fn check_dim(n: usize) -> Result<(), SiegelError> {
    if (1..=MAX_DIM).contains(&n) {
        Ok(())
    } else {
        Err(SiegelError::UnsupportedDimension(n))
    }
}

/// `Ω₀ = [[0, I], [−I, 0]]`.
pub fn omega0(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        if c == r + n {
            1.0
        } else if r == c + n {
            -1.0
        } else {
            0.0
        }
    })
}

fn block(m: &DMatrix<f64>, n: usize, r: usize, c: usize) -> DMatrix<f64> {
    m.view((r * n, c * n), (n, n)).into_owned()
}

fn to_c(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.norm().max(1.0)
}

/// `‖gᵀ Ω₀ g − Ω₀‖`.
pub fn symplectic_defect(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows() / 2;
    let o = omega0(n);
    (g.transpose() * &o * g - &o).norm()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticMatrix {
    g: DMatrix<f64>,
}

impl SymplecticMatrix {
    pub fn new(g: DMatrix<f64>) -> Result<Self, SiegelError> {
        if g.nrows() != g.ncols() || g.nrows() % 2 != 0 {
            return Err(SiegelError::UnsupportedDimension(g.nrows() / 2));
        }
        check_dim(g.nrows() / 2)?;
        let defect = symplectic_defect(&g);
        if defect > TOL * scale_of(&g).powi(2) {
            return Err(SiegelError::NotSymplectic(defect));
        }
        Ok(SymplecticMatrix { g })
    }

    pub fn identity(n: usize) -> Self {
        SymplecticMatrix {
            g: DMatrix::identity(2 * n, 2 * n),
        }
    }

    pub fn n(&self) -> usize {
        self.g.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// `g^{-1} = −Ω₀ gᵀ Ω₀`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let o = omega0(self.n());
        -(&o * self.g.transpose() * &o)
    }

    pub fn compose(&self, other: &SymplecticMatrix) -> SymplecticMatrix {
        SymplecticMatrix { g: &self.g * &other.g }
    }

    /// `(A, B, C, D)` with `g = [[A, B], [C, D]]`.
    pub fn blocks(&self) -> [DMatrix<f64>; 4] {
        let n = self.n();
        [block(&self.g, n, 0, 0), block(&self.g, n, 0, 1), block(&self.g, n, 1, 0), block(&self.g, n, 1, 1)]
    }
}

/// `exp(Ω₀ S₀)` for a random symmetric `S₀` with `‖S₀‖_F ≤ scale`.
pub fn random_symplectic(n: usize, seed: u64, scale: f64) -> Result<SymplecticMatrix, SiegelError> {
    check_dim(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(2 * n, 2 * n, |_, _| rng.gen_range(-1.0..1.0));
    let sym = (&raw + raw.transpose()) * 0.5;
    let norm = sym.norm();
    let radius: f64 = scale * rng.gen_range(0.0..=1.0);
    let s0 = if norm > 0.0 { sym * (radius / norm) } else { sym };
    SymplecticMatrix::new((omega0(n) * s0).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompatibleStructure {
    j: DMatrix<f64>,
}

impl CompatibleStructure {
    pub fn new(j: DMatrix<f64>) -> Result<Self, SiegelError> {
        let n = j.nrows() / 2;
        check_dim(n)?;
        let o = omega0(n);
        let scale = scale_of(&j).powi(2);
        let square = (&j * &j + DMatrix::identity(2 * n, 2 * n)).norm();
        let compat = (j.transpose() * &o * &j - &o).norm();
        let p = &o * &j;
        let asym = (&p - p.transpose()).norm();
        let defect = square.max(compat).max(asym);
        if defect > TOL * scale || SymmetricEigen::new((&p + p.transpose()) * 0.5).eigenvalues.min() <= 0.0 {
            return Err(SiegelError::NotCompatible(defect));
        }
        Ok(CompatibleStructure { j })
    }

    /// `J₀ = −Ω₀`.
    pub fn base(n: usize) -> Self {
        CompatibleStructure { j: -omega0(n) }
    }

    pub fn n(&self) -> usize {
        self.j.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }

    /// `g J g^{-1}`.
    pub fn conjugate(&self, g: &SymplecticMatrix) -> Result<Self, SiegelError> {
        CompatibleStructure::new(g.matrix() * &self.j * g.inverse())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiegelPoint {
    z: CMatrix,
}

impl SiegelPoint {
    pub fn new(z: CMatrix) -> Result<Self, SiegelError> {
        check_dim(z.nrows())?;
        if (&z - z.transpose()).norm() > TOL * z.norm().max(1.0) {
            return Err(SiegelError::NotInSiegel);
        }
        if min_eig_im(&z) <= 0.0 {
            return Err(SiegelError::NotInSiegel);
        }
        Ok(SiegelPoint { z })
    }

    /// `i·I`.
    pub fn base(n: usize) -> Self {
        SiegelPoint {
            z: CMatrix::identity(n, n) * Complex64::i(),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.z
    }

    pub fn im(&self) -> DMatrix<f64> {
        self.z.map(|c| c.im)
    }

    pub fn min_eig_im(&self) -> f64 {
        min_eig_im(&self.z)
    }
}

fn min_eig_im(z: &CMatrix) -> f64 {
    let y = z.map(|c| c.im);
    SymmetricEigen::new((&y + y.transpose()) * 0.5).eigenvalues.min()
}

/// `(A Z + B)(C Z + D)^{-1}`.
pub fn moebius(g: &SymplecticMatrix, z: &SiegelPoint) -> Result<SiegelPoint, SiegelError> {
    if g.n() != z.z.nrows() {
        return Err(SiegelError::UnsupportedDimension(z.z.nrows()));
    }
    let [a, b, c, d] = g.blocks().map(|m| to_c(&m));
    let num = &a * &z.z + b;
    let den = &c * &z.z + d;
    let inv = den.try_inverse().ok_or(SiegelError::SingularDenominator)?;
    let w = num * inv;
    let w = (&w + w.transpose()) * Complex64::new(0.5, 0.0);
    if min_eig_im(&w) <= 0.0 {
        return Err(SiegelError::NotInSiegel);
    }
    Ok(SiegelPoint { z: w })
}

/// `Ψ(J) = (Ω₀J)^{-1/2} · iI`.
pub fn psi(j: &CompatibleStructure) -> Result<SiegelPoint, SiegelError> {
    let n = j.n();
    let p = omega0(n) * j.matrix();
    let eig = SymmetricEigen::new((&p + p.transpose()) * 0.5);
    if eig.eigenvalues.min() <= 0.0 {
        return Err(SiegelError::NotCompatible(eig.eigenvalues.min()));
    }
    let v = &eig.eigenvectors;
    let root = v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * v.transpose();
    let defect = symplectic_defect(&root);
    if defect > 1e-8 * scale_of(&root).powi(2) {
        return Err(SiegelError::SqrtNotSymplectic(defect));
    }
    moebius(&SymplecticMatrix { g: root }, &SiegelPoint::base(n))
}

/// A tangent vector `A` to the space of compatible structures at `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureTangent {
    base: CompatibleStructure,
    a: DMatrix<f64>,
}

fn tangent_defect(j: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let o = omega0(j.nrows() / 2);
    let anti = (a * j + j * a).norm();
    let compat = (a.transpose() * &o * j + j.transpose() * &o * a).norm();
    anti.max(compat)
}

impl StructureTangent {
    pub fn new(base: CompatibleStructure, a: DMatrix<f64>) -> Result<Self, SiegelError> {
        let defect = tangent_defect(base.matrix(), &a);
        if defect > TOL * scale_of(base.matrix()) * scale_of(&a) {
            return Err(SiegelError::NotTangent(defect));
        }
        Ok(StructureTangent { base, a })
    }

    /// `A = [[X, Y], [Y, −X]]` at `J₀`, for symmetric `X`, `Y`.
    pub fn at_base(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self, SiegelError> {
        let n = x.nrows();
        check_dim(n)?;
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, 0), (n, n)).copy_from(x);
        a.view_mut((0, n), (n, n)).copy_from(y);
        a.view_mut((n, 0), (n, n)).copy_from(y);
        a.view_mut((n, n), (n, n)).copy_from(&(-x));
        StructureTangent::new(CompatibleStructure::base(n), a)
    }

    pub fn base(&self) -> &CompatibleStructure {
        &self.base
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `(X, Y)` when the base point is `J₀`.
    pub fn base_blocks(&self) -> Result<(DMatrix<f64>, DMatrix<f64>), SiegelError> {
        let n = self.base.n();
        let j0 = CompatibleStructure::base(n);
        let off = (self.base.matrix() - j0.matrix()).norm();
        let x = block(&self.a, n, 0, 0);
        let y = block(&self.a, n, 0, 1);
        let form = (block(&self.a, n, 1, 0) - &y).norm()
            + (block(&self.a, n, 1, 1) + &x).norm()
            + (&x - x.transpose()).norm()
            + (&y - y.transpose()).norm();
        let defect = off.max(form);
        if defect > TOL * scale_of(&self.a) {
            return Err(SiegelError::NotBaseTangent(defect));
        }
        Ok((x, y))
    }
}

/// Pushes `A` at `J` to `g A g^{-1}` at `g J g^{-1}`.
pub fn tangent_push(g: &SymplecticMatrix, t: &StructureTangent) -> Result<StructureTangent, SiegelError> {
    let base = t.base.conjugate(g)?;
    StructureTangent::new(base, g.matrix() * &t.a * g.inverse())
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Spectra of `A²` (size `2n`) and of `(X + iY)(X − iY)` (size `n`).
pub fn eig_correspondence(t: &StructureTangent) -> Result<(Vec<f64>, Vec<f64>), SiegelError> {
    let (x, y) = t.base_blocks()?;
    let a2 = t.matrix() * t.matrix();
    let big = SymmetricEigen::new((&a2 + a2.transpose()) * 0.5).eigenvalues;
    let w = to_c(&x) + to_c(&y) * Complex64::i();
    let small = HermitianEig::new(&(&w * w.adjoint())).values;
    Ok((sorted(big.iter().copied().collect()), sorted(small)))
}

/// Largest deviation between the spectrum of `A²` and the doubled spectrum of `(X+iY)(X−iY)`.
pub fn correspondence_defect(big: &[f64], small: &[f64]) -> f64 {
    let doubled = sorted(small.iter().flat_map(|&l| [l, l]).collect());
    if doubled.len() != big.len() {
        return f64::INFINITY;
    }
    big.iter().zip(&doubled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// The almost complex structure `(J̇, Ȧ) ↦ (J J̇, J Ȧ + A J̇)` on tangents at `(J, A)`.
pub fn tangent_complex_structure(
    j: &DMatrix<f64>,
    a: &DMatrix<f64>,
    jdot: &DMatrix<f64>,
    adot: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    (j * jdot, j * adot + a * jdot)
}

/// A direction `(dZ, dS)` at a point of `𝔥 × Sym_n(ℂ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SiegelTangent {
    pub dz: CMatrix,
    pub ds: CMatrix,
}

impl SiegelTangent {
    /// The ambient complex structure: `(dZ, dS) ↦ (i dZ, i dS)`.
    pub fn rotated(&self) -> Self {
        SiegelTangent {
            dz: &self.dz * Complex64::i(),
            ds: &self.ds * Complex64::i(),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.dz.norm_squared() + self.ds.norm_squared()).sqrt()
    }
}

/// `Y^{-1/2} S Y^{-1} S̄ Y^{-1/2}` with `Y = Im Z`.
pub fn potential_matrix(z: &CMatrix, s: &CMatrix) -> Result<CMatrix, SiegelError> {
    let y = z.map(|c| c.im);
    let eig = SymmetricEigen::new((&y + y.transpose()) * 0.5);
    if eig.eigenvalues.min() <= 0.0 {
        return Err(SiegelError::NotInSiegel);
    }
    let v = &eig.eigenvectors;
    let w = to_c(&(v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * v.transpose()));
    let m = &w * s * &w;
    let a = &m * m.adjoint();
    Ok((&a + a.adjoint()) * Complex64::new(0.5, 0.0))
}

/// `f(Z, S) = Σ k(λ_a)` over the spectrum of [`potential_matrix`].
pub fn spectral_potential(z: &CMatrix, s: &CMatrix, k: &SpectralFunction) -> Result<f64, SiegelError> {
    let eig = HermitianEig::new(&potential_matrix(z, s)?);
    k.check_domain(eig.lambda_max())?;
    Ok(eig.values.iter().map(|&l| k.k(l.max(0.0))).sum())
}

/// Second derivative of `f` along a straight line, split into its terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VvfTerms {
    /// `Σ_a k″(λ_a) |B′_aa|²`.
    pub hessian_term: f64,
    /// `Σ_{a≠b} (k′(λ_a) − k′(λ_b))/(λ_a − λ_b) |B′_ab|²`.
    pub divided_difference_term: f64,
    /// `Σ_a k′(λ_a) (U* A″ U)_aa`, from the second-order variation `A″` of the matrix.
    pub curvature_term: f64,
}

impl VvfTerms {
    pub fn total(&self) -> f64 {
        self.hessian_term + self.divided_difference_term + self.curvature_term
    }

    /// The first-order (divided-difference) part alone.
    pub fn first_order_part(&self) -> f64 {
        self.hessian_term + self.divided_difference_term
    }
}

type Series = [CMatrix; 3];

fn series_mul(a: &Series, b: &Series) -> Series {
    [
        &a[0] * &b[0],
        &a[0] * &b[1] + &a[1] * &b[0],
        &a[0] * &b[2] + &a[1] * &b[1] + &a[2] * &b[0],
    ]
}

/// `d²/dt² f(iI + t dZ, S + t dS)` at `t = 0`, from the analytic expansion of the matrix.
pub fn vvf_second_derivative(s: &CMatrix, v: &SiegelTangent, k: &SpectralFunction) -> Result<VvfTerms, SiegelError> {
    let n = s.nrows();
    check_dim(n)?;
    let id = CMatrix::identity(n, n);
    let e = to_c(&v.dz.map(|c| c.im));
    let e2 = &e * &e;
    let half = Complex64::new(0.5, 0.0);
    // (1 + tE)^{-1/2} and (1 + tE)^{-1} to second order
    let w: Series = [id.clone(), -(&e * half), &e2 * Complex64::new(0.375, 0.0)];
    let w2: Series = [id.clone(), -e.clone(), e2.clone()];
    let zero = CMatrix::zeros(n, n);
    let st: Series = [s.clone(), v.ds.clone(), zero.clone()];
    let sb: Series = [s.map(|c| c.conj()), v.ds.map(|c| c.conj()), zero];
    let a = series_mul(&series_mul(&series_mul(&series_mul(&w, &st), &w2), &sb), &w);
    let a0 = (&a[0] + a[0].adjoint()) * half;
    let eig = HermitianEig::new(&a0);
    k.check_domain(eig.lambda_max())?;
    let u = &eig.vectors;
    let b = u.adjoint() * &a[1] * u;
    let c2 = u.adjoint() * &a[2] * u;
    let gamma = divided_differences(&eig.values, &k.gradient_map());
    let mut hessian_term = 0.0;
    let mut divided_difference_term = 0.0;
    for p in 0..n {
        for q in 0..n {
            let term = gamma[(p, q)] * b[(p, q)].norm_sqr();
            if p == q {
                hessian_term += term;
            } else {
                divided_difference_term += term;
            }
        }
    }
    let curvature_term = 2.0 * (0..n).map(|p| k.dk(eig.values[p].max(0.0)) * c2[(p, p)].re).sum::<f64>();
    Ok(VvfTerms {
        hessian_term,
        divided_difference_term,
        curvature_term,
    })
}

/// Fourth-order central second difference of `t ↦ f(iI + t dZ, S + t dS)`.
pub fn vvf_fd(s: &CMatrix, v: &SiegelTangent, k: &SpectralFunction, step: f64) -> Result<f64, SiegelError> {
    let n = s.nrows();
    let base = CMatrix::identity(n, n) * Complex64::i();
    let f = |t: f64| {
        let c = Complex64::new(t, 0.0);
        spectral_potential(&(&base + &v.dz * c), &(s + &v.ds * c), k)
    };
    let w = [(-2.0, -1.0), (-1.0, 16.0), (0.0, -30.0), (1.0, 16.0), (2.0, -1.0)];
    let mut acc = 0.0;
    for (o, c) in w {
        acc += c * f(o * step)?;
    }
    Ok(acc / (12.0 * step * step))
}

/// `dd^c f(v, Jv) = v(v f) + (Jv)(Jv f)`.
pub fn ddc_positivity(s: &CMatrix, v: &SiegelTangent, k: &SpectralFunction) -> Result<f64, SiegelError> {
    Ok(vvf_second_derivative(s, v, k)?.total() + vvf_second_derivative(s, &v.rotated(), k)?.total())
}

/// Random complex symmetric `n × n` matrix with entries of size `≤ scale`.
pub fn random_complex_symmetric(n: usize, rng: &mut impl Rng, scale: f64) -> CMatrix {
    let m = CMatrix::from_fn(n, n, |_, _| Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)));
    (&m + m.transpose()) * Complex64::new(0.5, 0.0)
}

fn random_symmetric(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    (&m + m.transpose()) * 0.5
}

/// `S` rescaled so that the top eigenvalue of `S S̄` is `target`.
pub fn with_lambda_max(s: &CMatrix, target: f64) -> CMatrix {
    let a = s * s.map(|c| c.conj());
    let l = HermitianEig::new(&((&a + a.adjoint()) * Complex64::new(0.5, 0.0))).lambda_max();
    if l <= 0.0 {
        return s.clone();
    }
    s * Complex64::new((target / l).sqrt(), 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub worst: f64,
    pub tolerance: f64,
    /// `worst ≤ tolerance` for residual checks, `worst ≥ tolerance` for lower bounds.
    pub lower_bound: bool,
    pub passed: bool,
    pub failures: Vec<String>,
}

impl CheckResult {
    fn residual(name: &str, values: Vec<Result<f64, String>>, tolerance: f64) -> Self {
        Self::build(name, values, tolerance, false)
    }

    fn lower(name: &str, values: Vec<Result<f64, String>>, tolerance: f64) -> Self {
        Self::build(name, values, tolerance, true)
    }

    fn build(name: &str, values: Vec<Result<f64, String>>, tolerance: f64, lower_bound: bool) -> Self {
        let trials = values.len();
        let mut failures = Vec::new();
        let mut worst = if lower_bound { f64::INFINITY } else { 0.0 };
        for v in values {
            match v {
                Ok(x) if lower_bound => worst = worst.min(x),
                Ok(x) => worst = worst.max(x),
                Err(e) => failures.push(e),
            }
        }
        let ok = if lower_bound { worst >= tolerance } else { worst <= tolerance };
        CheckResult {
            name: name.into(),
            trials,
            worst,
            tolerance,
            lower_bound,
            passed: ok && failures.is_empty() && !worst.is_nan(),
            failures,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiegelReport {
    pub seed: u64,
    pub trials: usize,
    pub checks: Vec<CheckResult>,
}

impl SiegelReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn trial_rng(seed: u64, check: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (check << 48) ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn trial_dim(trial: usize, n_max: usize) -> usize {
    1 + trial % n_max
}

fn run<F>(trials: usize, f: F) -> Vec<Result<f64, String>>
where
    F: Fn(usize) -> Result<f64, SiegelError> + Sync,
{
    (0..trials).into_par_iter().map(|i| f(i).map_err(|e| format!("trial {i}: {e}"))).collect()
}

/// Relative FD mismatch of the analytic second derivative.
fn vvf_mismatch(s: &CMatrix, v: &SiegelTangent, k: &SpectralFunction) -> Result<f64, SiegelError> {
    let terms = vvf_second_derivative(s, v, k)?;
    let fd = vvf_fd(s, v, k, 1e-3)?;
    let scale = terms.hessian_term.abs() + terms.divided_difference_term.abs() + terms.curvature_term.abs();
    Ok((terms.total() - fd).abs() / scale.max(1e-3))
}

/// Random point and direction for the potential checks, with `λ_max(S S̄) ≤ 0.8`.
pub fn random_potential_probe(n: usize, rng: &mut impl Rng) -> (CMatrix, SiegelTangent) {
    let s = random_complex_symmetric(n, rng, 1.0);
    let s = with_lambda_max(&s, rng.gen_range(0.05..0.8));
    let mut v = SiegelTangent {
        dz: random_complex_symmetric(n, rng, 1.0),
        ds: random_complex_symmetric(n, rng, 1.0),
    };
    let norm = v.norm();
    v.dz /= Complex64::new(norm, 0.0);
    v.ds /= Complex64::new(norm, 0.0);
    (s, v)
}

/// Runs every structural check with `trials` seeded trials each, for `n = 1..=n_max`.
pub fn run_battery(n_max: usize, trials: usize, seed: u64) -> Result<SiegelReport, SiegelError> {
    check_dim(n_max)?;
    let mut checks = Vec::new();

    checks.push(CheckResult::residual(
        "random_symplectic defect",
        run(trials, |i| {
            let n = trial_dim(i, n_max);
            let g = random_symplectic(n, seed.wrapping_add(i as u64), 2.0)?;
            Ok(symplectic_defect(g.matrix()))
        }),
        1e-10,
    ));

    checks.push(CheckResult::residual(
        "psi equivariance",
        run(trials, |i| {
            let n = trial_dim(i, n_max);
            let mut rng = trial_rng(seed, 1, i);
            let g = random_symplectic(n, rng.gen(), 2.0)?;
            let h = random_symplectic(n, rng.gen(), 1.0)?;
            let j = CompatibleStructure::base(n).conjugate(&g)?;
            let d1 = (psi(&j)?.matrix() - moebius(&g, &SiegelPoint::base(n))?.matrix()).norm();
            let hj = j.conjugate(&h)?;
            let d2 = (psi(&hj)?.matrix() - moebius(&h, &psi(&j)?)?.matrix()).norm();
            Ok(d1.max(d2))
        }),
        1e-8,
    ));

    checks.push(CheckResult::residual(
        "moebius group law",
        run(trials, |i| {
            let n = trial_dim(i, n_max);
            let mut rng = trial_rng(seed, 2, i);
            let g1 = random_symplectic(n, rng.gen(), 1.0)?;
            let g2 = random_symplectic(n, rng.gen(), 1.0)?;
            let z = moebius(&random_symplectic(n, rng.gen(), 1.0)?, &SiegelPoint::base(n))?;
            let lhs = moebius(&g1, &moebius(&g2, &z)?)?;
            let rhs = moebius(&g1.compose(&g2), &z)?;
            Ok((lhs.matrix() - rhs.matrix()).norm())
        }),
        1e-9,
    ));

    checks.push(CheckResult::lower(
        "moebius preserves the upper half space (min eig Im)",
        run(trials, |i| {
            let n = trial_dim(i, n_max);
            let mut rng = trial_rng(seed, 3, i);
            let z = moebius(&random_symplectic(n, rng.gen(), 2.0)?, &SiegelPoint::base(n))?;
            Ok(moebius(&random_symplectic(n, rng.gen(), 2.0)?, &z)?.min_eig_im())
        }),
        f64::MIN_POSITIVE,
    ));

    checks.push(CheckResult::residual(
        "eigenvalue correspondence",
        run(trials, |i| {
            let n = trial_dim(i, n_max);
            let mut rng = trial_rng(seed, 4, i);
            let t = StructureTangent::at_base(&random_symmetric(n, &mut rng), &random_symmetric(n, &mut rng))?;
            let (big, small) = eig_correspondence(&t)?;
            // conjugation preserves the spectrum of A²
            let pushed = tangent_push(&random_symplectic(n, rng.gen(), 1.0)?, &t)?;
            let p2 = pushed.matrix() * pushed.matrix();
            let mut pe: Vec<f64> = p2.complex_eigenvalues().iter().map(|c| c.re).collect();
            pe.sort_by(f64::total_cmp);
            let push_defect = pe.iter().zip(&big).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok(correspondence_defect(&big, &small).max(push_defect * 1e-2))
        }),
        1e-8,
    ));

    checks.push(CheckResult::residual(
        "tangent complex structure squares to -1 (relative)",
        run(trials, |i| {
            let n = trial_dim(i, n_max);
            let mut rng = trial_rng(seed, 5, i);
            let g = random_symplectic(n, rng.gen(), 1.0)?;
            let a = tangent_push(&g, &StructureTangent::at_base(&random_symmetric(n, &mut rng), &random_symmetric(n, &mut rng))?)?;
            let jdot = tangent_push(&g, &StructureTangent::at_base(&random_symmetric(n, &mut rng), &random_symmetric(n, &mut rng))?)?;
            let adot = DMatrix::from_fn(2 * n, 2 * n, |_, _| rng.gen_range(-1.0..1.0));
            let j = a.base().matrix();
            let (j1, a1) = tangent_complex_structure(j, a.matrix(), jdot.matrix(), &adot);
            let (j2, a2) = tangent_complex_structure(j, a.matrix(), &j1, &a1);
            let residual = (j2 + jdot.matrix()).norm() + (a2 + &adot).norm();
            let scale = j.norm() * (j.norm() + a.matrix().norm()) * (jdot.matrix().norm() + adot.norm());
            Ok(residual / scale)
        }),
        1e-10,
    ));

    for (idx, k) in SpectralFunction::builtins().into_iter().enumerate() {
        let name = k.name();
        checks.push(CheckResult::residual(
            &format!("vvf vs finite differences ({name})"),
            run(trials, |i| {
                let n = trial_dim(i, n_max);
                let mut rng = trial_rng(seed, 10 + idx as u64, i);
                let (s, v) = random_potential_probe(n, &mut rng);
                vvf_mismatch(&s, &v, &k)
            }),
            1e-5,
        ));
        checks.push(CheckResult::lower(
            &format!("first-order vvf part nonnegative ({name})"),
            run(trials, |i| {
                let n = trial_dim(i, n_max);
                let mut rng = trial_rng(seed, 20 + idx as u64, i);
                let (s, v) = random_potential_probe(n, &mut rng);
                Ok(vvf_second_derivative(&s, &v, &k)?.first_order_part())
            }),
            -1e-8,
        ));
        checks.push(CheckResult::lower(
            &format!("ddc f positivity ({name})"),
            run(trials, |i| {
                let n = trial_dim(i, n_max);
                let mut rng = trial_rng(seed, 30 + idx as u64, i);
                let (s, v) = random_potential_probe(n, &mut rng);
                ddc_positivity(&s, &v, &k)
            }),
            -1e-8,
        ));
    }

    Ok(SiegelReport { seed, trials, checks })
}

/// `f` is identically zero on the zero section; used as a sanity value.
pub fn zero_section_value(n: usize, k: &SpectralFunction) -> Result<f64, SiegelError> {
    spectral_potential(&SiegelPoint::base(n).z, &CMatrix::zeros(n, n), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn diag(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(values))
    }

    #[test]
    fn base_point_maps_to_i() {
        let z = psi(&CompatibleStructure::base(2)).unwrap();
        assert_abs_diff_eq!((z.matrix() - SiegelPoint::base(2).matrix()).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_example() {
        let g = SymplecticMatrix::new(diag(&[2.0, 0.5])).unwrap();
        let j = CompatibleStructure::base(1).conjugate(&g).unwrap();
        assert_abs_diff_eq!(j.matrix()[(0, 1)], -4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j.matrix()[(1, 0)], 0.25, epsilon = 1e-15);
        let z = psi(&j).unwrap();
        assert_abs_diff_eq!(z.matrix()[(0, 0)].im, 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(z.matrix()[(0, 0)].re, 0.0, epsilon = 1e-14);
        let w = moebius(&g, &SiegelPoint::base(1)).unwrap();
        assert_abs_diff_eq!(w.matrix()[(0, 0)].im, 4.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_scale_gives_identity() {
        let g = random_symplectic(3, 1, 0.0).unwrap();
        assert_eq!(g.matrix(), &DMatrix::identity(6, 6));
        let g = random_symplectic(1, 7, 1.5).unwrap();
        assert_abs_diff_eq!(g.matrix().determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(SymplecticMatrix::new(diag(&[2.0, 2.0])), Err(SiegelError::NotSymplectic(_))));
        assert!(matches!(CompatibleStructure::new(omega0(1)), Err(SiegelError::NotCompatible(_))));
        let j = CompatibleStructure::base(1);
        assert!(matches!(StructureTangent::new(j, DMatrix::identity(2, 2)), Err(SiegelError::NotTangent(_))));
        assert!(random_symplectic(5, 0, 1.0).is_err());
    }

    #[test]
    fn simple_spectra() {
        let x = diag(&[1.0, -2.0]);
        let t = StructureTangent::at_base(&x, &DMatrix::zeros(2, 2)).unwrap();
        let (big, small) = eig_correspondence(&t).unwrap();
        assert_eq!(small.len(), 2);
        assert!(correspondence_defect(&big, &small) <= 1e-14);
        assert_abs_diff_eq!(small[1], 4.0, epsilon = 1e-14);
    }

    #[test]
    fn vvf_vanishes_on_zero_section_along_z() {
        let v = SiegelTangent {
            dz: CMatrix::identity(2, 2) * Complex64::new(0.3, 0.7),
            ds: CMatrix::zeros(2, 2),
        };
        for k in SpectralFunction::builtins() {
            let t = vvf_second_derivative(&CMatrix::zeros(2, 2), &v, &k).unwrap();
            assert_eq!(t.total(), 0.0);
            assert_eq!(zero_section_value(2, &k).unwrap(), 0.0);
        }
    }
}
