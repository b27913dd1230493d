//! Self-checks run by the `verify` command: integration by parts, convexity
//! and first variation of the energy, Jacobian symmetry, and the 1D oracle.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, GalerkinBasis};
use crate::operator::{
    default_fd_step, fd_double_divergence, tensor_sample_weighted, Discretization, OperatorError, PotentialField, Problem,
};
use crate::poly::Poly;
use crate::polytope::{Point, PolytopeError};
use crate::spectral::CMatrix;
use crate::solver::{oracle_1d, solve, SolveError, SolveOptions, SolveStatus};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("no feasible state found for the random checks")]
    NoFeasibleState,
}

/// Step of the five-point difference in the first-variation check.
pub const GRADIENT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub degree: usize,
    pub quad_order: usize,
    pub seed: u64,
    pub trials: usize,
    /// Multiplies the boundary measure in the integration-by-parts suite. `1.0` except in fault-injection tests.
    pub boundary_measure_factor: f64,
    pub solve: SolveOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            degree: 8,
            quad_order: 32,
            seed: 0,
            trials: 10,
            boundary_measure_factor: 1.0,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl SuiteResult {
    fn at_most(name: &str, residual: f64, tolerance: f64, detail: String) -> Self {
        SuiteResult {
            name: name.into(),
            passed: residual <= tolerance,
            residual,
            tolerance,
            detail,
        }
    }

    fn failed(name: &str, tolerance: f64, detail: String) -> Self {
        SuiteResult {
            name: name.into(),
            passed: false,
            residual: f64::INFINITY,
            tolerance,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

/// The three integrals of `∫ T^{ab} v_{ab} dμ = ∫ v ∂_a∂_b T^{ab} dμ + ∫ v dσ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbpTerms {
    pub lhs: f64,
    pub interior: f64,
    pub boundary: f64,
}

impl IbpTerms {
    pub fn relative_defect(&self) -> f64 {
        let scale = self.lhs.abs() + self.interior.abs() + self.boundary.abs();
        (self.lhs - self.interior - self.boundary).abs() / scale.max(f64::MIN_POSITIVE)
    }
}

/// Evaluates both sides of the integration-by-parts identity for the tensor of `u`
/// with the deformation and spectral data of `problem` at full weight, for each `v`.
pub fn integration_by_parts(
    problem: &Problem,
    u: &PotentialField,
    vs: &[Poly],
    order: usize,
    boundary_measure_factor: f64,
) -> Result<Vec<IbpTerms>, VerifyError> {
    let p = u.polytope();
    let rule = p.interior_quadrature(order)?;
    let brule = p.boundary_quadrature(order)?;
    let (h, k) = (&problem.deformation, &problem.spectral);
    let field = |y: &Point| Ok(tensor_sample_weighted(u, h, k, y, 1.0)?.tensor);
    let nodes: Vec<(CMatrix, f64)> = rule
        .nodes
        .par_iter()
        .map(|x| Ok((field(x)?, fd_double_divergence(p, x, default_fd_step(p, x), field)?)))
        .collect::<Result<_, OperatorError>>()?;
    let terms = vs
        .iter()
        .map(|v| {
            let mut lhs = 0.0;
            let mut interior = 0.0;
            for ((x, w), (t, div)) in rule.nodes.iter().zip(&rule.weights).zip(&nodes) {
                let d2 = v.hessian(x);
                let mut pair = 0.0;
                for a in 0..p.dim() {
                    for b in 0..p.dim() {
                        pair += t[(a, b)].re * d2[a][b];
                    }
                }
                lhs += w * pair;
                interior += w * v.value(x) * div;
            }
            let boundary = boundary_measure_factor * brule.integrate(|x| v.value(x));
            IbpTerms { lhs, interior, boundary }
        })
        .collect();
    Ok(terms)
}

/// Random polynomial of total degree `degree` with coefficients in `[-1, 1]`.
pub fn random_poly(dim: usize, degree: usize, rng: &mut impl Rng) -> Poly {
    let mut terms = Vec::new();
    for i in 0..=degree {
        for j in 0..=(degree - i) {
            if dim == 1 && j > 0 {
                continue;
            }
            terms.push((i, j, rng.gen_range(-1.0..1.0)));
        }
    }
    Poly::from_terms(dim, &terms)
}

/// A random coefficient vector whose state stays well inside the feasible set.
pub fn random_feasible_state(d: &Discretization, rng: &mut impl Rng, size: f64) -> Option<Vec<f64>> {
    let mut size = size;
    for attempt in 0..2000 {
        if attempt > 0 && attempt % 100 == 0 {
            size *= 0.5;
        }
        let c: Vec<f64> = (0..d.len()).map(|_| rng.gen_range(-size..size)).collect();
        if matches!(d.margins(&c), Ok(m) if m.lambda_max < 0.9 * d.problem().spectral.domain_bound().min(1e300) && m.min_eig_g > 1.0)
        {
            return Some(c);
        }
    }
    None
}

/// Tolerance on `sup |u″ − u″_oracle|` for a basis of the given degree.
pub fn oracle_tolerance(degree: usize) -> f64 {
    match degree {
        0..=3 => 1e-2,
        4..=5 => 5e-3,
        6..=7 => 1e-4,
        _ => 1e-5,
    }
}

/// Solves the problem at the given degree and compares `u″` with the 1D oracle on a mesh.
pub fn oracle_discrepancy(problem: &Problem, degree: usize, quad_order: usize, options: &SolveOptions) -> Result<f64, SolveError> {
    let basis = GalerkinBasis::new(&problem.polytope, degree)?;
    let mut disc = Discretization::new(problem.clone(), basis, quad_order)?;
    let report = solve(&mut disc, options, None)?;
    if report.status != SolveStatus::Success {
        return Err(SolveError::InvalidInput(format!("solve ended with {:?}", report.status)));
    }
    let u = disc.potential(&report.coefficients);
    let lo = problem.polytope.vertices()[0][0];
    let hi = problem.polytope.vertices()[1][0];
    let mesh: Vec<f64> = (1..200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    let oracle = oracle_1d(&problem.polytope, &problem.deformation, &problem.spectral, &problem.affine, &mesh)?;
    let mut worst: f64 = 0.0;
    for (y, o) in mesh.iter().zip(oracle) {
        let s = u.hessian(&[*y, 0.0])?[(0, 0)];
        worst = worst.max((s - o).abs());
    }
    Ok(worst)
}

/// Runs every suite on `problem`. Suites that cannot run record a failure rather than aborting.
pub fn run_verify(problem: &Problem, options: &VerifyOptions) -> Result<VerifyReport, VerifyError> {
    let polytope: &Arc<_> = &problem.polytope;
    let dim = polytope.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut suites = Vec::new();

    // integration by parts around the canonical potential
    let u = PotentialField::guillemin(polytope.clone());
    let vs: Vec<Poly> = (0..options.trials).map(|_| random_poly(dim, 4, &mut rng)).collect();
    let ibp_tol = 1e-6;
    suites.push(match integration_by_parts(problem, &u, &vs, options.quad_order.max(16), options.boundary_measure_factor) {
        Ok(terms) => {
            let worst = terms.iter().map(IbpTerms::relative_defect).fold(0.0, f64::max);
            SuiteResult::at_most("integration_by_parts", worst, ibp_tol, format!("{} random v", options.trials))
        }
        Err(e) => SuiteResult::failed("integration_by_parts", ibp_tol, e.to_string()),
    });

    let basis = GalerkinBasis::new(polytope, options.degree.min(6))?;
    let d = Discretization::new(problem.clone(), basis, options.quad_order)?;
    let states: Vec<Vec<f64>> = (0..options.trials)
        .map(|_| random_feasible_state(&d, &mut rng, 0.02).ok_or(VerifyError::NoFeasibleState))
        .collect::<Result<_, _>>()?;

    // first variation: dE/ds = −⟨r, w⟩
    let grad_tol = 1e-5;
    let mut worst: f64 = 0.0;
    let mut error = None;
    for c in &states {
        let w: Vec<f64> = (0..d.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        match d.energy_gradient_check(c, &w, GRADIENT_STEP) {
            Ok(g) => worst = worst.max(g.discrepancy / g.fd_derivative.abs().max(1.0)),
            Err(e) => error = Some(e.to_string()),
        }
    }
    suites.push(match error {
        None => SuiteResult::at_most("energy_gradient", worst, grad_tol, "relative to max(1, |dE/ds|)".into()),
        Some(e) => SuiteResult::failed("energy_gradient", grad_tol, e),
    });

    // convexity along feasible segments
    let convex_tol = 1e-8;
    let mut worst: f64 = 0.0;
    let mut error = None;
    'outer: for c in &states {
        let mut w = Vec::new();
        for _ in 0..200 {
            let cand: Vec<f64> = (0..d.len()).map(|_| rng.gen_range(-0.01..0.01)).collect();
            let ends = [1.0, -1.0].map(|s| c.iter().zip(&cand).map(|(a, b)| a + s * b).collect::<Vec<_>>());
            if ends.iter().all(|x| d.is_feasible(x)) {
                w = cand;
                break;
            }
        }
        if w.is_empty() {
            continue;
        }
        let mut es = Vec::new();
        for i in -4..=4 {
            let s = i as f64 * 0.25;
            let x: Vec<f64> = c.iter().zip(&w).map(|(a, b)| a + s * b).collect();
            match d.energy(&x) {
                Ok(e) => es.push(e),
                Err(e) => {
                    error = Some(e.to_string());
                    break 'outer;
                }
            }
        }
        for win in es.windows(3) {
            worst = worst.max(-(win[0] - 2.0 * win[1] + win[2]));
        }
    }
    suites.push(match error {
        None => SuiteResult::at_most("energy_convexity", worst, convex_tol, "largest negative second difference".into()),
        Some(e) => SuiteResult::failed("energy_convexity", convex_tol, e),
    });

    // Jacobian: symmetry of the FD Jacobian and agreement with the analytic Hessian
    let jac_tol = 1e-4;
    let mut worst: f64 = 0.0;
    let mut error = None;
    for c in states.iter().take(3) {
        match (d.galerkin_jacobian(c), d.hessian(c)) {
            (Ok(fd), Ok(an)) => {
                worst = worst.max(fd.asymmetry).max((&an - &fd.matrix).norm() / an.norm());
            }
            (Err(e), _) | (_, Err(e)) => error = Some(e.to_string()),
        }
    }
    suites.push(match error {
        None => SuiteResult::at_most("jacobian_symmetry", worst, jac_tol, "max of FD asymmetry and analytic mismatch".into()),
        Some(e) => SuiteResult::failed("jacobian_symmetry", jac_tol, e),
    });

    if dim == 1 {
        let tol = oracle_tolerance(options.degree);
        suites.push(match oracle_discrepancy(problem, options.degree, options.quad_order, &options.solve) {
            Ok(e) => SuiteResult::at_most("oracle_comparison", e, tol, format!("sup |u'' - oracle| at degree {}", options.degree)),
            Err(e) => SuiteResult::failed("oracle_comparison", tol, e.to_string()),
        });
    }

    Ok(VerifyReport { suites })
}
