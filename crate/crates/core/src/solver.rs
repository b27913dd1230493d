//! Newton minimization of the discrete energy, the continuity method, and an
//! independent one-dimensional oracle.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::BasisError;
use crate::operator::{margins_of, Continuation, DeformationHessian, Discretization, Margins, OperatorError, LAMBDA_MARGIN};
use crate::poly::Affine;
use crate::polytope::DelzantPolytope;
use crate::spectral::SpectralFunction;
use crate::stability::{affine_obstruction, StabilityError};

/// Tolerance on `|L_A(ℓ)|` for affine `ℓ` below which `A` counts as unobstructed.
pub const FUTAKI_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("Newton iteration stalled: {reason}")]
    NotSolvable { reason: String, report: Box<SolveReport> },
    #[error("Futaki obstruction: L_A does not vanish on affine functions (max |L_A(ℓ)| = {obstruction:e})")]
    FutakiObstruction { obstruction: f64 },
    #[error("deformation leaves the domain of the spectral function: {source}")]
    DomainExceeded {
        source: OperatorError,
        report: Option<Box<SolveReport>>,
    },
    #[error("initial potential is not convex: {0}")]
    NotConvex(OperatorError),
    #[error("line search failed to find an admissible step")]
    LineSearchFailure,
    #[error("root bracketing failed at y = {y}")]
    RootBracketFailure { y: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Converged when `‖r‖∞ ≤ tol · (1 + |HK|)`.
    pub tol: f64,
    pub max_newton: usize,
    pub t_schedule: Vec<f64>,
    pub continuation: Continuation,
    /// Smallest continuation step before giving up.
    pub min_t_step: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-9,
            max_newton: 60,
            t_schedule: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            continuation: Continuation::EnergyWeight,
            min_t_step: 1.0 / 256.0,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

impl SolveOptions {
    /// Uniform schedule `0, 1/n, …, 1`.
    pub fn uniform_schedule(n: usize) -> Vec<f64> {
        let n = n.max(1);
        (0..=n).map(|i| i as f64 / n as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Success,
    NotSolvable,
    DomainExceeded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub t: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual_sup: f64,
    /// Energies of the accepted iterates, relative to the stage's starting point.
    pub energy_history: Vec<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub coefficients: Vec<f64>,
    /// `‖r‖∞` at every Newton iterate, across all stages.
    pub residual_history: Vec<f64>,
    pub residual_sup: f64,
    /// `HK(u) − HK(u_G + v₀)` at the final iterate, when the reference is admissible.
    pub energy: Option<f64>,
    pub margins: Option<Margins>,
    pub iterations: usize,
    pub stages: Vec<StageReport>,
    pub halvings: usize,
    pub final_t: f64,
    /// Smallest `λ_min(Hess) / ‖Hess‖` over the accepted iterates.
    pub min_hessian_ratio: f64,
}

impl SolveReport {
    fn new(c: &[f64]) -> Self {
        SolveReport {
            status: SolveStatus::NotSolvable,
            coefficients: c.to_vec(),
            residual_history: Vec::new(),
            residual_sup: f64::INFINITY,
            energy: None,
            margins: None,
            iterations: 0,
            stages: Vec::new(),
            halvings: 0,
            final_t: 0.0,
            min_hessian_ratio: f64::INFINITY,
        }
    }

    /// Newton iterations of the final continuation stage.
    pub fn final_stage_iterations(&self) -> usize {
        self.stages.last().map_or(0, |s| s.iterations)
    }
}

/// Backtracking line search with the Armijo condition.
///
/// `energy` returns `None` outside the feasible set. `slope` is the directional
/// derivative of the energy along `direction` and must be negative. A zero
/// direction returns a zero step.
pub fn line_search(
    c: &[f64],
    direction: &[f64],
    e0: f64,
    slope: f64,
    energy: impl Fn(&[f64]) -> Option<f64>,
    armijo: f64,
    max_backtracks: usize,
) -> Result<(f64, f64), SolveError> {
    if direction.iter().all(|d| *d == 0.0) {
        return Ok((0.0, e0));
    }
    if !(slope < 0.0) {
        return Err(SolveError::LineSearchFailure);
    }
    // Armijo tests below this energy resolution are decided by round-off.
    let noise = 1e-13 * (1.0 + e0.abs());
    let mut step = 1.0;
    for _ in 0..=max_backtracks {
        let trial: Vec<f64> = c.iter().zip(direction).map(|(a, d)| a + step * d).collect();
        if let Some(e) = energy(&trial) {
            if e <= e0 + armijo * step * slope + noise {
                return Ok((step, e));
            }
        }
        step *= 0.5;
    }
    Err(SolveError::LineSearchFailure)
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

fn newton_direction(h: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = h.clone().cholesky() {
        return ch.solve(r);
    }
    // Fall back to a spectrally shifted system.
    let eig = SymmetricEigen::new(h.clone());
    let floor = 1e-12 * eig.eigenvalues.amax().max(1.0);
    let v = &eig.eigenvectors;
    let coeffs = v.transpose() * r;
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c / l.max(floor)),
    );
    v * scaled
}

fn hessian_ratio(h: &DMatrix<f64>) -> f64 {
    let norm = h.norm();
    if norm == 0.0 {
        return 0.0;
    }
    SymmetricEigen::new(h.clone()).eigenvalues.min() / norm
}

enum StageOutcome {
    Converged(Vec<f64>),
    Failed(String, bool),
}

fn newton_stage(
    disc: &Discretization,
    c0: &[f64],
    t: f64,
    options: &SolveOptions,
    report: &mut SolveReport,
) -> StageOutcome {
    let mut stage = StageReport {
        t,
        converged: false,
        iterations: 0,
        residual_sup: f64::INFINITY,
        energy_history: Vec::new(),
        failure: None,
    };
    let mut c = c0.to_vec();
    let mut energy: f64 = 0.0;
    let outcome = loop {
        let samples = match disc.samples(&c) {
            Ok(s) if margins_of(&s).lambda_max < disc.problem().spectral.lambda_sup() - LAMBDA_MARGIN || disc.weight() == 0.0 => s,
            Ok(s) => {
                let m = margins_of(&s);
                break StageOutcome::Failed(format!("starting point has lambda_max = {}", m.lambda_max), true);
            }
            Err(e @ OperatorError::DomainExceeded { .. }) => break StageOutcome::Failed(e.to_string(), true),
            Err(e) => break StageOutcome::Failed(e.to_string(), false),
        };
        if stage.energy_history.is_empty() {
            stage.energy_history.push(0.0);
        }
        let r = disc.residual_from_samples(&samples);
        let rs = sup_norm(&r);
        report.residual_history.push(rs);
        stage.residual_sup = rs;
        let h = disc.hessian_from_samples(&samples);
        report.min_hessian_ratio = report.min_hessian_ratio.min(hessian_ratio(&h));
        if rs <= options.tol * (1.0 + energy.abs()) {
            stage.converged = true;
            break StageOutcome::Converged(c.clone());
        }
        if stage.iterations >= options.max_newton {
            break StageOutcome::Failed(format!("no convergence in {} Newton steps (|r| = {rs:e})", options.max_newton), false);
        }
        let d = newton_direction(&h, &r);
        let slope = -r.dot(&d);
        let energy_at = |x: &[f64]| disc.energy_between_with_margin(x, c0, LAMBDA_MARGIN).ok();
        match line_search(&c, d.as_slice(), energy, slope, energy_at, options.armijo, options.max_backtracks) {
            Ok((step, e)) if step > 0.0 => {
                for (ci, di) in c.iter_mut().zip(d.iter()) {
                    *ci += step * di;
                }
                energy = e;
                stage.energy_history.push(e);
                stage.iterations += 1;
                report.iterations += 1;
            }
            Ok(_) => break StageOutcome::Failed("zero Newton direction with nonzero residual".into(), false),
            Err(_) => break StageOutcome::Failed(format!("line search failed (|r| = {rs:e})"), false),
        }
    };
    if let StageOutcome::Failed(reason, _) = &outcome {
        stage.failure = Some(reason.clone());
    }
    report.stages.push(stage);
    outcome
}

/// Minimizes the discrete energy along the continuity path `t ∈ t_schedule`.
///
/// On return the discretization is left at the last parameter attempted.
pub fn solve(disc: &mut Discretization, options: &SolveOptions, init: Option<&[f64]>) -> Result<SolveReport, SolveError> {
    let problem = disc.problem().clone();
    let obstruction = affine_obstruction(&problem.polytope, &problem.affine)?;
    if obstruction > FUTAKI_TOLERANCE {
        return Err(SolveError::FutakiObstruction { obstruction });
    }
    let mut schedule = options.t_schedule.clone();
    if schedule.is_empty() || schedule.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(SolveError::InvalidInput("t-schedule must be a nonempty subset of [0, 1]".into()));
    }
    schedule.sort_by(f64::total_cmp);
    schedule.dedup();
    let zero = vec![0.0; disc.len()];
    let mut c = init.map_or(zero.clone(), |c| c.to_vec());
    if c.len() != disc.len() {
        return Err(SolveError::InvalidInput(format!("initial guess has {} coefficients, expected {}", c.len(), disc.len())));
    }
    // Convexity of the initial potential is required at every parameter.
    disc.set_deformation(0.0, 1.0);
    disc.samples(&c).map_err(SolveError::NotConvex)?;

    let mut report = SolveReport::new(&c);
    let mut t_prev: Option<f64> = None;
    let mut last_domain_error: Option<OperatorError> = None;
    for &target in &schedule {
        let mut step = t_prev.map_or(0.0, |p| target - p);
        loop {
            let t = t_prev.map_or(target, |p| (p + step).min(target));
            disc.set_parameter(t, options.continuation);
            match newton_stage(disc, &c, t, options, &mut report) {
                StageOutcome::Converged(next) => {
                    log::debug!("stage t = {t}: converged after {} Newton steps", report.stages.last().map_or(0, |s| s.iterations));
                    c = next;
                    t_prev = Some(t);
                    report.final_t = t;
                    if t >= target {
                        break;
                    }
                }
                StageOutcome::Failed(reason, domain) => {
                    log::debug!("stage t = {t} failed: {reason}");
                    if domain {
                        last_domain_error = disc.samples(&c).err().or(last_domain_error.take());
                    }
                    step *= 0.5;
                    report.halvings += 1;
                    if t_prev.is_none() || step < options.min_t_step {
                        report.coefficients = c.clone();
                        report.margins = disc.margins(&c).ok();
                        if domain {
                            report.status = SolveStatus::DomainExceeded;
                            let source = last_domain_error.unwrap_or(OperatorError::DomainExceeded {
                                x: [f64::NAN; 2],
                                name: problem.spectral.name(),
                                lambda: f64::NAN,
                                bound: problem.spectral.domain_bound(),
                            });
                            return Err(SolveError::DomainExceeded {
                                source,
                                report: Some(Box::new(report)),
                            });
                        }
                        report.status = SolveStatus::NotSolvable;
                        return Err(SolveError::NotSolvable {
                            reason: format!("at t = {t}: {reason}"),
                            report: Box::new(report),
                        });
                    }
                }
            }
        }
    }
    report.status = SolveStatus::Success;
    report.residual_sup = sup_norm(&disc.weak_residual(&c)?);
    report.margins = Some(disc.margins(&c)?);
    report.energy = disc.energy(&c).ok();
    report.coefficients = c;
    Ok(report)
}

/// Solves from each initial guess and returns the largest pairwise `‖c_i − c_j‖∞`.
pub fn uniqueness_check(disc: &mut Discretization, options: &SolveOptions, inits: &[Vec<f64>]) -> Result<f64, SolveError> {
    if inits.len() < 2 {
        return Err(SolveError::InvalidInput("need at least two initial guesses".into()));
    }
    let mut sols = Vec::with_capacity(inits.len());
    for init in inits {
        sols.push(solve(disc, options, Some(init))?.coefficients);
    }
    let mut worst = 0.0f64;
    for i in 0..sols.len() {
        for j in 0..i {
            let d = sols[i].iter().zip(&sols[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// `u″` at the given points for the one-dimensional equation
/// `−((1 + 2k′(λ)λ)/u″)″ = A` with `λ = |h″|²/(u″)²` on an interval.
///
/// The flux `T = (1 + 2k′(λ)λ)/u″` is integrated twice in closed form from the
/// boundary conditions `T = 0`, `T′ = ±1` at the endpoints, and `u″` is then
/// recovered pointwise from the strictly decreasing map `u″ ↦ T`.
pub fn oracle_1d(
    interval: &DelzantPolytope,
    h: &DeformationHessian,
    k: &SpectralFunction,
    a: &Affine,
    mesh: &[f64],
) -> Result<Vec<f64>, SolveError> {
    if interval.dim() != 1 || h.dim() != 1 {
        return Err(SolveError::InvalidInput("the oracle is one-dimensional".into()));
    }
    let lo = interval.vertices()[0][0];
    let hi = interval.vertices()[1][0];
    let a_lo = a.value(&[lo, 0.0]);
    let slope = a.linear[0];
    mesh.iter()
        .map(|&y| {
            if !(y > lo && y < hi) {
                return Err(SolveError::InvalidInput(format!("mesh point {y} is not interior")));
            }
            let tau = y - lo;
            let flux = tau - a_lo * tau * tau / 2.0 - slope * tau * tau * tau / 6.0;
            let hpp = h.at(&[y, 0.0])[(0, 0)].norm_sqr();
            solve_flux(flux, hpp, k, y)
        })
        .collect()
}

/// Root of `(1 + 2k′(c/s²) c/s²)/s = flux` in `s > 0`, where `c = |h″|²`.
fn solve_flux(flux: f64, c: f64, k: &SpectralFunction, y: f64) -> Result<f64, SolveError> {
    if !(flux > 0.0) {
        return Err(SolveError::RootBracketFailure { y });
    }
    let g = |s: f64| {
        let lambda = c / (s * s);
        (1.0 + 2.0 * k.dk(lambda) * lambda) / s
    };
    let bound = k.domain_bound();
    let s_min = if c > 0.0 && bound.is_finite() { (c / bound).sqrt() } else { 0.0 };
    let mut lo = if s_min > 0.0 { s_min } else { 0.5 / flux };
    if s_min > 0.0 && g(lo) < flux {
        return Err(SolveError::DomainExceeded {
            source: OperatorError::DomainExceeded {
                x: [y, 0.0],
                name: k.name(),
                lambda: bound,
                bound,
            },
            report: None,
        });
    }
    let mut expand = 0;
    while g(lo) < flux {
        lo *= 0.5;
        expand += 1;
        if expand > 200 {
            return Err(SolveError::RootBracketFailure { y });
        }
    }
    let mut hi = 2.0 * lo.max(1.0 / flux);
    expand = 0;
    while g(hi) > flux {
        hi *= 2.0;
        expand += 1;
        if expand > 200 {
            return Err(SolveError::RootBracketFailure { y });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > flux {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
