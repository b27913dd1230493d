use std::path::PathBuf;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toric_hcsck::operator::{Continuation, DeformationHessian, Problem};
use toric_hcsck::poly::{Affine, Poly};
use toric_hcsck::polytope::{DelzantPolytope, Facet};
use toric_hcsck::solver::SolveOptions;
use toric_hcsck::spectral::{CMatrix, SpectralFunction};
use toric_hcsck::stability::extremal_affine;

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    fn new(msg: impl Into<String>) -> Self {
        ConfigError(msg.into())
    }
}

/// A number written either as a TOML number or as a rational string such as `"-3/2"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Number {
    pub fn value(&self) -> Result<f64, ConfigError> {
        match self {
            Number::Int(i) => Ok(*i as f64),
            Number::Float(f) => Ok(*f),
            Number::Text(s) => parse_rational(s),
        }
    }
}

pub fn parse_rational(s: &str) -> Result<f64, ConfigError> {
    let bad = || ConfigError::new(format!("cannot parse number {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            Ok(n / d)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacetConfig {
    pub normal: Vec<i64>,
    pub offset: Number,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolytopeConfig {
    /// `interval`, `square` or `simplex`; ignored when `facets` is nonempty.
    pub preset: String,
    /// Facets `⟨normal, x⟩ ≥ offset`.
    pub facets: Vec<FacetConfig>,
}

impl Default for PolytopeConfig {
    fn default() -> Self {
        PolytopeConfig {
            preset: "interval".into(),
            facets: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub x: usize,
    #[serde(default)]
    pub y: usize,
    pub c: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeformationConfig {
    #[default]
    None,
    /// Constant `H = re + i·im`, given by rows.
    Constant {
        re: Vec<Vec<f64>>,
        #[serde(default)]
        im: Vec<Vec<f64>>,
    },
    /// `H = D²h` for the polynomial `h = Σ c x^i y^j`, real and imaginary parts.
    Potential {
        #[serde(default)]
        re: Vec<Monomial>,
        #[serde(default)]
        im: Vec<Monomial>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    /// `linear`, `quadratic`, `hyperkahler` or `polynomial`.
    pub name: String,
    /// Coefficients `a_0, a_1, …` when `name = "polynomial"`.
    pub coeffs: Vec<f64>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            name: "hyperkahler".into(),
            coeffs: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffineMode {
    #[default]
    Extremal,
    Explicit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffineConfig {
    pub mode: AffineMode,
    pub constant: f64,
    pub linear: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationConfig {
    pub degree: usize,
    /// Defaults to `4 · degree`.
    pub quad_order: Option<usize>,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        DiscretizationConfig {
            degree: 8,
            quad_order: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_newton: usize,
    pub t_schedule: Vec<f64>,
    pub continuation: Continuation,
    pub min_t_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        SolverConfig {
            tol: d.tol,
            max_newton: d.max_newton,
            t_schedule: d.t_schedule,
            continuation: d.continuation,
            min_t_step: d.min_t_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Points per axis of the field grid.
    pub grid: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            grid: 41,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub probes: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { probes: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiegelConfig {
    pub n_max: usize,
    pub trials: usize,
}

impl Default for SiegelConfig {
    fn default() -> Self {
        SiegelConfig { n_max: 4, trials: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub trials: usize,
    /// Fault injection: scales the boundary measure in the integration-by-parts suite.
    pub boundary_measure_factor: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            trials: 10,
            boundary_measure_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Number of interior mesh points.
    pub mesh: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { mesh: 199 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub polytope: PolytopeConfig,
    pub deformation: DeformationConfig,
    pub spectral: SpectralConfig,
    pub affine: AffineConfig,
    pub discretization: DiscretizationConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub stability: StabilityConfig,
    pub siegel: SiegelConfig,
    pub verify: VerifyConfig,
    pub oracle1d: OracleConfig,
}

impl RunConfig {
    /// Parses without validating, so that command-line overrides can be applied first.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new(e.to_string()))
    }

    pub fn quad_order(&self) -> usize {
        self.discretization.quad_order.unwrap_or(4 * self.discretization.degree)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let degree = self.discretization.degree;
        if degree < 2 {
            return Err(ConfigError::new(format!("degree must be at least 2, got {degree}")));
        }
        if self.quad_order() < 2 * degree {
            return Err(ConfigError::new(format!(
                "quadrature order {} is below 2 · degree = {}",
                self.quad_order(),
                2 * degree
            )));
        }
        if !(self.solver.tol > 0.0) {
            return Err(ConfigError::new("solver.tol must be positive"));
        }
        if self.solver.t_schedule.is_empty() || self.solver.t_schedule.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(ConfigError::new("solver.t_schedule must be a nonempty list in [0, 1]"));
        }
        if self.output.grid < 2 {
            return Err(ConfigError::new("output.grid must be at least 2"));
        }
        if !(1..=4).contains(&self.siegel.n_max) {
            return Err(ConfigError::new("siegel.n_max must be in 1..=4"));
        }
        self.problem().map(|_| ())
    }

    pub fn polytope(&self) -> Result<DelzantPolytope, ConfigError> {
        if self.polytope.facets.is_empty() {
            return match self.polytope.preset.as_str() {
                "interval" => Ok(DelzantPolytope::unit_interval()),
                "square" => Ok(DelzantPolytope::unit_square()),
                "simplex" => Ok(DelzantPolytope::standard_simplex()),
                other => Err(ConfigError::new(format!("unknown polytope preset {other:?}"))),
            };
        }
        let facets = self
            .polytope
            .facets
            .iter()
            .map(|f| {
                if !(1..=2).contains(&f.normal.len()) {
                    return Err(ConfigError::new("facet normals must have 1 or 2 entries"));
                }
                Ok(Facet::new(&f.normal, f.offset.value()?))
            })
            .collect::<Result<Vec<_>, _>>()?;
        DelzantPolytope::from_facets(facets).map_err(|e| ConfigError::new(e.to_string()))
    }

    pub fn spectral(&self) -> Result<SpectralFunction, ConfigError> {
        let s = &self.spectral;
        let k = if s.name == "polynomial" {
            SpectralFunction::polynomial(s.coeffs.clone())
        } else {
            SpectralFunction::builtin(&s.name)
        };
        k.map_err(|e| ConfigError::new(e.to_string()))
    }

    pub fn deformation(&self, dim: usize) -> Result<DeformationHessian, ConfigError> {
        let err = |e: toric_hcsck::operator::OperatorError| ConfigError::new(e.to_string());
        match &self.deformation {
            DeformationConfig::None => Ok(DeformationHessian::zero(dim)),
            DeformationConfig::Constant { re, im } => {
                let rows = |m: &Vec<Vec<f64>>| -> Result<Vec<f64>, ConfigError> {
                    if m.is_empty() {
                        return Ok(vec![0.0; dim * dim]);
                    }
                    if m.len() != dim || m.iter().any(|r| r.len() != dim) {
                        return Err(ConfigError::new(format!("deformation matrix must be {dim}×{dim}")));
                    }
                    Ok(m.iter().flatten().copied().collect())
                };
                let (re, im) = (rows(re)?, rows(im)?);
                let entries: Vec<Complex64> = re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect();
                DeformationHessian::constant(CMatrix::from_row_slice(dim, dim, &entries)).map_err(err)
            }
            DeformationConfig::Potential { re, im } => {
                let poly = |terms: &Vec<Monomial>| -> Result<Poly, ConfigError> {
                    if dim == 1 && terms.iter().any(|m| m.y > 0) {
                        return Err(ConfigError::new("y exponents are not allowed on an interval"));
                    }
                    let t: Vec<(usize, usize, f64)> = terms.iter().map(|m| (m.x, m.y, m.c)).collect();
                    Ok(Poly::from_terms(dim, &t))
                };
                DeformationHessian::from_potential(poly(re)?, poly(im)?).map_err(err)
            }
        }
    }

    pub fn affine(&self, polytope: &DelzantPolytope) -> Result<Affine, ConfigError> {
        match self.affine.mode {
            AffineMode::Extremal => extremal_affine(polytope).map_err(|e| ConfigError::new(e.to_string())),
            AffineMode::Explicit => Ok(Affine {
                constant: self.affine.constant,
                linear: self.affine.linear,
            }),
        }
    }

    pub fn problem(&self) -> Result<Problem, ConfigError> {
        let polytope = self.polytope()?;
        let dim = polytope.dim();
        let deformation = self.deformation(dim)?;
        let affine = self.affine(&polytope)?;
        Problem::new(Arc::new(polytope), deformation, self.spectral()?, affine).map_err(|e| ConfigError::new(e.to_string()))
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.solver.tol,
            max_newton: self.solver.max_newton,
            t_schedule: self.solver.t_schedule.clone(),
            continuation: self.solver.continuation,
            min_t_step: self.solver.min_t_step,
            ..SolveOptions::default()
        }
    }
}
