use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};
use toric_hcsck::basis::GalerkinBasis;
use toric_hcsck::operator::{scalar_curvature_proxy, tensor_sample_weighted, Discretization};
use toric_hcsck::polytope::{DelzantPolytope, Point};
use toric_hcsck::siegel::run_battery;
use toric_hcsck::solver::{oracle_1d, solve, SolveError, SolveReport};
use toric_hcsck::stability::{affine_obstruction, uniform_scan};
use toric_hcsck::verify::{oracle_discrepancy, run_verify, VerifyOptions};

use crate::config::{ConfigError, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAILED: i32 = 2;
pub const EXIT_OBSTRUCTED: i32 = 3;

pub const FIELD_COLUMNS: [&str; 7] = ["x", "y", "u", "det_g", "scalar_curvature_proxy", "lambda_max", "min_eig_t"];

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Writes `{command, exit_code, config, result, timestamp_unix}` as pretty JSON.
fn write_report(dir: &Path, name: &str, command: &str, config: &RunConfig, exit_code: i32, result: Value) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let report = json!({
        "command": command,
        "exit_code": exit_code,
        "config": config,
        "result": result,
        "timestamp_unix": timestamp(),
    });
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn solve_error_value(e: &SolveError) -> (i32, Value) {
    match e {
        SolveError::FutakiObstruction { obstruction } => (
            EXIT_OBSTRUCTED,
            json!({"status": "futaki_obstruction", "obstruction": obstruction, "message": e.to_string()}),
        ),
        SolveError::NotSolvable { reason, report } => (
            EXIT_FAILED,
            json!({"status": "not_solvable", "message": reason, "report": to_value(report)}),
        ),
        SolveError::DomainExceeded { source, report } => (
            EXIT_FAILED,
            json!({"status": "domain_exceeded", "message": source.to_string(), "report": report.as_ref().map(to_value)}),
        ),
        SolveError::InvalidInput(_) | SolveError::Basis(_) => (EXIT_CONFIG, json!({"status": "config_error", "message": e.to_string()})),
        _ => (EXIT_FAILED, json!({"status": "failed", "message": e.to_string()})),
    }
}

/// Interior grid points at distance at least `margin` from the boundary.
fn field_grid(p: &DelzantPolytope, n: usize, margin: f64) -> Vec<Point> {
    let xs: Vec<f64> = p.vertices().iter().map(|v| v[0]).collect();
    let ys: Vec<f64> = p.vertices().iter().map(|v| v[1]).collect();
    let (x0, x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = (ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let at = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
    let mut points = Vec::new();
    if p.dim() == 1 {
        for i in 0..n {
            points.push([at(x0, x1, i), 0.0]);
        }
    } else {
        for j in 0..n {
            for i in 0..n {
                points.push([at(x0, x1, i), at(y0, y1, j)]);
            }
        }
    }
    points.retain(|x| p.is_interior(x) && p.distance_to_boundary(x) >= margin);
    points
}

fn write_fields(path: &Path, disc: &Discretization, report: &SolveReport, grid: usize) -> anyhow::Result<usize> {
    let problem = disc.problem();
    let u = disc.potential(&report.coefficients);
    let h = disc.deformation();
    let mut out = String::new();
    out.push_str(&FIELD_COLUMNS.join(","));
    out.push('\n');
    let points = field_grid(&problem.polytope, grid, 1e-3);
    let mut rows = 0;
    for x in &points {
        let sample = tensor_sample_weighted(&u, &h, &problem.spectral, x, disc.weight());
        let (value, curvature) = (u.value(x), scalar_curvature_proxy(&u, x, None));
        match (sample, value, curvature) {
            (Ok(s), Ok(v), Ok(c)) => {
                let det_g = s.g.determinant();
                out.push_str(&format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                    x[0], x[1], v, det_g, c, s.lambda_max, s.min_eig_t
                ));
                rows += 1;
            }
            _ => warn!("skipping field point {x:?}"),
        }
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(out.as_bytes())?;
    Ok(rows)
}

pub fn cmd_solve(config: &RunConfig) -> anyhow::Result<i32> {
    let dir = &config.output.dir;
    let problem = match config.problem() {
        Ok(p) => p,
        Err(e) => return config_failure(config, "solve", "solve_report.json", e),
    };
    let basis = GalerkinBasis::new(&problem.polytope, config.discretization.degree)?;
    let mut disc = Discretization::new(problem.clone(), basis, config.quad_order())?;
    let options = config.solve_options();
    let started = std::time::Instant::now();
    let outcome = solve(&mut disc, &options, None);
    info!("solve finished in {:?}", started.elapsed());
    let (code, mut result, report) = match outcome {
        Ok(report) => (EXIT_OK, json!({"status": "success", "report": to_value(&report)}), Some(report)),
        Err(e) => {
            let (code, value) = solve_error_value(&e);
            let report = match e {
                SolveError::NotSolvable { report, .. } => Some(*report),
                SolveError::DomainExceeded { report, .. } => report.map(|r| *r),
                _ => None,
            };
            (code, value, report)
        }
    };
    if let Some(report) = &report {
        let path = dir.join("fields.csv");
        fs::create_dir_all(dir)?;
        let rows = write_fields(&path, &disc, report, config.output.grid)?;
        result["fields"] = json!({"path": "fields.csv", "rows": rows, "columns": FIELD_COLUMNS});
        if code == EXIT_OK {
            let scan = uniform_scan(&problem.polytope, &problem.affine, config.stability.probes, config.seed)?;
            result["stability"] = json!({"lambda_hat": scan.lambda_hat, "probes": config.stability.probes});
        }
    }
    println!("solve: {} (exit {code})", result["status"].as_str().unwrap_or("?"));
    if let Some(r) = &report {
        println!("  iterations {}, residual {:e}, final t {}", r.iterations, r.residual_sup, r.final_t);
    }
    write_report(dir, "solve_report.json", "solve", config, code, result)?;
    Ok(code)
}

fn config_failure(config: &RunConfig, command: &str, name: &str, e: ConfigError) -> anyhow::Result<i32> {
    eprintln!("configuration error: {e}");
    write_report(&config.output.dir, name, command, config, EXIT_CONFIG, json!({"status": "config_error", "message": e.to_string()}))?;
    Ok(EXIT_CONFIG)
}

pub fn cmd_verify(config: &RunConfig) -> anyhow::Result<i32> {
    let problem = match config.problem() {
        Ok(p) => p,
        Err(e) => return config_failure(config, "verify", "verify_report.json", e),
    };
    let options = VerifyOptions {
        degree: config.discretization.degree,
        quad_order: config.quad_order(),
        seed: config.seed,
        trials: config.verify.trials,
        boundary_measure_factor: config.verify.boundary_measure_factor,
        solve: config.solve_options(),
    };
    let report = run_verify(&problem, &options)?;
    for s in &report.suites {
        println!(
            "{} {:<22} residual {:.3e} (tolerance {:.1e})",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.residual,
            s.tolerance
        );
    }
    let code = if report.passed() { EXIT_OK } else { EXIT_FAILED };
    write_report(&config.output.dir, "verify_report.json", "verify", config, code, to_value(&report))?;
    Ok(code)
}

pub fn cmd_stability(config: &RunConfig) -> anyhow::Result<i32> {
    let problem = match config.problem() {
        Ok(p) => p,
        Err(e) => return config_failure(config, "stability", "stability_report.json", e),
    };
    let obstruction = affine_obstruction(&problem.polytope, &problem.affine)?;
    let scan = uniform_scan(&problem.polytope, &problem.affine, config.stability.probes, config.seed)?;
    let code = if obstruction > toric_hcsck::solver::FUTAKI_TOLERANCE {
        EXIT_OBSTRUCTED
    } else if scan.lambda_hat > 0.0 {
        EXIT_OK
    } else {
        EXIT_FAILED
    };
    println!("affine A = {} + {:?}·x", problem.affine.constant, problem.affine.linear);
    println!("affine obstruction {obstruction:.3e}, lambda_hat {:.6e} over {} probes (exit {code})", scan.lambda_hat, scan.probes.len());
    let result = json!({
        "affine": to_value(&problem.affine),
        "affine_obstruction": obstruction,
        "lambda_hat": scan.lambda_hat,
        "probes": scan.probes.len(),
        "worst": to_value(&scan.worst),
    });
    write_report(&config.output.dir, "stability_report.json", "stability", config, code, result)?;
    Ok(code)
}

pub fn cmd_siegel(config: &RunConfig) -> anyhow::Result<i32> {
    if let Err(e) = config.validate() {
        return config_failure(config, "siegel", "siegel_report.json", e);
    }
    let report = run_battery(config.siegel.n_max, config.siegel.trials, config.seed)?;
    for c in &report.checks {
        let rel = if c.lower_bound { ">=" } else { "<=" };
        println!("{} {:<55} worst {:.3e} ({rel} {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.worst, c.tolerance);
    }
    let code = if report.passed() { EXIT_OK } else { EXIT_FAILED };
    write_report(&config.output.dir, "siegel_report.json", "siegel", config, code, to_value(&report))?;
    Ok(code)
}

pub fn cmd_oracle1d(config: &RunConfig) -> anyhow::Result<i32> {
    let problem = match config.problem() {
        Ok(p) if p.polytope.dim() == 1 => p,
        Ok(_) => return config_failure(config, "oracle1d", "oracle1d_report.json", ConfigError("oracle1d needs an interval".into())),
        Err(e) => return config_failure(config, "oracle1d", "oracle1d_report.json", e),
    };
    let p: &Arc<DelzantPolytope> = &problem.polytope;
    let (lo, hi) = (p.vertices()[0][0], p.vertices()[1][0]);
    let n = config.oracle1d.mesh;
    let mesh: Vec<f64> = (1..=n).map(|i| lo + (hi - lo) * i as f64 / (n + 1) as f64).collect();
    let (code, result) = match oracle_1d(p, &problem.deformation, &problem.spectral, &problem.affine, &mesh) {
        Ok(values) => {
            let discrepancy = oracle_discrepancy(&problem, config.discretization.degree, config.quad_order(), &config.solve_options());
            let discrepancy = match discrepancy {
                Ok(d) => {
                    println!("sup |u'' - oracle| = {d:.3e} at degree {}", config.discretization.degree);
                    json!(d)
                }
                Err(e) => {
                    println!("galerkin cross-check unavailable: {e}");
                    json!(e.to_string())
                }
            };
            (EXIT_OK, json!({"status": "success", "mesh": mesh, "u_second": values, "galerkin_discrepancy": discrepancy}))
        }
        Err(e) => solve_error_value(&e),
    };
    write_report(&config.output.dir, "oracle1d_report.json", "oracle1d", config, code, result)?;
    Ok(code)
}
