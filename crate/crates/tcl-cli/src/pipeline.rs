//! Run orchestration: evaluate the requested stages and emit one CSV per
//! requested output plus a structured manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use tcl_core::cumulant::CumulantExpansion;
use tcl_core::dynamics::{self, Picture};
use tcl_core::generator::{self, CanonicalForm};
use tcl_core::linalg::SuperOperator;

use crate::config::RunConfig;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fixed-width scientific notation keeps the CSV bytes stable across runs
/// and platforms with IEEE-754 doubles.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())
}

fn complex_columns(prefix: &str, rows_n: usize, cols_n: usize) -> Vec<String> {
    let mut h = Vec::new();
    for i in 0..rows_n {
        for j in 0..cols_n {
            h.push(format!("{prefix}_{i}_{j}_re"));
            h.push(format!("{prefix}_{i}_{j}_im"));
        }
    }
    h
}

fn push_complex_matrix(row: &mut Vec<f64>, m: &DMatrix<Complex64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(m[(i, j)].re);
            row.push(m[(i, j)].im);
        }
    }
}

#[derive(Serialize)]
struct Tolerances {
    trace_annihilation_rel: f64,
    hermiticity_rel: f64,
    density_min_eigenvalue: f64,
    map_condition_limit: f64,
}

#[derive(Serialize)]
struct Diagnostics {
    min_state_eigenvalue: Option<f64>,
    exact_map_requested: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact_version: &'a str,
    config: &'a RunConfig,
    tolerances: Tolerances,
    wall_clock_ms: Vec<(String, f64)>,
    diagnostics: Diagnostics,
    artifacts: Vec<String>,
}

pub enum RunFailure {
    Io(std::io::Error),
    Numerical(tcl_core::Error),
}

impl From<std::io::Error> for RunFailure {
    fn from(e: std::io::Error) -> Self {
        RunFailure::Io(e)
    }
}

impl From<tcl_core::Error> for RunFailure {
    fn from(e: tcl_core::Error) -> Self {
        RunFailure::Numerical(e)
    }
}

pub fn run(cfg: &RunConfig, output_dir: &Path, quiet: bool) -> Result<Vec<PathBuf>, RunFailure> {
    fs::create_dir_all(output_dir)?;
    let model = cfg.system_model()?;
    let bath = cfg.bath_model();
    let expansion = CumulantExpansion::new(cfg.expansion.max_order, cfg.vanishing_rule())?;
    let spec = cfg.quadrature_spec();
    let grid = cfg.time_grid();
    let d = cfg.system.dim;
    let d2 = d * d;

    let wants = |kind: &str| cfg.outputs.iter().any(|o| o == kind);
    let mut timings: Vec<(String, f64)> = Vec::new();
    let mut artifacts: Vec<String> = Vec::new();
    let mut min_state_eigenvalue = None;

    let needs_generator =
        wants("generator") || wants("canonical") || wants("hamiltonian") || wants("rates");

    let mut totals: Vec<SuperOperator> = Vec::new();
    if needs_generator {
        let t0 = Instant::now();
        let results: Vec<Result<SuperOperator, tcl_core::Error>> = grid
            .par_iter()
            .map(|&t| {
                generator::build_generator(&model, &bath, &expansion, cfg.expansion.max_order, t, &spec)
            })
            .collect();
        for r in results {
            totals.push(r?);
        }
        timings.push(("generator_grid".to_string(), t0.elapsed().as_secs_f64() * 1e3));
    }

    if wants("generator") {
        let mut header = vec!["t".to_string()];
        header.extend(complex_columns("l", d2, d2));
        let rows: Vec<Vec<f64>> = grid
            .iter()
            .zip(&totals)
            .map(|(&t, l)| {
                let mut row = vec![t];
                push_complex_matrix(&mut row, l);
                row
            })
            .collect();
        let p = output_dir.join("generator.csv");
        write_csv(&p, &header, &rows)?;
        artifacts.push("generator.csv".to_string());
    }

    if wants("canonical") || wants("hamiltonian") || wants("rates") {
        let t0 = Instant::now();
        let forms: Vec<Result<CanonicalForm, tcl_core::Error>> =
            totals.par_iter().map(generator::canonical_decompose).collect();
        let mut decomposed = Vec::with_capacity(forms.len());
        for f in forms {
            decomposed.push(f?);
        }
        timings.push(("canonical_decompose".to_string(), t0.elapsed().as_secs_f64() * 1e3));

        if wants("hamiltonian") {
            let mut header = vec!["t".to_string()];
            header.extend(complex_columns("k", d, d));
            let rows: Vec<Vec<f64>> = grid
                .iter()
                .zip(&decomposed)
                .map(|(&t, f)| {
                    let mut row = vec![t];
                    push_complex_matrix(&mut row, &f.k);
                    row
                })
                .collect();
            let p = output_dir.join("hamiltonian.csv");
            write_csv(&p, &header, &rows)?;
            artifacts.push("hamiltonian.csv".to_string());
        }
        if wants("rates") {
            let mut header = vec!["t".to_string()];
            for i in 1..d2 {
                header.push(format!("rate_{i}"));
            }
            let rows: Vec<Vec<f64>> = grid
                .iter()
                .zip(&decomposed)
                .map(|(&t, f)| {
                    let mut row = vec![t];
                    row.extend(f.canonical_rates.iter().cloned());
                    row
                })
                .collect();
            let p = output_dir.join("rates.csv");
            write_csv(&p, &header, &rows)?;
            artifacts.push("rates.csv".to_string());
        }
        if wants("canonical") {
            let mut header = vec!["t".to_string()];
            header.extend(complex_columns("gamma", d2 - 1, d2 - 1));
            let rows: Vec<Vec<f64>> = grid
                .iter()
                .zip(&decomposed)
                .map(|(&t, f)| {
                    let mut row = vec![t];
                    push_complex_matrix(&mut row, &f.gamma);
                    row
                })
                .collect();
            let p = output_dir.join("canonical.csv");
            write_csv(&p, &header, &rows)?;
            artifacts.push("canonical.csv".to_string());
        }
    }

    if wants("trajectory") {
        let t0 = Instant::now();
        // RK4 samples the generator at substep midpoints as well; evaluate
        // every needed time in parallel up front.
        let h = grid[1] - grid[0];
        let mut sample_times: Vec<f64> = Vec::new();
        for &t in &grid[..grid.len() - 1] {
            sample_times.push(t);
            sample_times.push(t + h / 2.0);
            sample_times.push(t + h);
        }
        let samples: Vec<Result<SuperOperator, tcl_core::Error>> = sample_times
            .par_iter()
            .map(|&t| {
                generator::build_generator(&model, &bath, &expansion, cfg.expansion.max_order, t, &spec)
            })
            .collect();
        let mut cache: Vec<(f64, SuperOperator)> = Vec::with_capacity(samples.len());
        for (t, s) in sample_times.iter().zip(samples) {
            cache.push((*t, s?));
        }
        let lookup = |t: f64| -> Result<SuperOperator, tcl_core::Error> {
            let tol = h * 1e-9;
            cache
                .iter()
                .find(|(u, _)| (u - t).abs() <= tol)
                .map(|(_, s)| s.clone())
                .ok_or(tcl_core::Error::PreconditionFailed("generator sample missing"))
        };
        let rho0 = cfg.initial_state_matrix();
        let traj = dynamics::propagate(lookup, &rho0, &grid)?;
        let traj = traj.converted(&model);
        debug_assert!(matches!(traj.picture, Picture::Schroedinger));
        min_state_eigenvalue =
            Some(traj.min_eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min));
        let mut header = vec!["t".to_string()];
        header.extend(complex_columns("rho", d, d));
        header.push("min_eigenvalue".to_string());
        let rows: Vec<Vec<f64>> = grid
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mut row = vec![t];
                push_complex_matrix(&mut row, &traj.states[i]);
                row.push(traj.min_eigenvalues[i]);
                row
            })
            .collect();
        let p = output_dir.join("trajectory.csv");
        write_csv(&p, &header, &rows)?;
        artifacts.push("trajectory.csv".to_string());
        timings.push(("trajectory".to_string(), t0.elapsed().as_secs_f64() * 1e3));
    }

    if wants("convergence") {
        let t0 = Instant::now();
        let c = cfg.convergence.as_ref().expect("validated");
        let table = dynamics::convergence_study(
            &model,
            &bath,
            cfg.expansion.max_order,
            c.t_star,
            &c.lambdas,
            c.fock_cutoff,
            &spec,
        )?;
        let header = vec!["lambda".to_string(), "residual".to_string()];
        let rows: Vec<Vec<f64>> =
            table.rows.iter().map(|r| vec![r.lambda, r.residual]).collect();
        let p = output_dir.join("convergence.csv");
        write_csv(&p, &header, &rows)?;
        artifacts.push("convergence.csv".to_string());
        timings.push(("convergence".to_string(), t0.elapsed().as_secs_f64() * 1e3));
        if !quiet {
            eprintln!("convergence slope: {:.3}", table.slope);
        }
    }

    let manifest = Manifest {
        artifact_version: ARTIFACT_VERSION,
        config: cfg,
        tolerances: Tolerances {
            trace_annihilation_rel: 1e-8,
            hermiticity_rel: 1e-8,
            density_min_eigenvalue: -1e-8,
            map_condition_limit: 1e8,
        },
        wall_clock_ms: timings,
        diagnostics: Diagnostics {
            min_state_eigenvalue,
            exact_map_requested: wants("convergence"),
        },
        artifacts: artifacts.clone(),
    };
    let manifest_path = output_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("serializable"))?;

    let mut written: Vec<PathBuf> = artifacts.iter().map(|a| output_dir.join(a)).collect();
    written.push(manifest_path);
    if !quiet {
        for p in &written {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(written)
}
