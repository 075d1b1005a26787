//! Run configuration: TOML schema, parse-time validation, and conversion
//! into core-model objects.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use tcl_core::bath::BathModel;
use tcl_core::cumulant::VanishingRule;
use tcl_core::linalg::Operator;
use tcl_core::model::SystemModel;
use tcl_core::quadrature::QuadratureSpec;

/// A configuration problem, carrying the dotted path of the offending field.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl core::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub dim: usize,
    /// Row-major, interleaved re/im; length 2 * dim^2.
    pub hamiltonian: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSection {
    /// Row-major, interleaved re/im; length 2 * dim^2.
    pub operator: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSection {
    /// "single_mode_thermal" or "custom".
    pub kind: String,
    pub omega: Option<f64>,
    pub g: Option<f64>,
    pub nbar: Option<f64>,
    /// Custom bath: sample times (ascending) of the two-point function grid.
    pub times: Option<Vec<f64>>,
    /// Custom bath: row-major interleaved re/im samples C(t_i, t_j);
    /// length 2 * len(times)^2. Bilinearly interpolated, Gaussian, mean zero.
    pub samples: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionSection {
    pub max_order: usize,
    /// "none", "mean_zero", or "gaussian_mean_zero".
    pub suppression: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSection {
    pub nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_max: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub t_star: f64,
    pub lambdas: Vec<f64>,
    pub fock_cutoff: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub interaction: InteractionSection,
    pub coupling: CouplingSection,
    pub bath: BathSection,
    pub expansion: ExpansionSection,
    pub quadrature: QuadratureSection,
    pub time: TimeSection,
    /// Row-major, interleaved re/im; length 2 * dim^2.
    pub initial_state: Vec<f64>,
    /// Subset of {generator, canonical, hamiltonian, trajectory, rates,
    /// convergence}.
    pub outputs: Vec<String>,
    /// Required when "convergence" is among the outputs.
    pub convergence: Option<ConvergenceSection>,
}

pub const OUTPUT_KINDS: [&str; 6] =
    ["generator", "canonical", "hamiltonian", "trajectory", "rates", "convergence"];

fn decode_matrix(flat: &[f64], dim: usize, field: &str) -> Result<Operator, ConfigError> {
    if flat.len() != 2 * dim * dim {
        return Err(err(
            field,
            format!("expected {} interleaved re/im values for a {dim}x{dim} matrix, got {}",
                2 * dim * dim, flat.len()),
        ));
    }
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let base = 2 * (i * dim + j);
            m[(i, j)] = Complex64::new(flat[base], flat[base + 1]);
        }
    }
    if !m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(err(field, "non-finite entry"));
    }
    Ok(m)
}

fn require_hermitian(m: &Operator, field: &str) -> Result<(), ConfigError> {
    let dev = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if dev > 1e-12 * scale {
        return Err(err(field, format!("matrix is not Hermitian (deviation {dev:.3e})")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| ConfigError { field: "config".to_string(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse-time invariants; every violation names the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.system.dim;
        if d < 2 {
            return Err(err("system.dim", "dimension must be >= 2"));
        }
        let h = decode_matrix(&self.system.hamiltonian, d, "system.hamiltonian")?;
        require_hermitian(&h, "system.hamiltonian")?;
        let a = decode_matrix(&self.interaction.operator, d, "interaction.operator")?;
        require_hermitian(&a, "interaction.operator")?;

        if !(self.coupling.lambda >= 0.0 && self.coupling.lambda.is_finite()) {
            return Err(err("coupling.lambda", "coupling strength must be finite and >= 0"));
        }

        match self.bath.kind.as_str() {
            "single_mode_thermal" => {
                let g = self.bath.g.ok_or_else(|| err("bath.g", "required for single_mode_thermal"))?;
                let omega = self
                    .bath
                    .omega
                    .ok_or_else(|| err("bath.omega", "required for single_mode_thermal"))?;
                let nbar =
                    self.bath.nbar.ok_or_else(|| err("bath.nbar", "required for single_mode_thermal"))?;
                if !(g > 0.0) {
                    return Err(err("bath.g", "mode coupling must be > 0"));
                }
                if !omega.is_finite() {
                    return Err(err("bath.omega", "must be finite"));
                }
                if !(nbar >= 0.0) {
                    return Err(err("bath.nbar", "thermal occupation must be >= 0"));
                }
            }
            "custom" => {
                let times =
                    self.bath.times.as_ref().ok_or_else(|| err("bath.times", "required for custom"))?;
                let samples = self
                    .bath
                    .samples
                    .as_ref()
                    .ok_or_else(|| err("bath.samples", "required for custom"))?;
                if times.len() < 2 {
                    return Err(err("bath.times", "need at least 2 sample times"));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(err("bath.times", "sample times must be strictly ascending"));
                }
                if samples.len() != 2 * times.len() * times.len() {
                    return Err(err(
                        "bath.samples",
                        format!("expected {} interleaved re/im values, got {}",
                            2 * times.len() * times.len(), samples.len()),
                    ));
                }
            }
            other => {
                return Err(err(
                    "bath.kind",
                    format!("unknown bath kind {other:?}; expected \"single_mode_thermal\" or \"custom\""),
                ));
            }
        }

        if !(1..=4).contains(&self.expansion.max_order) {
            return Err(err("expansion.max_order", "expansion order must lie in 1..=4"));
        }
        match self.expansion.suppression.as_str() {
            "none" | "mean_zero" | "gaussian_mean_zero" => {}
            other => {
                return Err(err(
                    "expansion.suppression",
                    format!("unknown rule {other:?}; expected \"none\", \"mean_zero\", or \"gaussian_mean_zero\""),
                ));
            }
        }

        if self.quadrature.nodes < 2 {
            return Err(err("quadrature.nodes", "need at least 2 quadrature nodes"));
        }
        if !(self.time.t_max > 0.0) {
            return Err(err("time.t_max", "final time must be > 0"));
        }
        if self.time.steps == 0 {
            return Err(err("time.steps", "step count must be positive"));
        }

        let rho0 = decode_matrix(&self.initial_state, d, "initial_state")?;
        require_hermitian(&rho0, "initial_state")?;
        let tr: Complex64 = rho0.diagonal().iter().sum();
        if (tr - Complex64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(err("initial_state", format!("trace must be 1, got {:.6}", tr.re)));
        }
        let min_eig = ((&rho0 + rho0.adjoint()) * Complex64::new(0.5, 0.0))
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(err("initial_state", format!("not positive semidefinite (min eigenvalue {min_eig:.3e})")));
        }

        if self.outputs.is_empty() {
            return Err(err("outputs", "at least one output kind is required"));
        }
        for o in &self.outputs {
            if !OUTPUT_KINDS.contains(&o.as_str()) {
                return Err(err("outputs", format!("unknown output kind {o:?}")));
            }
        }
        if self.outputs.iter().any(|o| o == "convergence") {
            let c = self
                .convergence
                .as_ref()
                .ok_or_else(|| err("convergence", "section required when \"convergence\" is requested"))?;
            if !(c.t_star > 0.0) {
                return Err(err("convergence.t_star", "probe time must be > 0"));
            }
            if c.lambdas.len() < 2 {
                return Err(err("convergence.lambdas", "need at least 2 sweep values"));
            }
            if c.lambdas.iter().any(|&l| !(l > 0.0)) {
                return Err(err("convergence.lambdas", "sweep values must be > 0"));
            }
            if c.fock_cutoff < 2 {
                return Err(err("convergence.fock_cutoff", "cutoff must be >= 2"));
            }
        }
        Ok(())
    }

    pub fn system_model(&self) -> Result<SystemModel, tcl_core::Error> {
        let h = decode_matrix(&self.system.hamiltonian, self.system.dim, "system.hamiltonian")
            .expect("validated");
        let a = decode_matrix(&self.interaction.operator, self.system.dim, "interaction.operator")
            .expect("validated");
        SystemModel::new(h, a, self.coupling.lambda)
    }

    pub fn bath_model(&self) -> BathModel {
        match self.bath.kind.as_str() {
            "single_mode_thermal" => BathModel::single_mode_thermal(
                self.bath.g.unwrap(),
                self.bath.omega.unwrap(),
                self.bath.nbar.unwrap(),
            ),
            "custom" => {
                let times = self.bath.times.clone().unwrap();
                let flat = self.bath.samples.clone().unwrap();
                let n = times.len();
                let grid: Vec<Complex64> = (0..n * n)
                    .map(|k| Complex64::new(flat[2 * k], flat[2 * k + 1]))
                    .collect();
                // clamped bilinear interpolation on the sample grid
                let bracket = move |times: &[f64], t: f64| -> (usize, f64) {
                    if t <= times[0] {
                        return (0, 0.0);
                    }
                    if t >= times[n - 1] {
                        return (n - 2, 1.0);
                    }
                    let i = times.partition_point(|&u| u <= t).min(n - 1) - 1;
                    ((i), (t - times[i]) / (times[i + 1] - times[i]))
                };
                let two_point = Box::new(move |t: f64, s: f64| {
                    let (i, u) = bracket(&times, t);
                    let (j, v) = bracket(&times, s);
                    let at = |r: usize, c: usize| grid[r * n + c];
                    at(i, j) * ((1.0 - u) * (1.0 - v))
                        + at(i + 1, j) * (u * (1.0 - v))
                        + at(i, j + 1) * ((1.0 - u) * v)
                        + at(i + 1, j + 1) * (u * v)
                });
                BathModel::GaussianGeneric {
                    two_point,
                    mean: Box::new(|_| Complex64::new(0.0, 0.0)),
                }
            }
            _ => unreachable!("validated"),
        }
    }

    pub fn vanishing_rule(&self) -> VanishingRule {
        match self.expansion.suppression.as_str() {
            "none" => VanishingRule::None,
            "mean_zero" => VanishingRule::MeanZero,
            "gaussian_mean_zero" => VanishingRule::GaussianMeanZero,
            _ => unreachable!("validated"),
        }
    }

    pub fn quadrature_spec(&self) -> QuadratureSpec {
        QuadratureSpec { nodes_per_dimension: self.quadrature.nodes }
    }

    pub fn initial_state_matrix(&self) -> Operator {
        decode_matrix(&self.initial_state, self.system.dim, "initial_state").expect("validated")
    }

    pub fn time_grid(&self) -> Vec<f64> {
        let h = self.time.t_max / self.time.steps as f64;
        (0..=self.time.steps).map(|i| i as f64 * h).collect()
    }
}
