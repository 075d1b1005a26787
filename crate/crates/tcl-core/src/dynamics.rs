//! Reduced-state propagation, brute-force exact single-mode dynamics,
//! exact generator extraction from the map, and convergence studies.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::bath::{d_block, BathModel, DBlockArgs};
use crate::cumulant::{CumulantExpansion, VanishingRule};
use crate::generator;
use crate::linalg::{self, Operator, SuperOperator};
use crate::model::SystemModel;
use crate::quadrature::{self, QuadratureSpec};
use crate::{Error, Result};

/// Which picture a trajectory's states live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Picture {
    Interaction,
    Schroedinger,
}

/// Reduced-state trajectory on a uniform time grid. Minimum eigenvalues are
/// recorded as a diagnostic; transient negativity under truncated TCL is
/// physics of the truncation and is never repaired.
pub struct Trajectory {
    pub time_grid: Vec<f64>,
    pub states: Vec<Operator>,
    pub picture: Picture,
    pub min_eigenvalues: Vec<f64>,
}

impl Trajectory {
    /// Convert interaction-picture states to the Schroedinger picture (or
    /// back) by the exact free-evolution conjugation.
    pub fn converted(&self, model: &SystemModel) -> Trajectory {
        let (states, picture) = match self.picture {
            Picture::Interaction => (
                self.time_grid
                    .iter()
                    .zip(&self.states)
                    .map(|(&t, rho)| {
                        let u = model.free_evolution(t);
                        u.adjoint() * rho * u
                    })
                    .collect::<Vec<_>>(),
                Picture::Schroedinger,
            ),
            Picture::Schroedinger => (
                self.time_grid
                    .iter()
                    .zip(&self.states)
                    .map(|(&t, rho)| {
                        let u = model.free_evolution(t);
                        &u * rho * u.adjoint()
                    })
                    .collect::<Vec<_>>(),
                Picture::Interaction,
            ),
        };
        Trajectory {
            time_grid: self.time_grid.clone(),
            min_eigenvalues: self.min_eigenvalues.clone(),
            states,
            picture,
        }
    }
}

fn check_uniform_ascending(grid: &[f64]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::PreconditionFailed("time grid needs at least two points"));
    }
    let h = grid[1] - grid[0];
    if !(h > 0.0) {
        return Err(Error::PreconditionFailed("time grid must be ascending"));
    }
    for w in grid.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * f64::max(1.0, h.abs()) {
            return Err(Error::PreconditionFailed("time grid must be uniform"));
        }
    }
    Ok(h)
}

fn check_density(rho: &Operator) -> Result<()> {
    if !linalg::is_hermitian(rho, 1e-8) {
        return Err(Error::NotADensityMatrix("not Hermitian"));
    }
    if (rho.trace() - Complex64::new(1.0, 0.0)).norm() > 1e-8 {
        return Err(Error::NotADensityMatrix("trace differs from 1"));
    }
    let herm = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    let min = herm.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-8 {
        return Err(Error::NotADensityMatrix("negative eigenvalue"));
    }
    Ok(())
}

fn min_eigenvalue(rho: &Operator) -> f64 {
    let herm = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    herm.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Classical 4th-order Runge-Kutta on the vectorized state, with the
/// generator sampled at the substep times. States are tagged with the
/// interaction picture: generators built in this crate act there.
pub fn propagate<F>(mut gen: F, rho0: &Operator, grid: &[f64]) -> Result<Trajectory>
where
    F: FnMut(f64) -> Result<SuperOperator>,
{
    let h = check_uniform_ascending(grid)?;
    check_density(rho0)?;
    let d = rho0.nrows();
    let mut v: DVector<Complex64> = linalg::vectorize(rho0);
    let mut states = Vec::with_capacity(grid.len());
    let mut mins = Vec::with_capacity(grid.len());
    states.push(rho0.clone());
    mins.push(min_eigenvalue(rho0));
    let hc = Complex64::new(h, 0.0);
    let half = Complex64::new(0.5, 0.0);
    let sixth = Complex64::new(1.0 / 6.0, 0.0);
    for w in grid.windows(2) {
        let t = w[0];
        let l0 = gen(t)?;
        let lh = gen(t + h / 2.0)?;
        let l1 = gen(t + h)?;
        let k1 = &l0 * &v;
        let k2 = &lh * &(&v + &k1 * (hc * half));
        let k3 = &lh * &(&v + &k2 * (hc * half));
        let k4 = &l1 * &(&v + &k3 * hc);
        let two = Complex64::new(2.0, 0.0);
        v += (k1 + k2 * two + k3 * two + k4) * (hc * sixth);
        let rho = linalg::devectorize(&v, d);
        mins.push(min_eigenvalue(&rho));
        states.push(rho);
    }
    Ok(Trajectory {
        time_grid: grid.to_vec(),
        states,
        picture: Picture::Interaction,
        min_eigenvalues: mins,
    })
}

/// Single truncated bosonic mode: frequency, coupling amplitude, mean
/// thermal occupation.
#[derive(Debug, Clone, Copy)]
pub struct SingleMode {
    pub omega: f64,
    pub g: f64,
    pub nbar: f64,
}

/// Exact interaction-picture dynamical maps on a time grid, from the
/// brute-force joint unitary of system plus truncated mode.
pub struct ExactMapGrid {
    pub time_grid: Vec<f64>,
    pub maps: Vec<SuperOperator>,
    pub dim: usize,
}

fn annihilation(cutoff: usize) -> Operator {
    let n = cutoff + 1;
    let mut a: Operator = DMatrix::zeros(n, n);
    for m in 1..n {
        a[(m - 1, m)] = Complex64::new(libm::sqrt(m as f64), 0.0);
    }
    a
}

/// Truncated thermal state and the (analytic, untruncated) tail weight
/// beyond the cutoff. The kept block is renormalized.
fn thermal_mode(nbar: f64, cutoff: usize) -> (Operator, f64) {
    let n = cutoff + 1;
    let mut rho: Operator = DMatrix::zeros(n, n);
    if nbar <= 0.0 {
        rho[(0, 0)] = Complex64::new(1.0, 0.0);
        return (rho, 0.0);
    }
    let r = nbar / (nbar + 1.0);
    let mut sum = 0.0;
    for m in 0..n {
        let p = libm::pow(r, m as f64) / (nbar + 1.0);
        rho[(m, m)] = Complex64::new(p, 0.0);
        sum += p;
    }
    for m in 0..n {
        rho[(m, m)] /= Complex64::new(sum, 0.0);
    }
    (rho, 1.0 - sum)
}

fn suggested_cutoff(nbar: f64) -> usize {
    if nbar <= 0.0 {
        return 1;
    }
    let r = nbar / (nbar + 1.0);
    libm::ceil(libm::log(1e-10) / libm::log(r)) as usize
}

/// Brute-force exact dynamical map: diagonalize the time-independent joint
/// Hamiltonian `H_S + Omega a^dag a + lambda A (x) g(a + a^dag)` once, apply
/// the joint unitary to every system matrix unit tensored with the thermal
/// mode state, trace out the mode, and rotate into the interaction picture.
pub fn exact_map_single_mode(
    model: &SystemModel,
    mode: &SingleMode,
    fock_cutoff: usize,
    grid: &[f64],
) -> Result<ExactMapGrid> {
    let d = model.dim();
    let nm = fock_cutoff + 1;
    let (rho_e, tail) = thermal_mode(mode.nbar, fock_cutoff);
    if tail >= 1e-10 {
        return Err(Error::FockCutoffTooSmall {
            cutoff: fock_cutoff,
            suggested: suggested_cutoff(mode.nbar),
        });
    }

    let a = annihilation(fock_cutoff);
    let x = (&a + a.adjoint()) * Complex64::new(mode.g, 0.0);
    let number = a.adjoint() * &a;
    let id_s = linalg::identity(d);
    let id_m = linalg::identity(nm);
    let joint_h = model.hamiltonian().kronecker(&id_m)
        + id_s.kronecker(&(&number * Complex64::new(mode.omega, 0.0)))
        + model.coupling().kronecker(&x) * Complex64::new(model.lambda(), 0.0);
    let eig = joint_h.symmetric_eigen();
    let vecs = eig.eigenvectors;
    let energies: Vec<f64> = eig.eigenvalues.iter().cloned().collect();

    let joint_unitary = |t: f64| -> Operator {
        let dd = vecs.nrows();
        let mut diag: Operator = DMatrix::zeros(dd, dd);
        for j in 0..dd {
            diag[(j, j)] = Complex64::new(0.0, -energies[j] * t).exp();
        }
        &vecs * diag * vecs.adjoint()
    };

    let mut maps = Vec::with_capacity(grid.len());
    for &t in grid {
        let u = joint_unitary(t);
        let free = model.free_evolution(t);
        let mut phi: SuperOperator = DMatrix::zeros(d * d, d * d);
        for j in 0..d {
            for i in 0..d {
                let mut e_ij: Operator = DMatrix::zeros(d, d);
                e_ij[(i, j)] = Complex64::new(1.0, 0.0);
                let joint = &u * e_ij.kronecker(&rho_e) * u.adjoint();
                // partial trace over the mode (second kronecker factor)
                let mut reduced: Operator = DMatrix::zeros(d, d);
                for p in 0..d {
                    for q in 0..d {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for m in 0..nm {
                            acc += joint[(p * nm + m, q * nm + m)];
                        }
                        reduced[(p, q)] = acc;
                    }
                }
                let rotated = &free * reduced * free.adjoint();
                phi.set_column(i + d * j, &linalg::vectorize(&rotated));
            }
        }
        maps.push(phi);
    }
    Ok(ExactMapGrid { time_grid: grid.to_vec(), maps, dim: d })
}

/// Generators extracted from a map grid, with per-point condition numbers
/// (Frobenius estimate `|Phi| * |Phi^-1|`).
pub struct ExtractedGenerator {
    pub time_grid: Vec<f64>,
    pub generators: Vec<SuperOperator>,
    pub condition_numbers: Vec<f64>,
}

/// 5-point, 4th-order finite-difference stencil for the derivative at
/// in-window position `pos` (0..=4 from the left edge, 2 = central).
const FD_STENCILS: [[f64; 5]; 5] = [
    [-25.0, 48.0, -36.0, 16.0, -3.0],
    [-3.0, -10.0, 18.0, -6.0, 1.0],
    [1.0, -8.0, 0.0, 8.0, -1.0],
    [-1.0, 6.0, -18.0, 10.0, 3.0],
    [3.0, -16.0, 36.0, -48.0, 25.0],
];

/// Exact TCL generator from the map grid by composing the 4th-order
/// finite-difference derivative with the map inverse.
pub fn exact_tcl_from_map(g: &ExactMapGrid) -> Result<ExtractedGenerator> {
    let h = check_uniform_ascending(&g.time_grid)?;
    let npts = g.time_grid.len();
    if npts < 5 {
        return Err(Error::PreconditionFailed("generator extraction needs >= 5 grid points"));
    }
    let d2 = g.maps[0].nrows();
    let mut gens = Vec::with_capacity(npts);
    let mut conds = Vec::with_capacity(npts);
    for i in 0..npts {
        // window [base, base+4] containing i, central where possible
        let base = i.saturating_sub(2).min(npts - 5);
        let pos = i - base;
        let mut deriv: SuperOperator = DMatrix::zeros(d2, d2);
        for (j, &c) in FD_STENCILS[pos].iter().enumerate() {
            if c != 0.0 {
                deriv += &g.maps[base + j] * Complex64::new(c / (12.0 * h), 0.0);
            }
        }
        let phi = &g.maps[i];
        let inv = phi.clone().lu().try_inverse().ok_or(Error::IllConditionedMap {
            time_index: i,
            cond: f64::INFINITY,
        })?;
        let cond = linalg::frobenius_norm(phi) * linalg::frobenius_norm(&inv) / d2 as f64;
        if cond > 1e8 {
            return Err(Error::IllConditionedMap { time_index: i, cond });
        }
        conds.push(cond);
        gens.push(deriv * inv);
    }
    Ok(ExtractedGenerator {
        time_grid: g.time_grid.clone(),
        generators: gens,
        condition_numbers: conds,
    })
}

/// Exact pure-dephasing decoherence exponent `Gamma(t) + i phi(t)` per grid
/// time, for a qubit coupled through `sigma_z` to a Gaussian mean-zero bath:
/// `Gamma + i phi = 2 lambda^2 int_0^t dt1 int_0^t1 dt2 [C(t1, t2) + C(t2, t1)]`.
/// The factor and the symmetrization are fixed against the brute-force map
/// (for the symmetric sigma_z coupling the phase vanishes identically, which
/// the symmetrized kernel reproduces).
pub fn dephasing_oracle(bath: &BathModel, lambda: f64, grid: &[f64]) -> Result<Vec<Complex64>> {
    match bath {
        BathModel::Custom { .. } => {
            return Err(Error::PreconditionFailed("dephasing oracle requires a Gaussian bath"))
        }
        BathModel::GaussianGeneric { .. } => {
            for &t in grid {
                if bath.mean(t)?.norm() > 1e-12 {
                    return Err(Error::PreconditionFailed(
                        "dephasing oracle requires a mean-zero bath",
                    ));
                }
            }
        }
        BathModel::SingleModeThermal { .. } => {}
    }
    let (nodes, weights) = quadrature::gauss_legendre(48);
    let pref = Complex64::new(4.0 * lambda * lambda, 0.0);
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &x1) in nodes.iter().enumerate() {
            let t1 = 0.5 * t * (x1 + 1.0);
            let w1 = 0.5 * t * weights[i];
            for (j, &x2) in nodes.iter().enumerate() {
                let t2 = 0.5 * t1 * (x2 + 1.0);
                let w2 = 0.5 * t1 * weights[j];
                acc += (bath.two_point(t1, t2) + bath.two_point(t2, t1))
                    * Complex64::new(0.5 * w1 * w2, 0.0);
            }
        }
        out.push(pref * acc);
    }
    Ok(out)
}

/// Dynamical-map moment `mu_n^k = (-1)^(n-k) int D(tau; s) A^L(tau) A^R(s)`:
/// no delta pinning, both sides integrate as full descending chains from `t`.
pub fn map_moment(
    model: &SystemModel,
    bath: &BathModel,
    n: usize,
    k: usize,
    t: f64,
    spec: &QuadratureSpec,
) -> Result<SuperOperator> {
    if n < 1 || n > 4 {
        return Err(Error::OrderOutOfRange { n, max: 4 });
    }
    if k > n {
        return Err(Error::KOutOfRange { n, k });
    }
    let d = model.dim();
    let m = n - k;
    let (nodes, weights) = quadrature::gauss_legendre(spec.nodes_per_dimension);
    let mut taus: Vec<f64> = Vec::with_capacity(k);
    let mut ss: Vec<f64> = Vec::with_capacity(m);
    let mut acc: SuperOperator = DMatrix::zeros(d * d, d * d);
    let sign = if (n - k) % 2 == 0 { 1.0 } else { -1.0 };

    // nested descending chains: taus first, then ss, each from upper limit t
    fn recurse(
        depth: usize,
        total: usize,
        k: usize,
        upper_tau: f64,
        upper_s: f64,
        t: f64,
        weight: f64,
        nodes: &[f64],
        weights: &[f64],
        taus: &mut Vec<f64>,
        ss: &mut Vec<f64>,
        visit: &mut dyn FnMut(&[f64], &[f64], f64),
    ) {
        if depth == total {
            visit(taus, ss, weight);
            return;
        }
        let on_tau = depth < k;
        let upper = if on_tau { upper_tau } else { upper_s };
        for (i, &x) in nodes.iter().enumerate() {
            let u = 0.5 * upper * (x + 1.0);
            let w = 0.5 * upper * weights[i];
            if on_tau {
                taus.push(u);
                recurse(depth + 1, total, k, u, t, t, weight * w, nodes, weights, taus, ss, visit);
                taus.pop();
            } else {
                ss.push(u);
                recurse(depth + 1, total, k, upper_tau, u, t, weight * w, nodes, weights, taus, ss, visit);
                ss.pop();
            }
        }
    }

    let mut err: Option<Error> = None;
    {
        let mut visit = |taus: &[f64], ss: &[f64], w: f64| {
            if err.is_some() {
                return;
            }
            let dv = match d_block(bath, &DBlockArgs { taus: taus.to_vec(), ss: ss.to_vec() }) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            };
            if dv.norm() == 0.0 {
                return;
            }
            let left = model.ordered_product(taus, false);
            let right = model.ordered_product(ss, true);
            let kernel = linalg::superop_from_lr(&left, &right).expect("square by construction");
            acc += kernel * (dv * Complex64::new(sign * w, 0.0));
        };
        recurse(0, n, k, t, t, t, 1.0, &nodes, &weights, &mut taus, &mut ss, &mut visit);
    }
    if let Some(e) = err {
        return Err(e);
    }
    Ok(acc)
}

/// Truncated dynamical map `id + sum_n (-i lambda)^n sum_k mu_n^k`.
pub fn truncated_map(
    model: &SystemModel,
    bath: &BathModel,
    max_order: usize,
    t: f64,
    spec: &QuadratureSpec,
) -> Result<SuperOperator> {
    let d = model.dim();
    let mut phi: SuperOperator = DMatrix::identity(d * d, d * d);
    let minus_i_lambda = Complex64::new(0.0, -model.lambda());
    let mut pref = Complex64::new(1.0, 0.0);
    for n in 1..=max_order {
        pref *= minus_i_lambda;
        for k in 0..=n {
            phi += map_moment(model, bath, n, k, t, spec)? * pref;
        }
    }
    Ok(phi)
}

/// One row of a coupling-strength sweep.
pub struct ConvergenceRow {
    pub lambda: f64,
    pub residual: f64,
}

/// Residuals `|L_exact - sum_n lambda^n L_n|_F` over a lambda sweep, plus the
/// fitted log-log slope.
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub slope: f64,
}

/// Sweep the coupling strength and compare the truncated generator at order
/// `max_order` against the exact generator extracted from the brute-force
/// map, at a single probe time. The bath must be a single thermal mode (the
/// exact oracle).
pub fn convergence_study(
    model: &SystemModel,
    bath: &BathModel,
    max_order: usize,
    t: f64,
    lambdas: &[f64],
    fock_cutoff: usize,
    spec: &QuadratureSpec,
) -> Result<ConvergenceTable> {
    let mode = match bath {
        BathModel::SingleModeThermal { g, omega, nbar } => {
            SingleMode { omega: *omega, g: *g, nbar: *nbar }
        }
        _ => {
            return Err(Error::PreconditionFailed(
                "convergence study needs the single-mode exact oracle",
            ))
        }
    };
    let expansion = CumulantExpansion::new(max_order, VanishingRule::None)?;
    let h = 1e-3;
    let fd_grid: Vec<f64> = (0..5).map(|i| t + (i as f64 - 2.0) * h).collect();
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let m = SystemModel::new(model.hamiltonian().clone(), model.coupling().clone(), lambda)?;
        let exact_maps = exact_map_single_mode(&m, &mode, fock_cutoff, &fd_grid)?;
        let exact = exact_tcl_from_map(&exact_maps)?;
        let l_exact = &exact.generators[2];
        let l_pert = generator::build_generator(&m, bath, &expansion, max_order, t, spec)?;
        rows.push(ConvergenceRow {
            lambda,
            residual: linalg::frobenius_norm(&(l_exact - l_pert)),
        });
    }
    // least-squares slope of ln(residual) against ln(lambda)
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.residual > 0.0 && r.lambda > 0.0)
        .map(|r| (libm::log(r.lambda), libm::log(r.residual)))
        .collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    } else {
        f64::NAN
    };
    Ok(ConvergenceTable { rows, slope })
}
