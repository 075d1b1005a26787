//! Gauss-Legendre integration of pinned cumulant terms times operator
//! kernels over [0, t]^(n-1).
//!
//! Each block of a term constrains its own tau list and s list to be
//! internally descending; nothing orders variables across blocks or across
//! the two sides of one block. The integration domain therefore factors into
//! independent descending chains, and each chain becomes an iterated integral
//! with nested upper limits (u_i in [0, u_{i-1}]), affinely mapped to
//! Gauss-Legendre nodes. Theta indicators are never sampled, which preserves
//! polynomial convergence.

use alloc::vec::Vec;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::bath::BathModel;
use crate::cumulant::{Pin, PinnedTerm};
use crate::linalg::{self, Operator, SuperOperator};
use crate::model::SystemModel;
use crate::{Error, Result};

/// Practical ceiling on free integration dimensions (order n <= 5 pinned).
pub const MAX_FREE_DIMS: usize = 4;

/// Fixed open Gauss-Legendre rule, `nodes_per_dimension >= 4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSpec {
    pub nodes_per_dimension: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { nodes_per_dimension: 24 }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre polynomial. Deterministic for a given count.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-like initial guess
        let mut x = libm::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n and P_n' by recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if libm::fabs(dx) < 1e-15 {
                break;
            }
        }
        nodes.push(-x); // roots found largest-first, so negate for ascending
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Nodes/weights mapped to [0, upper].
fn mapped(nodes: &[f64], weights: &[f64], upper: f64) -> Vec<(f64, f64)> {
    let half = upper / 2.0;
    nodes
        .iter()
        .zip(weights)
        .map(|(&x, &w)| (half * (x + 1.0), half * w))
        .collect()
}

/// One independent descending chain of integration variables. `head_fixed`
/// marks a chain led by the pinned variable (fixed to the outer time `t`).
#[derive(Debug, Clone)]
struct Chain {
    /// variable slots, outermost (largest) first; `(is_tau, index0)`
    vars: Vec<(bool, usize)>,
    head_fixed: bool,
}

/// Decompose a pinned term's free variables into independent descending
/// chains. Each block contributes its tau list and its s list as separate
/// chains; the chain containing the pinned variable keeps `t` as its fixed
/// upper limit.
fn chains_of(term: &PinnedTerm) -> Vec<Chain> {
    let mut chains = Vec::new();
    for block in &term.base.blocks {
        for (is_tau, range) in [(true, block.tau), (false, block.s)] {
            if let Some((lo, hi)) = range {
                let vars: Vec<(bool, usize)> = (lo..=hi).map(|i| (is_tau, i - 1)).collect();
                let pinned_head = block.dotted
                    && lo == 1
                    && ((is_tau && term.pin == Pin::TauOne)
                        || (!is_tau && term.pin == Pin::SOne));
                chains.push(Chain { vars, head_fixed: pinned_head });
            }
        }
    }
    chains
}

fn free_dims(chains: &[Chain]) -> usize {
    chains
        .iter()
        .map(|c| c.vars.len() - usize::from(c.head_fixed))
        .sum()
}

/// Integrate `eval_pinned(term) * kernel(taus, ss)` over the free variables
/// of the term, where `kernel` maps a full time assignment to a matrix
/// contribution. Summation order is fixed, so results are bit-reproducible.
fn integrate_with_kernel(
    term: &PinnedTerm,
    bath: &BathModel,
    t: f64,
    spec: &QuadratureSpec,
    n: usize,
    k: usize,
    kernel: &mut dyn FnMut(&[f64], &[f64]) -> DMatrix<Complex64>,
    out_rows: usize,
    out_cols: usize,
) -> Result<DMatrix<Complex64>> {
    let chains = chains_of(term);
    let dims = free_dims(&chains);
    if dims > MAX_FREE_DIMS {
        return Err(Error::QuadratureDimension { dims, max: MAX_FREE_DIMS });
    }
    let (nodes, weights) = gauss_legendre(spec.nodes_per_dimension.max(4));

    let mut taus = alloc::vec![0.0f64; k];
    let mut ss = alloc::vec![0.0f64; n - k];
    match term.pin {
        Pin::TauOne => taus[0] = t,
        Pin::SOne => ss[0] = t,
    }

    let mut acc = DMatrix::zeros(out_rows, out_cols);
    // depth-first product over chains, nested limits within each chain
    fn recurse(
        chains: &[Chain],
        chain_idx: usize,
        var_idx: usize,
        upper: f64,
        weight: f64,
        t: f64,
        nodes: &[f64],
        weights: &[f64],
        taus: &mut [f64],
        ss: &mut [f64],
        visit: &mut dyn FnMut(f64, &mut [f64], &mut [f64]),
    ) {
        if chain_idx == chains.len() {
            visit(weight, taus, ss);
            return;
        }
        let chain = &chains[chain_idx];
        if var_idx == chain.vars.len() {
            recurse(chains, chain_idx + 1, 0, t, weight, t, nodes, weights, taus, ss, visit);
            return;
        }
        if var_idx == 0 && chain.head_fixed {
            // pinned variable already assigned to t; nested limit is t
            recurse(chains, chain_idx, 1, t, weight, t, nodes, weights, taus, ss, visit);
            return;
        }
        for (x, w) in mapped(nodes, weights, upper) {
            let (is_tau, idx) = chain.vars[var_idx];
            if is_tau {
                taus[idx] = x;
            } else {
                ss[idx] = x;
            }
            recurse(chains, chain_idx, var_idx + 1, x, weight * w, t, nodes, weights, taus, ss, visit);
        }
    }

    let coeff = Complex64::new(term.base.coeff as f64, 0.0);
    let mut visit = |weight: f64, taus: &mut [f64], ss: &mut [f64]| {
        let mut value = coeff;
        for block in &term.base.blocks {
            let args = crate::cumulant::eval_pinned_block_args(block, taus, ss);
            value *= crate::bath::d_block(bath, &args).unwrap_or(Complex64::new(0.0, 0.0));
            if value.norm() == 0.0 {
                return;
            }
        }
        acc += kernel(taus, ss) * (value * Complex64::new(weight, 0.0));
    };
    recurse(&chains, 0, 0, t, 1.0, t, &nodes, &weights, &mut taus, &mut ss, &mut visit);
    Ok(acc)
}

/// Integral of the pinned cumulant term against the left/right operator
/// kernel `X -> A(taus) X A^dag(ss)`, as a superoperator. Carries no `i^n`
/// or `(-1)^k` prefactor; the generator assembly applies those.
pub fn integrate_term(
    term: &PinnedTerm,
    model: &SystemModel,
    bath: &BathModel,
    t: f64,
    spec: &QuadratureSpec,
    n: usize,
    k: usize,
) -> Result<SuperOperator> {
    let d = model.dim();
    let mut kernel = |taus: &[f64], ss: &[f64]| {
        let left = model.ordered_product(taus, false);
        let right = model.ordered_product(ss, true);
        linalg::superop_from_lr(&left, &right).expect("equal dims by construction")
    };
    integrate_with_kernel(term, bath, t, spec, n, k, &mut kernel, d * d, d * d)
}

/// Integral of the pinned cumulant term against the scalar-weighted operator
/// kernel `<A^dag(ss)>_{1/d} * A(taus)`, used by the effective-Hamiltonian
/// route.
pub fn integrate_term_operator(
    term: &PinnedTerm,
    model: &SystemModel,
    bath: &BathModel,
    t: f64,
    spec: &QuadratureSpec,
    n: usize,
    k: usize,
) -> Result<Operator> {
    let d = model.dim();
    let mut kernel = |taus: &[f64], ss: &[f64]| {
        let avg = crate::model::maximally_mixed_average(&model.ordered_product(ss, true));
        model.ordered_product(taus, false) * avg
    };
    integrate_with_kernel(term, bath, t, spec, n, k, &mut kernel, d, d)
}

/// Superoperator Frobenius norms of [`integrate_term`] per node count, for
/// convergence studies.
pub fn integral_convergence(
    term: &PinnedTerm,
    model: &SystemModel,
    bath: &BathModel,
    t: f64,
    node_counts: &[usize],
    n: usize,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(node_counts.len());
    for &nodes in node_counts {
        let spec = QuadratureSpec { nodes_per_dimension: nodes };
        let s = integrate_term(term, model, bath, t, &spec, n, k)?;
        out.push((nodes, linalg::frobenius_norm(&s)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    extern crate std;

    use super::*;
    use crate::bath::BathModel;
    use crate::cumulant::{expand_recursive, pin_terms, Pin};
    use crate::linalg::{identity, max_abs, ONE, ZERO};
    use crate::model::SystemModel;
    use nalgebra::DMatrix;

    fn sigma_z() -> Operator {
        DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }

    fn sigma_x() -> Operator {
        DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    #[test]
    fn gauss_legendre_exactness() {
        // degree <= 2n-1 polynomials integrate exactly on [-1, 1]
        for n in [4usize, 8, 16] {
            let (nodes, weights) = gauss_legendre(n);
            for degree in 0..(2 * n) {
                let value: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(&x, &w)| w * libm::pow(x, degree as f64))
                    .sum();
                let exact = if degree % 2 == 0 { 2.0 / (degree as f64 + 1.0) } else { 0.0 };
                assert!(
                    (value - exact).abs() < 1e-12,
                    "n = {n}, degree = {degree}: {value} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn nodes_are_open_and_distinct() {
        let (nodes, _) = gauss_legendre(24);
        assert!(nodes.iter().all(|&x| x > -1.0 && x < 1.0));
        for w in nodes.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn zero_dimensional_first_order_term() {
        // n = 1, k = 1 pinned: no integration, kernel A_t (x) 1
        let model = SystemModel::new(sigma_z() * Complex64::new(0.5, 0.0), sigma_x(), 1.0).unwrap();
        let bath = BathModel::Custom {
            n_point: alloc::boxed::Box::new(|_| Complex64::new(0.3, 0.0)),
        };
        let terms = expand_recursive(1, 1).unwrap();
        let pinned = pin_terms(&terms);
        let t = 1.2;
        let spec = QuadratureSpec::default();
        let s = integrate_term(&pinned[0], &model, &bath, t, &spec, 1, 1).unwrap();
        let expected = linalg::superop_from_lr(&model.interaction_picture_a(t), &identity(2))
            .unwrap()
            * Complex64::new(0.3, 0.0);
        assert!(max_abs(&(s - expected)) < 1e-13);
    }

    #[test]
    fn simplex_volume_from_constant_bath() {
        // constant bath == 1 on a dotted descending chain of length 3
        // (pinned head + 2 free): integral over t > u1 > u2 gives t^2/2
        let model = SystemModel::new(sigma_z() * Complex64::new(0.0, 0.0), sigma_z(), 1.0).unwrap();
        let bath = BathModel::Custom {
            n_point: alloc::boxed::Box::new(|_| Complex64::new(1.0, 0.0)),
        };
        let terms = expand_recursive(3, 3).unwrap();
        let joint = terms.iter().find(|t| t.blocks.len() == 1).unwrap();
        let pinned = pin_terms(core::slice::from_ref(joint));
        assert_eq!(pinned[0].pin, Pin::TauOne);
        let t = 1.7;
        let spec = QuadratureSpec { nodes_per_dimension: 16 };
        let s = integrate_term(&pinned[0], &model, &bath, t, &spec, 3, 3).unwrap();
        // A = sigma_z static, A^3 = sigma_z; kernel constant
        let kernel = linalg::superop_from_lr(
            &(sigma_z() * sigma_z() * sigma_z()),
            &identity(2),
        )
        .unwrap();
        let expected = kernel * Complex64::new(t * t / 2.0, 0.0);
        assert!(max_abs(&(s - expected)) < 1e-12);
    }

    #[test]
    fn matches_adaptive_reference_one_dimensional() {
        // (n=2, k=1) joint dotted term, TauOne pin, dephasing model:
        // integral over s in [0, t] of C(s, t) * [sz X sz]
        let model = SystemModel::new(sigma_z() * Complex64::new(0.6, 0.0), sigma_z(), 1.0).unwrap();
        let bath = BathModel::single_mode_thermal(0.9, 1.3, 0.4);
        let terms = expand_recursive(2, 1).unwrap();
        let joint = terms.iter().find(|t| t.blocks.len() == 1).unwrap();
        let pinned = pin_terms(core::slice::from_ref(joint));
        let tau_pin = pinned.iter().find(|p| p.pin == Pin::TauOne).unwrap();
        let t = 2.3;
        let spec = QuadratureSpec::default();
        let s = integrate_term(tau_pin, &model, &bath, t, &spec, 2, 1).unwrap();

        // adaptive reference: recursive Simpson on the scalar integrand
        fn adaptive<F: Fn(f64) -> Complex64>(
            f: &F,
            a: f64,
            b: f64,
            fa: Complex64,
            fb: Complex64,
            fm: Complex64,
            eps: f64,
            depth: usize,
        ) -> Complex64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let h = b - a;
            let whole = (fa + fm * 4.0 + fb) * (h / 6.0);
            let left = (fa + flm * 4.0 + fm) * (h / 12.0);
            let right = (fm + frm * 4.0 + fb) * (h / 12.0);
            let delta = left + right - whole;
            if depth == 0 || delta.norm() < 15.0 * eps {
                left + right + delta / 15.0
            } else {
                adaptive(f, a, m, fa, fm, flm, eps / 2.0, depth - 1)
                    + adaptive(f, m, b, fm, fb, frm, eps / 2.0, depth - 1)
            }
        }
        let f = |s: f64| bath.two_point(s, t);
        let scalar = adaptive(&f, 0.0, t, f(0.0), f(t), f(t / 2.0), 1e-12, 30);
        let expected = linalg::superop_from_lr(&sigma_z(), &sigma_z()).unwrap() * scalar;
        assert!(max_abs(&(s - expected)) < 1e-9);
    }

    #[test]
    fn convergence_decreasing_differences() {
        let model = SystemModel::new(sigma_z() * Complex64::new(0.6, 0.0), sigma_x(), 1.0).unwrap();
        let bath = BathModel::single_mode_thermal(0.9, 1.3, 0.0);
        let terms = expand_recursive(2, 1).unwrap();
        let joint = terms.iter().find(|t| t.blocks.len() == 1).unwrap();
        let pinned = pin_terms(core::slice::from_ref(joint));
        let values = integral_convergence(&pinned[0], &model, &bath, 2.0, &[8, 16, 32], 2, 1)
            .unwrap();
        let v8 = values[0].1;
        let v16 = values[1].1;
        let v32 = values[2].1;
        assert!((v32 - v16).abs() <= (v16 - v8).abs() + 1e-14);
    }

    #[test]
    fn zero_dimensional_values_identical_across_node_counts() {
        let model = SystemModel::new(sigma_z() * Complex64::new(0.5, 0.0), sigma_x(), 1.0).unwrap();
        let bath = BathModel::Custom {
            n_point: alloc::boxed::Box::new(|_| Complex64::new(0.5, 0.1)),
        };
        let terms = expand_recursive(1, 1).unwrap();
        let pinned = pin_terms(&terms);
        let values =
            integral_convergence(&pinned[0], &model, &bath, 1.0, &[8, 16, 32], 1, 1).unwrap();
        assert_eq!(values[0].1, values[1].1);
        assert_eq!(values[1].1, values[2].1);
    }

    #[test]
    fn determinism_bit_identical() {
        let model = SystemModel::new(sigma_z() * Complex64::new(0.6, 0.0), sigma_x(), 1.0).unwrap();
        let bath = BathModel::single_mode_thermal(0.9, 1.3, 0.2);
        let terms = expand_recursive(3, 2).unwrap();
        let pinned = pin_terms(&terms);
        let spec = QuadratureSpec { nodes_per_dimension: 8 };
        for p in &pinned {
            let a = integrate_term(p, &model, &bath, 1.5, &spec, 3, 2).unwrap();
            let b = integrate_term(p, &model, &bath, 1.5, &spec, 3, 2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dimension_ceiling_enforced() {
        let model = SystemModel::new(sigma_z() * Complex64::new(0.5, 0.0), sigma_x(), 1.0).unwrap();
        let bath = BathModel::Custom {
            n_point: alloc::boxed::Box::new(|_| Complex64::new(1.0, 0.0)),
        };
        let terms = expand_recursive(6, 6).unwrap();
        let joint = terms.iter().find(|t| t.blocks.len() == 1).unwrap();
        let pinned = pin_terms(core::slice::from_ref(joint));
        let spec = QuadratureSpec { nodes_per_dimension: 4 };
        assert!(matches!(
            integrate_term(&pinned[0], &model, &bath, 1.0, &spec, 6, 6),
            Err(Error::QuadratureDimension { .. })
        ));
    }
}
