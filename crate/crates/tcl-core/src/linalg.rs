//! Dense complex operator and superoperator algebra.
//!
//! Conventions fixed here and relied on everywhere else:
//! column-stacking vectorization (component `i + d*j` of `vectorize(X)` is
//! `X[(i, j)]`), and the generalized Gell-Mann basis ordered as symmetric
//! pairs, antisymmetric pairs, then diagonal, ascending indices.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Dense complex d x d matrix on the system Hilbert space.
pub type Operator = DMatrix<Complex64>;

/// Dense complex d^2 x d^2 matrix acting on vectorized operators.
pub type SuperOperator = DMatrix<Complex64>;

pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// d x d identity.
pub fn identity(d: usize) -> Operator {
    DMatrix::identity(d, d)
}

/// Column-stacking vectorization: component `i + d*j` equals `X[(i, j)]`.
///
/// nalgebra stores matrices column-major, so this is a straight copy.
pub fn vectorize(x: &Operator) -> DVector<Complex64> {
    DVector::from_column_slice(x.as_slice())
}

/// Exact inverse of [`vectorize`].
pub fn devectorize(v: &DVector<Complex64>, d: usize) -> Operator {
    DMatrix::from_column_slice(d, d, v.as_slice())
}

/// Apply a superoperator to an operator through the vectorization convention.
pub fn apply(s: &SuperOperator, x: &Operator) -> Operator {
    let d = x.nrows();
    devectorize(&(s * vectorize(x)), d)
}

/// Superoperator of `X -> left * X * right`.
///
/// Under column stacking this is the Kronecker construction `right^T (x) left`.
pub fn superop_from_lr(left: &Operator, right: &Operator) -> Result<SuperOperator> {
    if left.nrows() != right.nrows() {
        return Err(Error::DimensionMismatch {
            expected: left.nrows(),
            found: right.nrows(),
        });
    }
    Ok(right.transpose().kronecker(left))
}

pub fn max_abs(x: &Operator) -> f64 {
    x.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn frobenius_norm(x: &Operator) -> f64 {
    libm::sqrt(x.iter().map(|z| z.norm_sqr()).sum())
}

/// `max|X - X^dag| <= tol`, scaled by `max(1, |X|_max)`.
pub fn is_hermitian(x: &Operator, tol: f64) -> bool {
    let scale = f64::max(1.0, max_abs(x));
    max_abs(&(x - x.adjoint())) <= tol * scale
}

pub fn all_finite(x: &Operator) -> bool {
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Generalized Gell-Mann matrices for dimension `d`: the d^2 - 1 Hermitian,
/// traceless operators with `Tr(G_i G_j) = delta_ij`, ordered as symmetric
/// pairs, antisymmetric pairs, then diagonal, ascending indices.
///
/// Together with `G_0 = 1/sqrt(d)` they form an orthonormal operator basis
/// under the Hilbert-Schmidt inner product.
pub fn orthonormal_traceless_basis(d: usize) -> Result<Vec<Operator>> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    let mut basis = Vec::with_capacity(d * d - 1);
    let inv_sqrt2 = Complex64::new(1.0 / libm::sqrt(2.0), 0.0);
    // symmetric pairs
    for j in 0..d {
        for k in (j + 1)..d {
            let mut g: Operator = DMatrix::zeros(d, d);
            g[(j, k)] = inv_sqrt2;
            g[(k, j)] = inv_sqrt2;
            basis.push(g);
        }
    }
    // antisymmetric pairs
    for j in 0..d {
        for k in (j + 1)..d {
            let mut g: Operator = DMatrix::zeros(d, d);
            g[(j, k)] = -I * inv_sqrt2;
            g[(k, j)] = I * inv_sqrt2;
            basis.push(g);
        }
    }
    // diagonal
    for l in 1..d {
        let norm = 1.0 / libm::sqrt((l * (l + 1)) as f64);
        let mut g: Operator = DMatrix::zeros(d, d);
        for j in 0..l {
            g[(j, j)] = Complex64::new(norm, 0.0);
        }
        g[(l, l)] = Complex64::new(-(l as f64) * norm, 0.0);
        basis.push(g);
    }
    Ok(basis)
}

/// Full orthonormal basis `{G_0 = 1/sqrt(d), G_1, ..., G_{d^2-1}}`.
pub fn full_basis(d: usize) -> Result<Vec<Operator>> {
    let mut basis = Vec::with_capacity(d * d);
    basis.push(identity(d) * Complex64::new(1.0 / libm::sqrt(d as f64), 0.0));
    basis.extend(orthonormal_traceless_basis(d)?);
    Ok(basis)
}

/// Hilbert-Schmidt inner product `Tr(A^dag B)`.
pub fn hs_inner(a: &Operator, b: &Operator) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn check_orthonormal(basis: &[Operator]) -> Result<()> {
    for (i, gi) in basis.iter().enumerate() {
        for (j, gj) in basis.iter().enumerate() {
            let expected = if i == j { ONE } else { ZERO };
            if (hs_inner(gi, gj) - expected).norm() > 1e-10 {
                return Err(Error::NonOrthonormalBasis);
            }
        }
    }
    Ok(())
}

/// Coefficients `c` of a superoperator over an orthonormal operator basis
/// (with `G_0 = 1/sqrt(d)` first): the unique matrix with
/// `apply(S, X) = sum_{ab} c[a][b] G_a X G_b` for all `X`, obtained by
/// Hilbert-Schmidt projection onto the superoperator basis
/// `superop_from_lr(G_a, G_b)`.
pub fn superop_coefficients(s: &SuperOperator, basis: &[Operator]) -> Result<DMatrix<Complex64>> {
    check_orthonormal(basis)?;
    let m = basis.len();
    let mut c = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            let t = superop_from_lr(&basis[a], &basis[b])?;
            // elementwise Frobenius projection; the T_ab are orthonormal
            c[(a, b)] = t.iter().zip(s.iter()).map(|(x, y)| x.conj() * y).sum();
        }
    }
    Ok(c)
}

/// Reassemble a superoperator from basis coefficients (inverse of
/// [`superop_coefficients`]).
pub fn superop_from_coefficients(
    c: &DMatrix<Complex64>,
    basis: &[Operator],
) -> Result<SuperOperator> {
    let d = basis[0].nrows();
    let mut s: SuperOperator = DMatrix::zeros(d * d, d * d);
    for a in 0..basis.len() {
        for b in 0..basis.len() {
            if c[(a, b)] != ZERO {
                s += superop_from_lr(&basis[a], &basis[b])? * c[(a, b)];
            }
        }
    }
    Ok(s)
}
