//! System-side model: bare Hamiltonian, coupling operator, and
//! interaction-picture operator products.

use alloc::boxed::Box;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linalg::{self, Operator};
use crate::{Error, Result};

/// Optional user-supplied interaction-picture coupling `t -> A_t`, overriding
/// the eigendecomposition path. Must be safe for concurrent invocation.
pub type CouplingFn = Box<dyn Fn(f64) -> Operator + Send + Sync>;

/// Time-independent system model `H_S`, coupling operator `A` (Schroedinger
/// picture, Hermitian) and coupling strength `lambda >= 0`.
pub struct SystemModel {
    dim: usize,
    h_s: Operator,
    coupling: Operator,
    lambda: f64,
    /// eigenvalues of H_S
    energies: Vec<f64>,
    /// unitary with eigenvectors of H_S as columns
    eigvecs: Operator,
    /// coupling operator in the H_S eigenbasis
    coupling_eig: Operator,
    custom_picture: Option<CouplingFn>,
}

impl SystemModel {
    pub fn new(h_s: Operator, coupling: Operator, lambda: f64) -> Result<Self> {
        let dim = h_s.nrows();
        if coupling.nrows() != dim || coupling.ncols() != dim || h_s.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: coupling.nrows() });
        }
        if !linalg::is_hermitian(&h_s, 1e-12) {
            return Err(Error::PreconditionFailed("H_S must be Hermitian"));
        }
        if !linalg::is_hermitian(&coupling, 1e-12) {
            return Err(Error::PreconditionFailed("coupling operator A must be Hermitian"));
        }
        if !(lambda >= 0.0) {
            return Err(Error::PreconditionFailed("lambda must be >= 0"));
        }
        let eig = h_s.clone().symmetric_eigen();
        let eigvecs = eig.eigenvectors.clone();
        let coupling_eig = eigvecs.adjoint() * &coupling * &eigvecs;
        Ok(Self {
            dim,
            h_s,
            coupling,
            lambda,
            energies: eig.eigenvalues.iter().cloned().collect(),
            eigvecs,
            coupling_eig,
            custom_picture: None,
        })
    }

    /// Replace the built-in eigendecomposition path with a user-supplied
    /// `t -> A_t`.
    pub fn with_coupling_picture(mut self, f: CouplingFn) -> Self {
        self.custom_picture = Some(f);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.h_s
    }

    pub fn coupling(&self) -> &Operator {
        &self.coupling
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `exp(+i H_S t)` from the cached eigendecomposition.
    pub fn free_evolution(&self, t: f64) -> Operator {
        let phases: Vec<Complex64> =
            self.energies.iter().map(|&e| (Complex64::new(0.0, e * t)).exp()).collect();
        let d = self.dim;
        let mut diag: Operator = DMatrix::zeros(d, d);
        for j in 0..d {
            diag[(j, j)] = phases[j];
        }
        &self.eigvecs * diag * self.eigvecs.adjoint()
    }

    /// Interaction-picture coupling operator
    /// `A_t = exp(+i H_S t) A exp(-i H_S t)`.
    pub fn interaction_picture_a(&self, t: f64) -> Operator {
        if let Some(f) = &self.custom_picture {
            return f(t);
        }
        let d = self.dim;
        // (A_eig)_{jk} * exp(i (e_j - e_k) t), rotated back
        let mut m: Operator = DMatrix::zeros(d, d);
        for j in 0..d {
            for k in 0..d {
                let phase = Complex64::new(0.0, (self.energies[j] - self.energies[k]) * t).exp();
                m[(j, k)] = self.coupling_eig[(j, k)] * phase;
            }
        }
        &self.eigvecs * m * self.eigvecs.adjoint()
    }

    /// Product of interaction-picture coupling operators over the listed
    /// times: `A_{t1} A_{t2} ... A_{tk}`, or the reverse ("dagger") order
    /// `A_{tk} ... A_{t1}`. The empty list gives the identity. No ordering is
    /// imposed on the input; time ordering lives in the cumulant
    /// theta-functions.
    pub fn ordered_product(&self, times: &[f64], dagger: bool) -> Operator {
        let mut acc = linalg::identity(self.dim);
        if dagger {
            for &t in times.iter().rev() {
                acc *= self.interaction_picture_a(t);
            }
        } else {
            for &t in times {
                acc *= self.interaction_picture_a(t);
            }
        }
        acc
    }
}

/// `Tr(X)/d`, the average over the maximally mixed state.
pub fn maximally_mixed_average(x: &Operator) -> Complex64 {
    x.trace() / Complex64::new(x.nrows() as f64, 0.0)
}
