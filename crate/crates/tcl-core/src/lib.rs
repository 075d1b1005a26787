//! Perturbative construction of time-convolutionless (TCL) generators for
//! open quantum systems.
//!
//! The crate builds the time-local generator of a reduced quantum dynamics
//! order by order in the system-bath coupling, via a recursive expansion of
//! generalized bath cumulants, decomposes each order into a canonical
//! generalized-Lindblad form with traceless Lindblad operators (minimal
//! dissipation), extracts the time-dependent effective Hamiltonian and
//! canonical rates, and propagates the reduced state. Exact single-mode
//! brute-force dynamics are provided as a reference.
//!
//! The crate is `no_std` (with `alloc`); all IO and file formats live in the
//! companion CLI crate.

#![no_std]

extern crate alloc;

pub mod bath;
pub mod cumulant;
pub mod dynamics;
pub mod generator;
pub mod linalg;
pub mod model;
pub mod quadrature;

use core::fmt;

pub use bath::{BathModel, DBlockArgs};
pub use cumulant::{BlockSpec, CumulantExpansion, CumulantTerm, Pin, PinnedTerm, VanishingRule};
pub use generator::CanonicalForm;
pub use linalg::{Operator, SuperOperator};
pub use model::SystemModel;
pub use quadrature::QuadratureSpec;

/// Errors produced across the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operators (or an operator and a superoperator) had incompatible sizes.
    DimensionMismatch { expected: usize, found: usize },
    /// A Hilbert-space dimension below the supported minimum.
    InvalidDimension(usize),
    /// The supplied operator basis is not orthonormal under the
    /// Hilbert-Schmidt inner product.
    NonOrthonormalBasis,
    /// A custom bath was queried without an n-point callable.
    MissingNPoint,
    /// A D-block was requested with both time lists empty.
    EmptyDBlock,
    /// Perturbative order outside the supported range.
    OrderOutOfRange { n: usize, max: usize },
    /// Left-operator count outside `0..=n`.
    KOutOfRange { n: usize, k: usize },
    /// Too many free integration variables for the fixed quadrature ceiling.
    QuadratureDimension { dims: usize, max: usize },
    /// A numerical precondition failed; the payload names the violated identity.
    PreconditionFailed(&'static str),
    /// The supplied initial state is not a density matrix.
    NotADensityMatrix(&'static str),
    /// The Fock cutoff leaves too much thermal occupation in the tail.
    FockCutoffTooSmall { cutoff: usize, suggested: usize },
    /// The dynamical map is numerically singular at some grid time.
    IllConditionedMap { time_index: usize, cond: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::InvalidDimension(d) => write!(f, "invalid dimension {d} (need d >= 2)"),
            Error::NonOrthonormalBasis => {
                write!(f, "operator basis is not orthonormal under the Hilbert-Schmidt product")
            }
            Error::MissingNPoint => {
                write!(f, "custom bath requires an n-point correlation callable")
            }
            Error::EmptyDBlock => write!(f, "D-block with both time lists empty is disallowed"),
            Error::OrderOutOfRange { n, max } => {
                write!(f, "perturbative order {n} outside supported range 1..={max}")
            }
            Error::KOutOfRange { n, k } => write!(f, "k = {k} outside 0..={n}"),
            Error::QuadratureDimension { dims, max } => {
                write!(
                    f,
                    "integral has {dims} free dimensions, above the ceiling {max}; \
                     lower the expansion order"
                )
            }
            Error::PreconditionFailed(what) => write!(f, "precondition failed: {what}"),
            Error::NotADensityMatrix(what) => write!(f, "not a density matrix: {what}"),
            Error::FockCutoffTooSmall { cutoff, suggested } => {
                write!(
                    f,
                    "Fock cutoff {cutoff} leaves thermal tail above 1e-10; try {suggested}"
                )
            }
            Error::IllConditionedMap { time_index, cond } => {
                write!(
                    f,
                    "dynamical map singular at grid index {time_index} (cond ~ {cond:.3e}); \
                     the TCL generator does not exist there"
                )
            }
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
