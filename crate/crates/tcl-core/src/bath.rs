//! Multi-time environment correlation functions and the time-ordered
//! D-blocks built from them.

use alloc::boxed::Box;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::{Error, Result};

pub type TwoPointFn = Box<dyn Fn(f64, f64) -> Complex64 + Send + Sync>;
pub type MeanFn = Box<dyn Fn(f64) -> Complex64 + Send + Sync>;
pub type NPointFn = Box<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

/// Provider of ordered multi-time correlation functions `<B_{t1} ... B_{tn}>`.
///
/// Gaussian kinds are defined by a mean and a two-point function; higher
/// moments follow from the Isserlis/Wick expansion. Custom baths supply the
/// full ordered n-point function themselves; no cumulant truncation is
/// applied to them.
///
/// The crate's test suite assumes the conjugation symmetry
/// `D*(taus, ss) = D(ss, taus)`, which holds for a Hermitian coupling
/// operator and a stationary environment state. Custom non-stationary baths
/// are not required to satisfy it by the engine itself.
pub enum BathModel {
    /// Gaussian statistics with arbitrary mean and two-point function.
    GaussianGeneric { two_point: TwoPointFn, mean: MeanFn },
    /// Single bosonic mode `B = a + a^dag` at frequency `omega`, coupling
    /// `g > 0`, thermal occupation `nbar >= 0`:
    /// `C(t,s) = g^2 [ (nbar+1) e^{-i omega (t-s)} + nbar e^{i omega (t-s)} ]`,
    /// mean identically zero.
    SingleModeThermal { g: f64, omega: f64, nbar: f64 },
    /// Fully custom ordered moments.
    Custom { n_point: NPointFn },
}

impl BathModel {
    pub fn single_mode_thermal(g: f64, omega: f64, nbar: f64) -> Self {
        BathModel::SingleModeThermal { g, omega, nbar }
    }

    /// Mean of `B_t` (zero for all built-ins except a Gaussian with explicit
    /// mean; custom baths report their one-point function).
    pub fn mean(&self, t: f64) -> Result<Complex64> {
        match self {
            BathModel::GaussianGeneric { mean, .. } => Ok(mean(t)),
            BathModel::SingleModeThermal { .. } => Ok(Complex64::new(0.0, 0.0)),
            BathModel::Custom { n_point } => Ok(n_point(&[t])),
        }
    }

    /// Two-point function `C(t,s) = <B_t B_s>` for Gaussian kinds.
    pub fn two_point(&self, t: f64, s: f64) -> Complex64 {
        match self {
            BathModel::GaussianGeneric { two_point, .. } => two_point(t, s),
            BathModel::SingleModeThermal { g, omega, nbar } => {
                let phase = Complex64::new(0.0, -omega * (t - s)).exp();
                Complex64::new(g * g, 0.0)
                    * ((nbar + 1.0) * phase + nbar * phase.conj())
            }
            BathModel::Custom { n_point } => n_point(&[t, s]),
        }
    }

    /// Whether all odd moments vanish identically (mean-zero Gaussian).
    pub fn is_gaussian_mean_zero(&self) -> bool {
        matches!(self, BathModel::SingleModeThermal { .. })
    }

    /// Ordered moment `<B_{t1} B_{t2} ... B_{tn}>` in the listed order.
    ///
    /// Gaussian kinds use the moment-from-cumulant expansion truncated at
    /// second cumulants: the sum over partial pairings (i before j keeps the
    /// order inside the centered two-point function) times mean factors for
    /// unpaired times.
    pub fn n_point(&self, times: &[f64]) -> Result<Complex64> {
        if times.is_empty() {
            return Err(Error::EmptyDBlock);
        }
        match self {
            BathModel::Custom { n_point } => Ok(n_point(times)),
            BathModel::SingleModeThermal { .. } | BathModel::GaussianGeneric { .. } => {
                Ok(self.gaussian_moment(times))
            }
        }
    }

    /// Centered two-point function `C(t,s) - mu(t) mu(s)`.
    fn centered_two_point(&self, t: f64, s: f64) -> Complex64 {
        let mu = |u: f64| match self {
            BathModel::GaussianGeneric { mean, .. } => mean(u),
            _ => Complex64::new(0.0, 0.0),
        };
        self.two_point(t, s) - mu(t) * mu(s)
    }

    fn gaussian_moment(&self, times: &[f64]) -> Complex64 {
        let mu = |u: f64| match self {
            BathModel::GaussianGeneric { mean, .. } => mean(u),
            _ => Complex64::new(0.0, 0.0),
        };
        // recursion over the first remaining index: either unpaired (mean
        // factor) or paired with a later index
        fn go(b: &BathModel, idx: &[usize], times: &[f64], mu: &dyn Fn(f64) -> Complex64) -> Complex64 {
            match idx {
                [] => Complex64::new(1.0, 0.0),
                [first, rest @ ..] => {
                    let mut acc = mu(times[*first]) * go(b, rest, times, mu);
                    for (pos, &j) in rest.iter().enumerate() {
                        let mut remaining = Vec::with_capacity(rest.len() - 1);
                        remaining.extend_from_slice(&rest[..pos]);
                        remaining.extend_from_slice(&rest[pos + 1..]);
                        acc += b.centered_two_point(times[*first], times[j])
                            * go(b, &remaining, times, mu);
                    }
                    acc
                }
            }
        }
        let idx: Vec<usize> = (0..times.len()).collect();
        go(self, &idx, times, &mu)
    }
}

/// Argument structure of a D-block: the two internally ordered time lists.
#[derive(Debug, Clone, PartialEq)]
pub struct DBlockArgs {
    pub taus: Vec<f64>,
    pub ss: Vec<f64>,
}

/// Non-ascending check; ties evaluate as ordered (theta convention
/// `theta_{a,b} = 1` for `a = b`).
fn descending(times: &[f64]) -> bool {
    times.windows(2).all(|w| w[0] >= w[1])
}

/// Time-ordered bath expectation
/// `D(taus, ss) = Tr{ B_{tau_1} ... B_{tau_k} rho_E B_{s_m} ... B_{s_1} } theta(taus) theta(ss)`.
///
/// Returns 0 unless both lists are internally descending. The trace is
/// evaluated by cyclicity as the ordered moment over
/// `[s_m, ..., s_1, tau_1, ..., tau_k]`.
pub fn d_block(bath: &BathModel, args: &DBlockArgs) -> Result<Complex64> {
    if args.taus.is_empty() && args.ss.is_empty() {
        return Err(Error::EmptyDBlock);
    }
    if !descending(&args.taus) || !descending(&args.ss) {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let mut times = Vec::with_capacity(args.taus.len() + args.ss.len());
    times.extend(args.ss.iter().rev());
    times.extend_from_slice(&args.taus);
    bath.n_point(&times)
}
