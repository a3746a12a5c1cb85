//! Numerical laboratory for non-adiabatic transitions in slowly driven
//! multi-level quantum systems.
//!
//! The transition probabilities between adiabatic states of an analytic,
//! real-symmetric Hamiltonian `H(τ)` are exponentially small in the drive
//! rate. This crate computes the exponents two independent ways and
//! cross-validates them:
//!
//! 1. **Empirical route** ([`propagate`]): integrate the time-dependent
//!    Schrödinger equation with fixed-step RK4, read off transition
//!    probabilities, and extrapolate the scaled exponents to the adiabatic
//!    limit.
//! 2. **Adiabatic route** ([`branch`], [`stokes`], [`action`], [`sequence`]):
//!    locate the complex-time branch points where pairs of analytically
//!    continued eigenvalues degenerate, trace the Stokes lines attached to
//!    them, integrate the branch-point actions, and select the allowed
//!    transition sequences with a topological rule.
//!
//! [`renorm`] adds diagnostics connecting the divergence of iteratively
//! renormalized Hamiltonians to the Stokes-line crossings, and [`harness`]
//! orchestrates end-to-end experiments (ensembles of random Hamiltonians,
//! both pipelines, comparison tables).
//!
//! Units: ħ = 1 throughout, and all times are the scaled variable τ = εt.
//! The adiabatic parameter ε enters only the propagator, the Stokes-line
//! step rule, and the renormalization iteration.

pub mod action;
pub mod branch;
pub mod cheb;
pub mod config;
pub mod harness;
pub mod model;
pub mod propagate;
pub mod renorm;
pub mod sequence;
pub mod spectral;
pub mod stokes;

/// Complex scalar used everywhere: double-precision complex time, energies,
/// amplitudes.
pub type C64 = num_complex::Complex<f64>;


pub use model::HamiltonianModel;



/// Run a closure over an indexed range, in parallel when the `parallel`
/// feature is enabled. Output order is by index either way.
pub(crate) fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
