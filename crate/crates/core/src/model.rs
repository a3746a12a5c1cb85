//! Analytic model Hamiltonians evaluated at complex scaled time.
//!
//! Every kind has the two-matrix form `H(τ) = f₁(τ)·M₁ + f₂(τ)·M₂` with
//! entire or strip-analytic scalar coefficients, so analytic continuation off
//! the real axis is exact rather than interpolated. The matrices are real
//! symmetric, which makes `H(τ)` complex symmetric for complex τ and real for
//! real τ; the Schwartz reflection principle then gives
//! `H(conj τ) = conj(H(τ))`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::C64;

/// Which analytic family a [`HamiltonianModel`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// `H(τ) = cos(X)·H₁ + sin(X)·H₂` with `X(τ) = α·tanh(τ/α)` and two
    /// independent GOE draws for H₁, H₂.
    GoeInterp,
    /// Two-level linear sweep `H(τ) = ½ [[Aτ, Δ], [Δ, −Aτ]]`.
    LandauZener,
    /// Same interpolation as `GoeInterp` but with caller-supplied matrices.
    CustomPair,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid dimension: dim must be >= 1")]
    InvalidDimension,
    #[error("configuration error: missing parameter `{field}`")]
    MissingParameter { field: &'static str },
    #[error("configuration error: invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("matrix `{which}` is not symmetric (max asymmetry {max_asym:.3e})")]
    NotSymmetric { which: &'static str, max_asym: f64 },
    #[error(
        "tau = {tau} is within the guard radius of a matrix-element singularity \
         (distance {distance:.3e}, guard {guard:.3e})"
    )]
    NearSingularity { tau: C64, distance: f64, guard: f64 },
}

/// Draw a real symmetric matrix from the gaussian orthogonal ensemble.
///
/// Entries have mean 0 and variance `1 + δ_ij`: off-diagonal variance 1,
/// diagonal variance 2. Deterministic for a fixed seed.
pub fn goe_sample(dim: usize, seed: u64) -> Result<DMatrix<f64>, ModelError> {
    if dim == 0 {
        return Err(ModelError::InvalidDimension);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(goe_draw(dim, &mut rng))
}

fn goe_draw(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let off = Normal::new(0.0, 1.0).unwrap();
    let diag = Normal::new(0.0, std::f64::consts::SQRT_2).unwrap();
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let v = if i == j { diag.sample(rng) } else { off.sample(rng) };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn check_symmetric(m: &DMatrix<f64>, which: &'static str) -> Result<(), ModelError> {
    let mut max_asym = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if max_asym > 0.0 {
        return Err(ModelError::NotSymmetric { which, max_asym });
    }
    Ok(())
}

/// An analytic map from complex scaled time τ to an N×N complex symmetric
/// matrix. Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct HamiltonianModel {
    kind: ModelKind,
    dim: usize,
    /// Scale factor in `X(τ) = α·tanh(τ/α)` (interp kinds).
    alpha: f64,
    /// Gap Δ (Landau-Zener).
    delta: f64,
    /// Sweep rate A (Landau-Zener).
    slope: f64,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
    seed: u64,
    /// Guard radius around the poles of tanh(τ/α).
    pole_guard: f64,
}

impl HamiltonianModel {
    /// GOE interpolation model: `cos(X)·H₁ + sin(X)·H₂`, `X = α·tanh(τ/α)`,
    /// with H₁ and H₂ drawn independently from the GOE.
    pub fn goe_interp(dim: usize, alpha: f64, seed: u64) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidDimension);
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ModelError::InvalidParameter {
                field: "alpha",
                reason: format!("must be finite and > 0, got {alpha}"),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h1 = goe_draw(dim, &mut rng);
        let h2 = goe_draw(dim, &mut rng);
        Ok(Self {
            kind: ModelKind::GoeInterp,
            dim,
            alpha,
            delta: 0.0,
            slope: 0.0,
            h1,
            h2,
            seed,
            pole_guard: 0.1 * alpha,
        })
    }

    /// Landau-Zener model `½ [[Aτ, Δ], [Δ, −Aτ]]`.
    pub fn landau_zener(delta: f64, slope: f64) -> Result<Self, ModelError> {
        if !delta.is_finite() {
            return Err(ModelError::InvalidParameter {
                field: "delta",
                reason: format!("must be finite, got {delta}"),
            });
        }
        if !slope.is_finite() {
            return Err(ModelError::InvalidParameter {
                field: "slope",
                reason: format!("must be finite, got {slope}"),
            });
        }
        // H = Aτ·M₁ + Δ·M₂ with M₁ = ½σ_z, M₂ = ½σ_x.
        let m1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.5]);
        let m2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        Ok(Self {
            kind: ModelKind::LandauZener,
            dim: 2,
            alpha: 0.0,
            delta,
            slope,
            h1: m1,
            h2: m2,
            seed: 0,
            pole_guard: 0.0,
        })
    }

    /// Interpolation model with caller-supplied symmetric matrices, for
    /// regression fixtures beyond the GOE.
    pub fn custom_pair(
        h1: DMatrix<f64>,
        h2: DMatrix<f64>,
        alpha: f64,
    ) -> Result<Self, ModelError> {
        let dim = h1.nrows();
        if dim == 0 {
            return Err(ModelError::InvalidDimension);
        }
        if !h1.is_square() || !h2.is_square() || h2.nrows() != dim {
            return Err(ModelError::InvalidParameter {
                field: "h2",
                reason: "h1 and h2 must be square matrices of equal dimension".into(),
            });
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ModelError::InvalidParameter {
                field: "alpha",
                reason: format!("must be finite and > 0, got {alpha}"),
            });
        }
        check_symmetric(&h1, "h1")?;
        check_symmetric(&h2, "h2")?;
        Ok(Self {
            kind: ModelKind::CustomPair,
            dim,
            alpha,
            delta: 0.0,
            slope: 0.0,
            h1,
            h2,
            seed: 0,
            pole_guard: 0.1 * alpha,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// First matrix of the `f₁·M₁ + f₂·M₂` form.
    pub fn m1(&self) -> &DMatrix<f64> {
        &self.h1
    }

    /// Second matrix of the `f₁·M₁ + f₂·M₂` form.
    pub fn m2(&self) -> &DMatrix<f64> {
        &self.h2
    }

    /// Override the guard radius around matrix-element singularities.
    pub fn with_pole_guard(mut self, guard: f64) -> Self {
        self.pole_guard = guard;
        self
    }

    pub fn pole_guard(&self) -> f64 {
        self.pole_guard
    }

    /// The drive coordinate `X(τ)`.
    pub fn x_of(&self, tau: C64) -> C64 {
        match self.kind {
            ModelKind::LandauZener => self.slope * tau,
            ModelKind::GoeInterp | ModelKind::CustomPair => {
                (tau / self.alpha).tanh() * self.alpha
            }
        }
    }

    /// Scalar coefficients at real τ, in real arithmetic (hot path for the
    /// propagator).
    pub fn coeffs_real(&self, tau: f64) -> (f64, f64) {
        match self.kind {
            ModelKind::LandauZener => (self.slope * tau, self.delta),
            ModelKind::GoeInterp | ModelKind::CustomPair => {
                let x = self.alpha * (tau / self.alpha).tanh();
                (x.cos(), x.sin())
            }
        }
    }

    /// Scalar coefficients (f₁(τ), f₂(τ)) multiplying (M₁, M₂).
    pub fn coeffs(&self, tau: C64) -> (C64, C64) {
        match self.kind {
            ModelKind::LandauZener => (self.slope * tau, C64::new(self.delta, 0.0)),
            ModelKind::GoeInterp | ModelKind::CustomPair => {
                let x = self.x_of(tau);
                (x.cos(), x.sin())
            }
        }
    }

    /// τ-derivatives (f₁′(τ), f₂′(τ)) of the scalar coefficients.
    pub fn coeff_derivs(&self, tau: C64) -> (C64, C64) {
        match self.kind {
            ModelKind::LandauZener => (C64::new(self.slope, 0.0), C64::new(0.0, 0.0)),
            ModelKind::GoeInterp | ModelKind::CustomPair => {
                let x = self.x_of(tau);
                // X'(τ) = sech²(τ/α)
                let sech = 1.0 / (tau / self.alpha).cosh();
                let xp = sech * sech;
                (-x.sin() * xp, x.cos() * xp)
            }
        }
    }

    /// Distance from τ to the nearest singularity of the matrix elements
    /// (the poles of tanh(τ/α) at τ = iαπ(k+½)). Infinite for the entire
    /// Landau-Zener kind.
    pub fn pole_distance(&self, tau: C64) -> f64 {
        match self.kind {
            ModelKind::LandauZener => f64::INFINITY,
            ModelKind::GoeInterp | ModelKind::CustomPair => {
                let spacing = self.alpha * std::f64::consts::PI;
                // Poles sit on the imaginary axis at ±spacing·(k + ½).
                let y = tau.im.abs();
                let k = ((y / spacing) - 0.5).round().max(0.0);
                let mut d = f64::INFINITY;
                for kk in [k - 1.0, k, k + 1.0] {
                    if kk < 0.0 {
                        continue;
                    }
                    let py = spacing * (kk + 0.5);
                    d = d.min(tau.re.hypot(y - py));
                }
                d
            }
        }
    }

    /// Evaluate the Hamiltonian at complex scaled time τ.
    ///
    /// Errors if τ lies within the guard radius of a matrix-element pole
    /// (interp kinds only).
    pub fn eval(&self, tau: C64) -> Result<DMatrix<C64>, ModelError> {
        let distance = self.pole_distance(tau);
        if distance < self.pole_guard {
            return Err(ModelError::NearSingularity {
                tau,
                distance,
                guard: self.pole_guard,
            });
        }
        let (f1, f2) = self.coeffs(tau);
        let n = self.dim;
        let mut out = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = f1 * self.h1[(i, j)] + f2 * self.h2[(i, j)];
            }
        }
        Ok(out)
    }

    /// Evaluate at real τ, where the matrix is real symmetric.
    pub fn eval_real(&self, tau: f64) -> DMatrix<f64> {
        let (f1, f2) = self.coeffs(C64::new(tau, 0.0));
        let n = self.dim;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = f1.re * self.h1[(i, j)] + f2.re * self.h2[(i, j)];
            }
        }
        out
    }

    /// Analytic τ-derivative ∂H/∂τ at complex τ.
    pub fn eval_deriv(&self, tau: C64) -> Result<DMatrix<C64>, ModelError> {
        let distance = self.pole_distance(tau);
        if distance < self.pole_guard {
            return Err(ModelError::NearSingularity {
                tau,
                distance,
                guard: self.pole_guard,
            });
        }
        let (d1, d2) = self.coeff_derivs(tau);
        let n = self.dim;
        let mut out = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = d1 * self.h1[(i, j)] + d2 * self.h2[(i, j)];
            }
        }
        Ok(out)
    }

    /// ∂H/∂τ at real τ (real symmetric).
    pub fn eval_deriv_real(&self, tau: f64) -> DMatrix<f64> {
        let (d1, d2) = self.coeff_derivs(C64::new(tau, 0.0));
        let n = self.dim;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = d1.re * self.h1[(i, j)] + d2.re * self.h2[(i, j)];
            }
        }
        out
    }

    /// The exact asymptotic Hamiltonian `H(±∞)` when the model has one
    /// (interp kinds: X(±∞) = ±α). `None` for the Landau-Zener kind, whose
    /// linear drive is unbounded.
    pub fn asymptotic(&self, positive: bool) -> Option<DMatrix<f64>> {
        match self.kind {
            ModelKind::LandauZener => None,
            ModelKind::GoeInterp | ModelKind::CustomPair => {
                let x = if positive { self.alpha } else { -self.alpha };
                Some(x.cos() * &self.h1 + x.sin() * &self.h2)
            }
        }
    }

    /// The time-reversed model, satisfying `H_rev(τ) = H(−τ)`.
    pub fn time_reversed(&self) -> Self {
        // X(−τ) = −X(τ) for all kinds: flip whatever multiplies the odd
        // coefficient. cos is even, sin is odd; the LZ drive Aτ is odd.
        let mut rev = self.clone();
        match self.kind {
            ModelKind::LandauZener => rev.slope = -self.slope,
            ModelKind::GoeInterp | ModelKind::CustomPair => rev.h2 = -self.h2.clone(),
        }
        rev
    }
}
