//! Complex symmetric eigendecomposition and level tracking by continuation.
//!
//! For real τ the Hamiltonian is real symmetric: eigenvalues are real,
//! non-degenerate (von Neumann–Wigner), and levels are labeled by ascending
//! energy. Off the real axis the matrix is complex symmetric; eigenvalues
//! move into the complex plane and can only be labeled consistently by
//! continuation from the real axis. The inner product used throughout is the
//! transpose product `uᵀv` *without* conjugation, which is the one that makes
//! eigenvectors of a complex symmetric matrix orthogonal.
//!
//! Eigenvalues come from a complex Schur decomposition; eigenvectors from
//! inverse iteration, then transpose-normalized (`φᵀφ = 1`). At a square-root
//! degeneracy the eigenvectors of the colliding pair become self-orthogonal
//! (`φᵀφ → 0`); such vectors are flagged rather than normalized, and callers
//! are expected to keep a guard distance from branch points.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{HamiltonianModel, ModelError};
use crate::C64;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("contract violation: input matrix not symmetric (max |m_ij - m_ji| = {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },
    #[error("complex Schur iteration failed to converge")]
    SchurFailed,
    #[error("eigenpair residual too large for level {level}: {residual:.3e} > {bound:.3e}")]
    ResidualTooLarge { level: usize, residual: f64, bound: f64 },
    #[error(
        "continuation step too large: energies moved {movement:.3e}, more than half the \
         minimum reference gap {min_gap:.3e}; take a smaller step"
    )]
    ContinuationStepTooLarge { movement: f64, min_gap: f64 },
    #[error("continuation step underflow near tau = {tau} (likely at a degeneracy)")]
    StepUnderflow { tau: C64 },
    #[error("cannot label a frame at complex tau = {tau} without a reference frame")]
    ComplexTauWithoutReference { tau: C64 },
    #[error("invalid level index {level} for dimension {dim}")]
    InvalidLevel { level: usize, dim: usize },
    #[error("gauge ambiguous: overlap of level {level} with reference is {overlap:.3e}")]
    GaugeAmbiguous { level: usize, overlap: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tunables for the eigensolver.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Two eigenvalues closer than this (relative to the matrix scale) raise
    /// a near-degenerate warning. This is a branch-point detection signal,
    /// not a failure.
    pub degeneracy_tol: f64,
    /// |φᵀφ| below this marks the vector self-orthogonal; it is left
    /// 2-norm-normalized instead of transpose-normalized.
    pub self_orth_tol: f64,
    /// Residual bound, relative to the max-abs entry of the matrix.
    pub residual_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            degeneracy_tol: 1e-6,
            self_orth_tol: 1e-8,
            residual_tol: 1e-10,
        }
    }
}

/// Diagnostics accompanying an eigensolution.
#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    /// Pairs of indices whose eigenvalues are closer than the degeneracy
    /// tolerance, with the gap.
    pub near_degenerate: Vec<(usize, usize, f64)>,
    /// Indices whose eigenvectors are self-orthogonal.
    pub self_orthogonal: Vec<usize>,
    /// Smallest pairwise eigenvalue distance, a conditioning report.
    pub min_pair_gap: f64,
}

impl SolveDiagnostics {
    pub fn is_near_degenerate(&self) -> bool {
        !self.near_degenerate.is_empty() || !self.self_orthogonal.is_empty()
    }
}

/// Raw eigensolution in solver order (no labels yet).
#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub energies: Vec<C64>,
    /// Column n is the eigenvector for `energies[n]`, transpose-normalized
    /// where possible.
    pub states: DMatrix<C64>,
    pub diagnostics: SolveDiagnostics,
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Deterministic unit start vector for inverse iteration.
fn start_vector(n: usize, which: usize) -> DVector<C64> {
    let mut state = 0x9e3779b97f4a7c15u64.wrapping_mul(which as u64 + 1);
    let mut v = DVector::from_element(n, C64::new(0.0, 0.0));
    for i in 0..n {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let a = ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let b = ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
        v[i] = C64::new(a, b);
    }
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

/// Eigendecomposition of an N×N complex symmetric matrix.
///
/// Eigenvalues via complex Schur; eigenvectors via inverse iteration with the
/// computed eigenvalues, transpose-normalized (`φᵀφ = 1`). Near-degenerate
/// pairs and self-orthogonal vectors are reported in the diagnostics.
pub fn eigensolve_complex_symmetric(
    m: &DMatrix<C64>,
    opts: &SolverOptions,
) -> Result<EigenSolution, SpectralError> {
    let n = m.nrows();
    assert!(m.is_square(), "eigensolve requires a square matrix");
    let scale = max_abs(m).max(f64::MIN_POSITIVE);

    let mut max_asym = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).norm());
        }
    }
    if max_asym > 1e-12 * scale.max(1.0) {
        return Err(SpectralError::NotSymmetric { max_asym });
    }

    // Real symmetric fast path: exact real eigenvectors, matches a standard
    // real symmetric solve.
    let max_im = m.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let (energies, mut states) = if max_im <= 1e-14 * scale {
        let re = m.map(|z| z.re);
        let eig = re.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies: Vec<C64> = order
            .iter()
            .map(|&k| C64::new(eig.eigenvalues[k], 0.0))
            .collect();
        let mut states = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for (col, &k) in order.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            // Deterministic sign: largest-magnitude component positive.
            let mut imax = 0;
            for i in 1..n {
                if v[i].abs() > v[imax].abs() {
                    imax = i;
                }
            }
            let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..n {
                states[(i, col)] = C64::new(sign * v[i], 0.0);
            }
        }
        (energies, states)
    } else {
        let schur = m
            .clone()
            .try_schur(f64::EPSILON, 10_000)
            .ok_or(SpectralError::SchurFailed)?;
        let energies: Vec<C64> = schur
            .eigenvalues()
            .ok_or(SpectralError::SchurFailed)?
            .iter()
            .copied()
            .collect();
        let mut states = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for (k, &lambda) in energies.iter().enumerate() {
            let v = inverse_iteration(m, lambda, scale, k)?;
            states.set_column(k, &v);
        }
        (energies, states)
    };

    // Transpose normalization and diagnostics.
    let mut diagnostics = SolveDiagnostics {
        min_pair_gap: f64::INFINITY,
        ..Default::default()
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (energies[i] - energies[j]).norm();
            diagnostics.min_pair_gap = diagnostics.min_pair_gap.min(gap);
            if gap < opts.degeneracy_tol * scale {
                diagnostics.near_degenerate.push((i, j, gap));
            }
        }
    }
    for k in 0..n {
        let col = states.column(k).clone_owned();
        let q: C64 = col.iter().map(|z| z * z).sum();
        if q.norm() < opts.self_orth_tol {
            diagnostics.self_orthogonal.push(k);
        } else {
            let scaled = col / q.sqrt();
            states.set_column(k, &scaled);
        }
    }

    // Residual verification.
    let bound = opts.residual_tol * scale;
    for k in 0..n {
        let col = states.column(k).clone_owned();
        let r = m * &col - &col * energies[k];
        let vmax = col
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let residual = r.iter().map(|z| z.norm()).fold(0.0, f64::max) / vmax;
        if residual > bound {
            return Err(SpectralError::ResidualTooLarge {
                level: k,
                residual,
                bound,
            });
        }
    }

    Ok(EigenSolution {
        energies,
        states,
        diagnostics,
    })
}

fn inverse_iteration(
    m: &DMatrix<C64>,
    lambda: C64,
    scale: f64,
    which: usize,
) -> Result<DVector<C64>, SpectralError> {
    let n = m.nrows();
    let eye = DMatrix::<C64>::identity(n, n);
    let mut jitter = 1e-13 * scale;
    for attempt in 0..4 {
        let shifted = m - &eye * (lambda + C64::new(jitter, jitter));
        let lu = shifted.full_piv_lu();
        let mut v = start_vector(n, which + attempt * 97);
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&v) {
                Some(w) => {
                    let norm = w.norm();
                    if !norm.is_finite() || norm == 0.0 {
                        ok = false;
                        break;
                    }
                    v = w / C64::new(norm, 0.0);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(v);
        }
        jitter *= 100.0;
    }
    Err(SpectralError::SchurFailed)
}

/// Only the eigenvalues, for scans and cursors that never need vectors.
pub fn eigenvalues_complex_symmetric(m: &DMatrix<C64>) -> Result<Vec<C64>, SpectralError> {
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let max_im = m.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if max_im <= 1e-14 * scale {
        let re = m.map(|z| z.re);
        let mut ev: Vec<f64> = re.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        return Ok(ev.into_iter().map(|e| C64::new(e, 0.0)).collect());
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or(SpectralError::SchurFailed)?;
    Ok(schur
        .eigenvalues()
        .ok_or(SpectralError::SchurFailed)?
        .iter()
        .copied()
        .collect())
}

/// Labeled eigendata at one complex τ.
///
/// Energies and eigenvector columns are stored in *label* order: on the real
/// axis label = ascending-energy rank; off the axis labels are inherited from
/// the continuation reference, so `energies[n]` is the analytic continuation
/// of real-axis level n along the path the frame was carried over.
#[derive(Debug, Clone)]
pub struct SpectralFrame {
    pub tau: C64,
    pub energies: Vec<C64>,
    /// Column n is φ_n, transpose-normalized where possible.
    pub states: DMatrix<C64>,
    pub diagnostics: SolveDiagnostics,
}

impl SpectralFrame {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Complex energy difference `E_j − E_i`.
    pub fn gap(&self, i: usize, j: usize) -> Result<C64, SpectralError> {
        let dim = self.dim();
        if i >= dim {
            return Err(SpectralError::InvalidLevel { level: i, dim });
        }
        if j >= dim {
            return Err(SpectralError::InvalidLevel { level: j, dim });
        }
        Ok(self.energies[j] - self.energies[i])
    }

    pub fn state(&self, n: usize) -> DVector<C64> {
        self.states.column(n).clone_owned()
    }
}

/// Greedy nearest-distance assignment between two equal-length eigenvalue
/// sets. Returns `perm` with `perm[ref_index] = new_index`, plus the largest
/// single-energy movement.
fn match_energies(reference: &[C64], new: &[C64]) -> (Vec<usize>, f64) {
    let n = reference.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, er) in reference.iter().enumerate() {
        for (j, en) in new.iter().enumerate() {
            pairs.push(((er - en).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let mut assigned = 0;
    let mut movement = 0.0_f64;
    for (d, i, j) in pairs {
        if perm[i] == usize::MAX && !used[j] {
            perm[i] = j;
            used[j] = true;
            movement = movement.max(d);
            assigned += 1;
            if assigned == n {
                break;
            }
        }
    }
    (perm, movement)
}

fn min_pair_gap(energies: &[C64]) -> f64 {
    let n = energies.len();
    let mut g = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            g = g.min((energies[i] - energies[j]).norm());
        }
    }
    g
}

/// A labeled frame at τ.
///
/// Without a reference the frame must sit on the real axis, where labels are
/// the ascending-energy order. With a reference, labels are carried over by
/// nearest-eigenvalue matching, and eigenvector signs are chosen to maximize
/// the real part of the transpose overlap with the reference (continuing the
/// real-axis gauge).
pub fn frame_at(
    model: &HamiltonianModel,
    tau: C64,
    reference: Option<&SpectralFrame>,
    opts: &SolverOptions,
) -> Result<SpectralFrame, SpectralError> {
    let m = model.eval(tau)?;
    let sol = eigensolve_complex_symmetric(&m, opts)?;
    label_solution(tau, sol, reference)
}

/// Label a raw solution, either by real-axis ordering or by continuation
/// from a reference frame.
pub fn label_solution(
    tau: C64,
    sol: EigenSolution,
    reference: Option<&SpectralFrame>,
) -> Result<SpectralFrame, SpectralError> {
    let n = sol.energies.len();
    match reference {
        None => {
            if tau.im != 0.0 {
                return Err(SpectralError::ComplexTauWithoutReference { tau });
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| sol.energies[a].re.total_cmp(&sol.energies[b].re));
            let energies: Vec<C64> = order.iter().map(|&k| sol.energies[k]).collect();
            let mut states = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
            for (col, &k) in order.iter().enumerate() {
                states.set_column(col, &sol.states.column(k).clone_owned());
            }
            let diagnostics = remap_diagnostics(&sol.diagnostics, &order);
            Ok(SpectralFrame {
                tau,
                energies,
                states,
                diagnostics,
            })
        }
        Some(reference) => {
            let (perm, movement) = match_energies(&reference.energies, &sol.energies);
            let min_gap = min_pair_gap(&reference.energies);
            if !(movement < 0.5 * min_gap) {
                return Err(SpectralError::ContinuationStepTooLarge { movement, min_gap });
            }
            let energies: Vec<C64> = perm.iter().map(|&k| sol.energies[k]).collect();
            let mut states = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
            for (label, &k) in perm.iter().enumerate() {
                let col = sol.states.column(k).clone_owned();
                let overlap: C64 = reference
                    .states
                    .column(label)
                    .iter()
                    .zip(col.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let signed = if overlap.re < 0.0 { -col } else { col };
                states.set_column(label, &signed);
            }
            let diagnostics = remap_diagnostics(&sol.diagnostics, &perm);
            Ok(SpectralFrame {
                tau,
                energies,
                states,
                diagnostics,
            })
        }
    }
}

fn remap_diagnostics(d: &SolveDiagnostics, order: &[usize]) -> SolveDiagnostics {
    // order[label] = solver index; invert to solver index -> label.
    let mut inv = vec![0usize; order.len()];
    for (label, &k) in order.iter().enumerate() {
        inv[k] = label;
    }
    SolveDiagnostics {
        near_degenerate: d
            .near_degenerate
            .iter()
            .map(|&(i, j, g)| {
                let (a, b) = (inv[i], inv[j]);
                (a.min(b), a.max(b), g)
            })
            .collect(),
        self_orthogonal: d.self_orthogonal.iter().map(|&i| inv[i]).collect(),
        min_pair_gap: d.min_pair_gap,
    }
}

/// Convenience: labeled frame on the real axis.
pub fn frame_on_axis(
    model: &HamiltonianModel,
    re_tau: f64,
    opts: &SolverOptions,
) -> Result<SpectralFrame, SpectralError> {
    frame_at(model, C64::new(re_tau, 0.0), None, opts)
}

/// Step-size policy for continuation walks.
#[derive(Debug, Clone)]
pub struct ContinuationControl {
    pub initial_step: f64,
    pub max_step: f64,
    pub min_step: f64,
    /// Double the step after this many consecutive clean steps.
    pub grow_after: usize,
}

impl Default for ContinuationControl {
    fn default() -> Self {
        Self {
            initial_step: 0.02,
            max_step: 0.05,
            min_step: 1e-9,
            grow_after: 5,
        }
    }
}

/// Walk a frame along the straight segment to `target`, keeping labels by
/// continuation. Steps halve on ambiguous matches and grow again after a run
/// of clean steps.
pub fn continue_to(
    model: &HamiltonianModel,
    from: &SpectralFrame,
    target: C64,
    ctrl: &ContinuationControl,
    opts: &SolverOptions,
) -> Result<SpectralFrame, SpectralError> {
    let mut cur = from.clone();
    let mut step = ctrl.initial_step;
    let mut clean = 0usize;
    while cur.tau != target {
        let remaining = target - cur.tau;
        let dist = remaining.norm();
        let next_tau = if step >= dist {
            target
        } else {
            cur.tau + remaining / dist * step
        };
        match frame_at(model, next_tau, Some(&cur), opts) {
            Ok(f) => {
                cur = f;
                clean += 1;
                if clean >= ctrl.grow_after {
                    step = (2.0 * step).min(ctrl.max_step);
                    clean = 0;
                }
            }
            Err(SpectralError::ContinuationStepTooLarge { .. }) => {
                step *= 0.5;
                clean = 0;
                if step < ctrl.min_step {
                    return Err(SpectralError::StepUnderflow { tau: cur.tau });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(cur)
}

/// Walk a frame through a sequence of waypoints.
pub fn continue_along(
    model: &HamiltonianModel,
    from: &SpectralFrame,
    waypoints: &[C64],
    ctrl: &ContinuationControl,
    opts: &SolverOptions,
) -> Result<SpectralFrame, SpectralError> {
    let mut cur = from.clone();
    for &w in waypoints {
        cur = continue_to(model, &cur, w, ctrl, opts)?;
    }
    Ok(cur)
}

/// Labeled eigenvalue set carried along a path without eigenvectors.
/// Much cheaper than full frames; used by scans, tracers, and quadrature.
#[derive(Debug, Clone)]
pub struct EnergyTracker {
    pub tau: C64,
    pub energies: Vec<C64>,
}

impl EnergyTracker {
    /// Start on the real axis with ascending-energy labels.
    pub fn on_axis(model: &HamiltonianModel, re_tau: f64) -> Result<Self, SpectralError> {
        let m = model.eval(C64::new(re_tau, 0.0))?;
        let mut e = eigenvalues_complex_symmetric(&m)?;
        e.sort_by(|a, b| a.re.total_cmp(&b.re));
        Ok(Self {
            tau: C64::new(re_tau, 0.0),
            energies: e,
        })
    }

    pub fn from_frame(frame: &SpectralFrame) -> Self {
        Self {
            tau: frame.tau,
            energies: frame.energies.clone(),
        }
    }

    /// One matching step to `tau`. Errors if the match is ambiguous.
    pub fn step_to(&mut self, model: &HamiltonianModel, tau: C64) -> Result<(), SpectralError> {
        let m = model.eval(tau)?;
        let new = eigenvalues_complex_symmetric(&m)?;
        let (perm, movement) = match_energies(&self.energies, &new);
        let min_gap = min_pair_gap(&self.energies);
        if !(movement < 0.5 * min_gap) {
            return Err(SpectralError::ContinuationStepTooLarge { movement, min_gap });
        }
        self.energies = perm.iter().map(|&k| new[k]).collect();
        self.tau = tau;
        Ok(())
    }

    /// Advance to `tau` along the straight segment, bisecting recursively on
    /// ambiguous matches. `min_step` bounds the recursion; running into it
    /// means the segment passes essentially through a degeneracy.
    pub fn advance(
        &mut self,
        model: &HamiltonianModel,
        tau: C64,
        min_step: f64,
    ) -> Result<(), SpectralError> {
        if (tau - self.tau).norm() == 0.0 {
            return Ok(());
        }
        let saved = self.clone();
        match self.step_to(model, tau) {
            Ok(()) => Ok(()),
            Err(SpectralError::ContinuationStepTooLarge { .. }) => {
                *self = saved;
                let mid = 0.5 * (self.tau + tau);
                if (mid - self.tau).norm() < min_step {
                    return Err(SpectralError::StepUnderflow { tau: self.tau });
                }
                self.advance(model, mid, min_step)?;
                self.advance(model, tau, min_step)
            }
            Err(e) => {
                *self = saved;
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HamiltonianModel;
    use approx::assert_abs_diff_eq;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    /// Independent characteristic-polynomial oracle: Faddeev–LeVerrier
    /// coefficients plus Durand–Kerner root finding. No Schur anywhere.
    fn char_poly_roots(m: &DMatrix<C64>) -> Vec<C64> {
        let n = m.nrows();
        // p(λ) = λ^n + a[n-1] λ^{n-1} + ... + a[0]
        let mut coeffs = vec![C64::new(0.0, 0.0); n + 1];
        coeffs[n] = C64::new(1.0, 0.0);
        let mut mk = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for k in 1..=n {
            let mut next = m * &mk;
            let a_prev = coeffs[n - k + 1];
            for i in 0..n {
                next[(i, i)] += a_prev;
            }
            let am = m * &next;
            let tr: C64 = (0..n).map(|i| am[(i, i)]).sum();
            coeffs[n - k] = -tr / C64::new(k as f64, 0.0);
            mk = next;
        }
        let eval = |z: C64| -> C64 {
            let mut p = C64::new(0.0, 0.0);
            for k in (0..=n).rev() {
                p = p * z + coeffs[k];
            }
            p
        };
        let radius = 1.0 + coeffs[..n].iter().map(|c| c.norm()).fold(0.0, f64::max);
        let seed = C64::new(0.4, 0.9);
        let mut roots: Vec<C64> = (0..n)
            .map(|k| seed.powu(k as u32 + 1) / seed.norm().powi(k as i32 + 1) * radius)
            .collect();
        for _ in 0..500 {
            let mut delta = 0.0_f64;
            for i in 0..n {
                let mut denom = C64::new(1.0, 0.0);
                for j in 0..n {
                    if j != i {
                        denom *= roots[i] - roots[j];
                    }
                }
                let step = eval(roots[i]) / denom;
                roots[i] -= step;
                delta = delta.max(step.norm());
            }
            if delta < 1e-14 * radius {
                break;
            }
        }
        roots
    }

    fn random_complex_symmetric(n: usize, seed: u64) -> DMatrix<C64> {
        let mut s = seed as f64 / 1e4 + 0.2345;
        let mut m = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
        for i in 0..n {
            for j in i..n {
                s = (s * 997.0 + 0.1357).fract();
                let re = 2.0 * s - 1.0;
                s = (s * 997.0 + 0.1357).fract();
                let im = 2.0 * s - 1.0;
                m[(i, j)] = C64::new(re, im);
                m[(j, i)] = m[(i, j)];
            }
        }
        m
    }

    #[test]
    fn eigensolve_matches_char_poly_oracle() {
        for seed in 0..5u64 {
            let m = random_complex_symmetric(6, seed);
            let sol = eigensolve_complex_symmetric(&m, &opts()).unwrap();
            let mut got = sol.energies.clone();
            let mut expect = char_poly_roots(&m);
            let key = |z: &C64| (z.re, z.im);
            got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
            expect.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
            for (g, e) in got.iter().zip(expect.iter()) {
                assert!(
                    (g - e).norm() <= 1e-8,
                    "eigenvalue {g} vs char-poly root {e} (seed {seed})"
                );
            }
        }
    }

    #[test]
    fn eigensolve_residual_and_transpose_orthonormality() {
        let m = random_complex_symmetric(6, 11);
        let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let sol = eigensolve_complex_symmetric(&m, &opts()).unwrap();
        for i in 0..6 {
            let v = sol.states.column(i).clone_owned();
            let r = &m * &v - &v * sol.energies[i];
            let res = r.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(res <= 1e-10 * scale, "residual {res:.3e}");
            for j in 0..6 {
                let w = sol.states.column(j);
                let q: C64 = v.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (q.norm() - expect).abs() <= 1e-9,
                    "transpose orthonormality failed at ({i},{j}): {q}"
                );
            }
        }
    }

    #[test]
    fn exact_degeneracy_is_flagged() {
        // LZ at the branch point τ* = i: ½[[i, 1], [1, -i]] has a double
        // eigenvalue 0 and self-orthogonal eigenvectors.
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(0.0, 0.5),
                C64::new(0.5, 0.0),
                C64::new(0.5, 0.0),
                C64::new(0.0, -0.5),
            ],
        );
        let sol = eigensolve_complex_symmetric(&m, &opts()).unwrap();
        for e in &sol.energies {
            assert!(e.norm() < 1e-7, "double eigenvalue should be 0, got {e}");
        }
        assert!(sol.diagnostics.is_near_degenerate());
    }

    #[test]
    fn real_input_gives_real_sorted_output() {
        let model = HamiltonianModel::goe_interp(6, 2.0, 2).unwrap();
        let m = model.eval(C64::new(0.3, 0.0)).unwrap();
        let sol = eigensolve_complex_symmetric(&m, &opts()).unwrap();
        let reference = model.eval_real(0.3).symmetric_eigenvalues();
        let mut expect: Vec<f64> = reference.iter().copied().collect();
        expect.sort_by(f64::total_cmp);
        for (k, e) in sol.energies.iter().enumerate() {
            assert_eq!(e.im, 0.0);
            assert_abs_diff_eq!(e.re, expect[k], epsilon = 1e-12);
        }
        for z in sol.states.iter() {
            assert_eq!(z.im, 0.0, "eigenvectors must be real for real input");
        }
    }

    #[test]
    fn non_symmetric_input_rejected() {
        let mut m = DMatrix::from_element(2, 2, C64::new(0.0, 0.0));
        m[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(
            eigensolve_complex_symmetric(&m, &opts()),
            Err(SpectralError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn frame_labels_ascending_on_axis() {
        let model = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
        let f = frame_on_axis(&model, 0.0, &opts()).unwrap();
        assert_abs_diff_eq!(f.energies[0].re, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f.energies[1].re, 0.5, epsilon = 1e-12);
        // gap(0,1) = E_1 − E_0 = Δ = 1 at closest approach.
        assert_abs_diff_eq!(f.gap(0, 1).unwrap().re, 1.0, epsilon = 1e-12);
        // Antisymmetry.
        let g01 = f.gap(0, 1).unwrap();
        let g10 = f.gap(1, 0).unwrap();
        assert_eq!(g01, -g10);
    }

    #[test]
    fn gap_closed_form_off_axis() {
        // LZ at τ = 0.5i: |gap| = √(1 − 0.25) = √0.75.
        let model = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
        let f0 = frame_on_axis(&model, 0.0, &opts()).unwrap();
        let f = continue_to(
            &model,
            &f0,
            C64::new(0.0, 0.5),
            &ContinuationControl::default(),
            &opts(),
        )
        .unwrap();
        let g = f.gap(0, 1).unwrap();
        assert_abs_diff_eq!(g.norm(), 0.75f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn invalid_level_rejected() {
        let model = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
        let f = frame_on_axis(&model, 0.0, &opts()).unwrap();
        assert!(matches!(
            f.gap(0, 2),
            Err(SpectralError::InvalidLevel { level: 2, dim: 2 })
        ));
    }

    fn circle_waypoints(
        center: C64,
        radius: f64,
        turns: f64,
        n: usize,
        start_angle: f64,
    ) -> Vec<C64> {
        (1..=n)
            .map(|k| {
                let th =
                    start_angle + turns * 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                center + C64::new(radius * th.cos(), radius * th.sin())
            })
            .collect()
    }

    #[test]
    fn monodromy_single_circuit_exchanges_levels() {
        let model = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
        let bp = C64::new(0.0, 1.0);
        let start = bp + C64::new(0.2, 0.0);
        let ctrl = ContinuationControl::default();
        let f_axis = frame_on_axis(&model, 0.5, &opts()).unwrap();
        let f_start = continue_to(&model, &f_axis, start, &ctrl, &opts()).unwrap();
        let path = circle_waypoints(bp, 0.2, 1.0, 48, 0.0);
        let f_end = continue_along(&model, &f_start, &path, &ctrl, &opts()).unwrap();
        assert!((f_end.tau - start).norm() < 1e-14);
        // One circuit around a square-root branch point swaps the two levels.
        assert!((f_end.energies[0] - f_start.energies[1]).norm() < 1e-6);
        assert!((f_end.energies[1] - f_start.energies[0]).norm() < 1e-6);
    }

    #[test]
    fn monodromy_double_circuit_restores_energies_and_flips_sign() {
        let model = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
        let bp = C64::new(0.0, 1.0);
        let start = bp + C64::new(0.2, 0.0);
        let ctrl = ContinuationControl::default();
        let f_axis = frame_on_axis(&model, 0.5, &opts()).unwrap();
        let f_start = continue_to(&model, &f_axis, start, &ctrl, &opts()).unwrap();
        let path = circle_waypoints(bp, 0.2, 2.0, 96, 0.0);
        let f_end = continue_along(&model, &f_start, &path, &ctrl, &opts()).unwrap();
        for n in 0..2 {
            assert!((f_end.energies[n] - f_start.energies[n]).norm() < 1e-6);
            let diff = (f_end.state(n) + f_start.state(n)).norm();
            assert!(
                diff < 1e-8,
                "eigenvector must recur with its sign changed after two circuits (level {n}, diff {diff:.3e})"
            );
        }
    }

    #[test]
    fn continuation_is_path_independent_away_from_branch_points() {
        // LZ has its only branch points at ±i; the rectangle
        // [-2, 1.5] × [0, 0.4] is simply connected and avoids them.
        let model = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
        let ctrl = ContinuationControl::default();
        let start = frame_on_axis(&model, -2.0, &opts()).unwrap();
        let target = C64::new(1.5, 0.4);
        let a = continue_along(
            &model,
            &start,
            &[C64::new(1.5, 0.0), target],
            &ctrl,
            &opts(),
        )
        .unwrap();
        let b = continue_along(
            &model,
            &start,
            &[C64::new(-2.0, 0.4), target],
            &ctrl,
            &opts(),
        )
        .unwrap();
        for n in 0..2 {
            assert!(
                (a.energies[n] - b.energies[n]).norm() < 1e-8,
                "level {n} differs between routes"
            );
            let dv = (a.state(n) - b.state(n)).norm();
            assert!(dv < 1e-7, "level {n} eigenvector differs between routes: {dv:.3e}");
        }
    }

    #[test]
    fn energy_tracker_matches_frames() {
        let model = HamiltonianModel::goe_interp(4, 2.0, 8).unwrap();
        let ctrl = ContinuationControl::default();
        let f0 = frame_on_axis(&model, 0.0, &opts()).unwrap();
        let target = C64::new(0.8, 0.5);
        let f1 = continue_to(&model, &f0, target, &ctrl, &opts()).unwrap();
        let mut tr = EnergyTracker::on_axis(&model, 0.0).unwrap();
        tr.advance(&model, target, 1e-9).unwrap();
        for n in 0..4 {
            assert!((tr.energies[n] - f1.energies[n]).norm() < 1e-9);
        }
    }
}
