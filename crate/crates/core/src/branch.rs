//! Locating complex-τ degeneracies (square-root branch points).
//!
//! Pairs of analytically continued eigenvalues degenerate at isolated points
//! off the real axis, in complex conjugate pairs. The search runs in three
//! stages, matching the structure of the production pipeline:
//!
//! 1. [`scan_grid`]: evaluate the minimum pairwise eigenvalue distance on a
//!    rectangular grid and keep local minima. Each surviving minimum is
//!    descended with Newton iteration on `g(τ) = ΔE(τ)²` (analytic, with a
//!    simple zero at the branch point, unlike ΔE itself) and the level pair
//!    is identified by walking labels up from the real axis.
//! 2. [`refine`]: the same Newton iteration to full tolerance, plus a probe
//!    circle fit of the local coefficient α in `ΔE ≈ α·(τ − τ*)^{1/2}`.
//! 3. [`pair_and_dedupe`]: merge duplicates, verify the complex conjugate
//!    partner by refining from `conj(τ*)`, and sort by Re τ*.

use thiserror::Error;

use crate::model::{HamiltonianModel, ModelError};
use crate::spectral::{eigenvalues_complex_symmetric, EnergyTracker, SpectralError};
use crate::C64;

#[derive(Debug, Error)]
pub enum BranchError {
    #[error("scan grid too coarse: nx = {nx}, ny = {ny} (need at least 8×8)")]
    GridTooCoarse { nx: usize, ny: usize },
    #[error("scan region is empty or inverted")]
    EmptyRegion,
    #[error("refinement failed to converge from {start} after {iterations} iterations")]
    RefinementFailed { start: C64, iterations: usize },
    #[error(
        "conjugate consistency failure: refining from conj(τ*) of {tau} landed at {refined}"
    )]
    ConjugateConsistency { tau: C64, refined: C64 },
    #[error("could not identify the degenerate level pair near {tau}")]
    PairIdentification { tau: C64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Rectangle in the complex τ plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRegion {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl ScanRegion {
    /// The default search window: −6 ≤ Re τ ≤ 6, 0 ≤ Im τ ≤ 2.
    pub fn standard() -> Self {
        Self {
            re_min: -6.0,
            re_max: 6.0,
            im_min: 0.0,
            im_max: 2.0,
        }
    }

    pub fn contains(&self, tau: C64, margin: f64) -> bool {
        tau.re >= self.re_min - margin
            && tau.re <= self.re_max + margin
            && tau.im >= self.im_min - margin
            && tau.im <= self.im_max + margin
    }
}

#[derive(Debug, Clone)]
pub struct RefineOptions {
    /// Converged when |ΔE| ≤ gap_tol_rel · (local energy scale).
    pub gap_tol_rel: f64,
    pub max_iter: usize,
    /// Radius factor of the probe circle used to fit the local coefficient.
    pub probe_radius: f64,
    /// Points with Im τ* below this are flagged suspicious (possible
    /// real-axis degeneracy, which breaks the genericity assumptions).
    pub min_height: f64,
    /// Central-difference step for the Newton derivative.
    pub fd_step: f64,
    /// Cap on a single Newton move.
    pub max_move: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            gap_tol_rel: 1e-9,
            max_iter: 50,
            probe_radius: 1e-3,
            min_height: 1e-4,
            fd_step: 1e-6,
            max_move: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub nx: usize,
    pub ny: usize,
    /// Candidates must descend below this fraction of the pair's minimum
    /// real-axis gap.
    pub candidate_rel_threshold: f64,
    pub refine: RefineOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            nx: 120,
            ny: 40,
            candidate_rel_threshold: 0.2,
            refine: RefineOptions::default(),
        }
    }
}

/// A near-degeneracy candidate emitted by the grid scan.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Level pair (i < j) in real-axis labels.
    pub levels: (usize, usize),
    /// The grid vertex where the local minimum was detected.
    pub tau_cell: C64,
    /// Where the in-scan Newton descent landed.
    pub tau_descended: C64,
    /// |ΔE| at the descended point.
    pub gap: f64,
    /// The tracked pair's eigenvalues at the descended point, seeding
    /// further refinement.
    pub pair_values: (C64, C64),
}

/// Scan outcome: candidates plus warnings.
#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub candidates: Vec<Candidate>,
    /// Set when the region had to be clipped away from a matrix-element
    /// singularity; carries the clipped Im-max.
    pub region_clipped: Option<f64>,
    /// Descended degeneracies whose level pair could not be identified
    /// (no clear walk lane); logged for diagnosis.
    pub unidentified: Vec<C64>,
}

/// A refined square-root branch point between two named levels, canonically
/// represented by its upper-half-plane member. The lower partner sits at
/// `conj_tau_star` (verified by refinement, not assumed).
#[derive(Debug, Clone)]
pub struct BranchPoint {
    /// (i, j) with i < j, labels by real-axis energy ordering.
    pub levels: (usize, usize),
    /// Upper-half-plane position.
    pub tau_star: C64,
    /// α in ΔE ≈ α·(τ − τ*)^{1/2} near the point (defined up to sign).
    pub local_coeff: C64,
    /// |ΔE(τ*)| after refinement.
    pub residual_gap: f64,
    /// Relative spread of the probe-circle coefficient estimates.
    pub coeff_fit_spread: f64,
    /// Refined position of the conjugate partner.
    pub conj_tau_star: C64,
    pub conj_residual_gap: f64,
    /// Im τ* below the genericity threshold.
    pub suspicious_low: bool,
}

impl BranchPoint {
    /// Coefficient K in Δθ ≈ K·(τ − τ*)^{3/2} for the phase-integral
    /// difference (K = 2α/3, up to the same sign ambiguity as α).
    pub fn k_coeff(&self) -> C64 {
        self.local_coeff * (2.0 / 3.0)
    }

    /// The mirrored (lower-half-plane) representative.
    pub fn conjugate_view(&self) -> BranchPoint {
        BranchPoint {
            levels: self.levels,
            tau_star: self.conj_tau_star,
            local_coeff: self.local_coeff.conj(),
            residual_gap: self.conj_residual_gap,
            coeff_fit_spread: self.coeff_fit_spread,
            conj_tau_star: self.tau_star,
            conj_residual_gap: self.residual_gap,
            suspicious_low: self.suspicious_low,
        }
    }
}

/// The refined branch points of one model, sorted by Re τ*.
#[derive(Debug, Clone, Default)]
pub struct BranchPointSet {
    pub points: Vec<BranchPoint>,
}

impl BranchPointSet {
    /// Indices of points connecting the given (unordered) level pair.
    pub fn for_pair(&self, i: usize, j: usize) -> Vec<usize> {
        let key = (i.min(j), i.max(j));
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.levels == key)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Minimum pairwise |E_a − E_b| of an unlabeled eigenvalue set.
#[cfg_attr(not(test), allow(dead_code))]
fn min_pair_distance(energies: &[C64]) -> f64 {
    let n = energies.len();
    let mut d = f64::INFINITY;
    for a in 0..n {
        for b in (a + 1)..n {
            d = d.min((energies[a] - energies[b]).norm());
        }
    }
    d
}

/// Pick the two closest members of an eigenvalue set.
fn closest_pair(energies: &[C64]) -> (usize, usize) {
    let n = energies.len();
    let (mut bi, mut bj, mut best) = (0, 1, f64::INFINITY);
    for a in 0..n {
        for b in (a + 1)..n {
            let d = (energies[a] - energies[b]).norm();
            if d < best {
                best = d;
                bi = a;
                bj = b;
            }
        }
    }
    (bi, bj)
}

/// Track the two eigenvalues nearest to `pair` in a fresh eigenvalue set.
fn track_pair(energies: &[C64], pair: (C64, C64)) -> (C64, C64) {
    let mut ia = 0;
    let mut da = f64::INFINITY;
    for (k, e) in energies.iter().enumerate() {
        let d = (e - pair.0).norm();
        if d < da {
            da = d;
            ia = k;
        }
    }
    let mut ib = usize::MAX;
    let mut db = f64::INFINITY;
    for (k, e) in energies.iter().enumerate() {
        if k == ia {
            continue;
        }
        let d = (e - pair.1).norm();
        if d < db {
            db = d;
            ib = k;
        }
    }
    (energies[ia], energies[ib])
}

struct NewtonResult {
    tau: C64,
    gap: f64,
    pair: (C64, C64),
}

/// Newton iteration on g(τ) = ΔE(τ)², where ΔE is the difference of the two
/// locally tracked eigenvalues. g is analytic with a simple zero at the
/// branch point; the derivative comes from central differences along two
/// orthogonal complex directions, averaged.
fn newton_descend(
    model: &HamiltonianModel,
    start: C64,
    seed_pair: Option<(C64, C64)>,
    opts: &RefineOptions,
) -> Result<NewtonResult, BranchError> {
    // An iterate wandering into the guard zone of a matrix-element pole is a
    // failed refinement, not a fatal error.
    let wandered = |start: C64| BranchError::RefinementFailed {
        start,
        iterations: 0,
    };
    let eigen_at = |tau: C64| -> Result<Vec<C64>, BranchError> {
        let m = model
            .eval(tau)
            .map_err(|_| wandered(start))?;
        Ok(eigenvalues_complex_symmetric(&m)?)
    };
    let scale_at = |tau: C64| -> Result<f64, BranchError> {
        let m = model
            .eval(tau)
            .map_err(|_| wandered(start))?;
        Ok(m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300))
    };

    let mut tau = start;
    // A real-axis start never leaves the axis under Newton (g and g' are
    // real there); nudge it into the upper half plane.
    if tau.im.abs() < 1e-9 {
        tau += C64::new(0.0, 1e-3);
    }

    let e0 = eigen_at(tau)?;
    let mut pair = match seed_pair {
        // Follow the seeded pair (a masked pit is not the closest pair).
        Some(p) => track_pair(&e0, p),
        None => {
            let (ia, ib) = closest_pair(&e0);
            (e0[ia], e0[ib])
        }
    };

    // The computed gap of a colliding eigenvalue pair bottoms out near
    // √ε·‖H‖ in double precision (a position error of one ulp already gives
    // |ΔE| ≈ |α|·√ulp), so besides the nominal |g| ≤ (tol·scale)² target we
    // accept position convergence: a Newton step at machine precision with
    // the measured gap at its rounding floor.
    let gap_floor_rel = 1e-7;
    for _iter in 0..opts.max_iter {
        let scale = scale_at(tau)?;
        let gap = (pair.0 - pair.1).norm();
        if gap <= opts.gap_tol_rel * scale {
            return Ok(NewtonResult { tau, gap, pair });
        }

        let h = opts.fd_step * (1.0 + tau.norm());
        let g_at = |t: C64, prev: (C64, C64)| -> Result<C64, BranchError> {
            let e = eigen_at(t)?;
            let p = track_pair(&e, prev);
            let de = p.0 - p.1;
            Ok(de * de)
        };
        let g0 = (pair.0 - pair.1) * (pair.0 - pair.1);
        let gp = g_at(tau + C64::new(h, 0.0), pair)?;
        let gm = g_at(tau - C64::new(h, 0.0), pair)?;
        let gip = g_at(tau + C64::new(0.0, h), pair)?;
        let gim = g_at(tau - C64::new(0.0, h), pair)?;
        let d1 = (gp - gm) / C64::new(2.0 * h, 0.0);
        let d2 = (gip - gim) / C64::new(0.0, 2.0 * h);
        let deriv = 0.5 * (d1 + d2);
        if deriv.norm() == 0.0 {
            return Err(BranchError::RefinementFailed {
                start,
                iterations: opts.max_iter,
            });
        }
        let mut step = -g0 / deriv;
        if step.norm() > opts.max_move {
            step *= opts.max_move / step.norm();
        }
        if step.norm() <= 4.0 * f64::EPSILON * (1.0 + tau.norm()) {
            if gap <= gap_floor_rel * scale {
                return Ok(NewtonResult { tau, gap, pair });
            }
            return Err(BranchError::RefinementFailed {
                start,
                iterations: opts.max_iter,
            });
        }
        tau += step;
        let e = eigen_at(tau)?;
        pair = track_pair(&e, pair);
    }
    let scale = scale_at(tau)?;
    let gap = (pair.0 - pair.1).norm();
    if gap <= gap_floor_rel * scale {
        return Ok(NewtonResult { tau, gap, pair });
    }
    Err(BranchError::RefinementFailed {
        start,
        iterations: opts.max_iter,
    })
}

/// Identify which (real-axis-labeled) level pair degenerates at `tau_star`
/// by walking the labels up from the real axis.
///
/// The walk runs up a vertical lane laterally offset from the point, kept
/// clear of the other known degeneracies, and the point's local pair values
/// are carried over to the lane with a short horizontal hop. A direct walk
/// under the point would mis-identify whenever a closer-to-axis degeneracy
/// of a different pair sits on the way.
pub fn identify_pair(
    model: &HamiltonianModel,
    tau_star: C64,
    pair_at_star: (C64, C64),
    others: &[C64],
) -> Result<(usize, usize), BranchError> {
    let side = tau_star.im.signum();
    let clearance = 0.035;
    let offsets = [
        0.1, -0.1, 0.2, -0.2, 0.3, -0.3, 0.45, -0.45, 0.65, -0.65, 0.9, -0.9,
    ];
    'offsets: for &delta in &offsets {
        let probe = tau_star + C64::new(delta, 0.0);
        // Lane clearance: the vertical segment from the axis to the probe
        // and the horizontal hop from the point to the probe. Immediate
        // siblings (degeneracy clusters within a couple of clearances of
        // the point itself) cannot block the hop — it necessarily starts
        // next to them; the fine sub-steps and the final match-tightness
        // test guard against pair slips there.
        for &q in others {
            let d_self = (q - tau_star).norm();
            if d_self < 1e-9 {
                continue;
            }
            let (d_v, _) = seg_dist(q, C64::new(probe.re, 0.0), probe);
            if d_v < clearance {
                continue 'offsets;
            }
            let (d_h, _) = seg_dist(q, tau_star, probe);
            if d_h < clearance && d_self > 2.5 * clearance {
                continue 'offsets;
            }
        }
        // Carry the pair values to the probe.
        let mut pair = pair_at_star;
        let hops = 24;
        let mut hop_ok = true;
        for k in 1..=hops {
            let t = tau_star + (probe - tau_star) * (k as f64 / hops as f64);
            let m = match model.eval(t) {
                Ok(m) => m,
                Err(_) => {
                    hop_ok = false;
                    break;
                }
            };
            let e = eigenvalues_complex_symmetric(&m)?;
            pair = track_pair(&e, pair);
        }
        if !hop_ok {
            continue;
        }
        // Labeled walk up the lane.
        let mut tracker = match EnergyTracker::on_axis(model, probe.re) {
            Ok(t) => t,
            Err(_) => continue,
        };
        match tracker.advance(model, probe, 1e-7) {
            Ok(()) => {}
            Err(SpectralError::StepUnderflow { .. }) => continue 'offsets,
            Err(_) => continue 'offsets,
        }
        let _ = side;
        // Match the carried pair values against the labeled set.
        let find = |v: C64, exclude: Option<usize>| -> Option<usize> {
            let mut best = None;
            let mut bd = f64::INFINITY;
            for (k, e) in tracker.energies.iter().enumerate() {
                if Some(k) == exclude {
                    continue;
                }
                let d = (e - v).norm();
                if d < bd {
                    bd = d;
                    best = Some(k);
                }
            }
            best
        };
        let ia = match find(pair.0, None) {
            Some(k) => k,
            None => continue,
        };
        let ib = match find(pair.1, Some(ia)) {
            Some(k) => k,
            None => continue,
        };
        // Sanity: the match must be tight relative to the pair separation.
        let sep = (pair.0 - pair.1).norm();
        let err = (tracker.energies[ia] - pair.0)
            .norm()
            .max((tracker.energies[ib] - pair.1).norm());
        if err > 0.3 * sep {
            continue;
        }
        return Ok((ia.min(ib), ia.max(ib)));
    }
    Err(BranchError::PairIdentification { tau: tau_star })
}

fn seg_dist(p: C64, a: C64, b: C64) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    if len2 == 0.0 {
        return ((p - a).norm(), 0.0);
    }
    let t = (((p - a).conj() * ab).re / len2).clamp(0.0, 1.0);
    ((p - (a + ab * t)).norm(), t)
}

/// Per-pair minimum gap along the real axis over [re_min, re_max].
fn real_axis_min_gaps(
    model: &HamiltonianModel,
    re_min: f64,
    re_max: f64,
    samples: usize,
) -> Vec<Vec<f64>> {
    let n = model.dim();
    let mut gaps = vec![vec![f64::INFINITY; n]; n];
    for k in 0..samples {
        let re = re_min + (re_max - re_min) * k as f64 / (samples - 1) as f64;
        let mut e: Vec<f64> = model
            .eval_real(re)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        e.sort_by(f64::total_cmp);
        for i in 0..n {
            for j in (i + 1)..n {
                let g = (e[j] - e[i]).abs();
                if g < gaps[i][j] {
                    gaps[i][j] = g;
                }
            }
        }
    }
    gaps
}

/// Grid scan for near-degeneracies.
///
/// Emits, per level pair, the locations where |ΔE| attains a local minimum
/// that descends below the candidate threshold (a fraction of the pair's
/// minimum real-axis gap). The threshold is applied to the *descended*
/// minimum rather than the raw vertex value so that coarse grids still catch
/// branch points while broad minima are rejected.
pub fn scan_grid(
    model: &HamiltonianModel,
    region: &ScanRegion,
    opts: &ScanOptions,
) -> Result<ScanOutcome, BranchError> {
    if opts.nx < 8 || opts.ny < 8 {
        return Err(BranchError::GridTooCoarse {
            nx: opts.nx,
            ny: opts.ny,
        });
    }
    if region.re_max <= region.re_min || region.im_max <= region.im_min {
        return Err(BranchError::EmptyRegion);
    }

    // Clip the region away from matrix-element singularities. Poles sit on
    // the imaginary axis, the lowest at Im τ = απ/2; if the region rectangle
    // intersects a pole's guard disk, cap the scan below the lowest pole.
    let mut region = *region;
    let mut region_clipped = None;
    let guard = model.pole_guard();
    if guard > 0.0 && model.pole_distance(C64::new(0.0, 0.0)).is_finite() {
        let p0 = model.alpha() * std::f64::consts::FRAC_PI_2;
        let dx = (region.re_min.max(-region.re_max)).max(0.0);
        let dy = (region.im_min - p0).max(p0 - region.im_max).max(0.0);
        if dx.hypot(dy) < guard {
            let im_max = p0 - guard;
            if im_max <= region.im_min {
                return Err(BranchError::EmptyRegion);
            }
            region.im_max = im_max;
            region_clipped = Some(im_max);
        }
    }

    let (nx, ny) = (opts.nx, opts.ny);
    let dx = (region.re_max - region.re_min) / nx as f64;
    let dy = (region.im_max - region.im_min) / ny as f64;

    // The few smallest pairwise distances at every grid vertex, with the
    // pair values attached. Tracking the ranked fields separately matters:
    // a pit of one pair can sit inside the deeper pit of another, where the
    // plain min-over-pairs field never shows a minimum for it.
    let n_levels = model.dim();
    let n_pairs = n_levels * (n_levels - 1) / 2;
    let ranks = 3.min(n_pairs);
    let cols = nx + 1;
    let rows = ny + 1;
    let grid = crate::map_indexed(rows * cols, |idx| {
        let iy = idx / cols;
        let ix = idx % cols;
        let tau = C64::new(
            region.re_min + ix as f64 * dx,
            region.im_min + iy as f64 * dy,
        );
        let m = model.eval(tau)?;
        let e = eigenvalues_complex_symmetric(&m)?;
        let mut pairs: Vec<(f64, C64, C64)> = Vec::with_capacity(n_pairs);
        for a in 0..e.len() {
            for b in (a + 1)..e.len() {
                pairs.push(((e[a] - e[b]).norm(), e[a], e[b]));
            }
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        pairs.truncate(ranks);
        Ok::<Vec<(f64, C64, C64)>, BranchError>(pairs)
    });
    let mut d: Vec<Vec<(f64, C64, C64)>> = Vec::with_capacity(rows * cols);
    for v in grid {
        d.push(v?);
    }

    // Local minima of each ranked field over the 8-neighborhood: no
    // neighbor smaller, at least one strictly larger.
    let mut minima: Vec<(C64, (C64, C64))> = Vec::new();
    for rank in 0..ranks {
        for iy in 0..rows {
            for ix in 0..cols {
                let v = d[iy * cols + ix][rank].0;
                let mut any_larger = false;
                let mut is_min = true;
                for ddy in -1i64..=1 {
                    for ddx in -1i64..=1 {
                        if ddy == 0 && ddx == 0 {
                            continue;
                        }
                        let qy = iy as i64 + ddy;
                        let qx = ix as i64 + ddx;
                        if qy < 0 || qx < 0 || qy >= rows as i64 || qx >= cols as i64 {
                            continue;
                        }
                        let w = d[qy as usize * cols + qx as usize][rank].0;
                        if w < v {
                            is_min = false;
                        }
                        if w > v {
                            any_larger = true;
                        }
                    }
                }
                if is_min && any_larger {
                    let cell = &d[iy * cols + ix][rank];
                    minima.push((
                        C64::new(
                            region.re_min + ix as f64 * dx,
                            region.im_min + iy as f64 * dy,
                        ),
                        (cell.1, cell.2),
                    ));
                }
            }
        }
    }

    let gaps = real_axis_min_gaps(model, region.re_min, region.re_max, 1024);
    let margin = 0.5 * dx.hypot(dy);

    // Multi-start descent from the 3×3 vertex neighborhood of each minimum,
    // seeded with the minimum's pair values; duplicates merge afterwards.
    let mut descents: Vec<(C64, NewtonResult)> = Vec::new();
    for (tau_cell, seed) in minima {
        for oy in -1i64..=1 {
            for ox in -1i64..=1 {
                let start = tau_cell + C64::new(ox as f64 * dx, oy as f64 * dy);
                let descended =
                    match newton_descend(model, start, Some(seed), &opts.refine) {
                        Ok(r) => r,
                        Err(BranchError::RefinementFailed { .. }) => continue,
                        Err(e) => return Err(e),
                    };
                // Canonicalize to the upper half plane: bottom-row starts
                // sometimes converge to the mirror point (same physical
                // degeneracy).
                let mut descended = descended;
                if descended.tau.im < 0.0 {
                    descended.tau = descended.tau.conj();
                    descended.pair = (descended.pair.0.conj(), descended.pair.1.conj());
                }
                if !region.contains(descended.tau, margin) {
                    continue;
                }
                let dup = descents
                    .iter()
                    .any(|(_, d)| (d.tau - descended.tau).norm() < 1e-6 * (1.0 + d.tau.norm()));
                if !dup {
                    descents.push((tau_cell, descended));
                }
            }
        }
    }

    let all_positions: Vec<C64> = descents.iter().map(|(_, r)| r.tau).collect();
    let mut candidates = Vec::new();
    let mut unidentified = Vec::new();
    for (tau_cell, descended) in descents {
        let levels = match identify_pair(model, descended.tau, descended.pair, &all_positions)
        {
            Ok(l) => l,
            // An unidentifiable point is dropped rather than fatal; it
            // would resurface on a denser grid with clearer lanes.
            Err(BranchError::PairIdentification { .. }) => {
                unidentified.push(descended.tau);
                continue;
            }
            Err(e) => return Err(e),
        };
        let threshold = opts.candidate_rel_threshold * gaps[levels.0][levels.1];
        if descended.gap <= threshold {
            candidates.push(Candidate {
                levels,
                tau_cell,
                tau_descended: descended.tau,
                gap: descended.gap,
                pair_values: descended.pair,
            });
        }
    }
    candidates.sort_by(|a, b| {
        (a.tau_descended.re, a.tau_descended.im)
            .partial_cmp(&(b.tau_descended.re, b.tau_descended.im))
            .unwrap()
    });
    Ok(ScanOutcome {
        candidates,
        region_clipped,
        unidentified,
    })
}

/// A refined point before conjugate pairing.
#[derive(Debug, Clone)]
pub struct RefinedPoint {
    pub levels: (usize, usize),
    pub tau_star: C64,
    pub local_coeff: C64,
    pub residual_gap: f64,
    pub coeff_fit_spread: f64,
    pub suspicious_low: bool,
    /// Tracked pair values at τ*.
    pub pair_values: (C64, C64),
}

/// Newton-refine a candidate to full tolerance and fit the local square-root
/// coefficient on a probe circle.
pub fn refine(
    model: &HamiltonianModel,
    candidate: &Candidate,
    opts: &RefineOptions,
) -> Result<RefinedPoint, BranchError> {
    refine_seeded(
        model,
        candidate.tau_descended,
        candidate.levels,
        Some(candidate.pair_values),
        opts,
    )
}

/// Refine starting from an arbitrary point; `levels` is carried through and
/// the descent follows the closest pair at the start.
pub fn refine_from(
    model: &HamiltonianModel,
    start: C64,
    levels: (usize, usize),
    opts: &RefineOptions,
) -> Result<RefinedPoint, BranchError> {
    refine_seeded(model, start, levels, None, opts)
}

/// Refine with an explicit tracked-pair seed (needed when the target pair is
/// not the closest pair at the starting point).
pub fn refine_seeded(
    model: &HamiltonianModel,
    start: C64,
    levels: (usize, usize),
    seed_pair: Option<(C64, C64)>,
    opts: &RefineOptions,
) -> Result<RefinedPoint, BranchError> {
    let result = newton_descend(model, start, seed_pair, opts)?;
    let tau_star = result.tau;

    // Probe circle: g(τ* + r·e^{iθ}) ≈ α²·r·e^{iθ}. At τ* the target pair
    // has essentially collapsed, so tracking from the descent pair is safe
    // even when another pair is nearby.
    let r = opts.probe_radius * (1.0 + tau_star.norm());
    let e_center = eigenvalues_complex_symmetric(&model.eval(tau_star)?)?;
    let pair_center = track_pair(&e_center, result.pair);
    let mut estimates = Vec::with_capacity(8);
    for k in 0..8 {
        let th = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
        let h = C64::new(r * th.cos(), r * th.sin());
        let e = eigenvalues_complex_symmetric(&model.eval(tau_star + h)?)?;
        let p = track_pair(&e, pair_center);
        let de = p.0 - p.1;
        estimates.push(de * de / h);
    }
    let mean: C64 = estimates.iter().sum::<C64>() / estimates.len() as f64;
    let spread = estimates
        .iter()
        .map(|e| (e - mean).norm())
        .fold(0.0, f64::max)
        / mean.norm().max(1e-300);
    let local_coeff = mean.sqrt();

    Ok(RefinedPoint {
        levels,
        tau_star,
        local_coeff,
        residual_gap: result.gap,
        coeff_fit_spread: spread,
        suspicious_low: tau_star.im.abs() < opts.min_height,
        pair_values: result.pair,
    })
}

/// Merge duplicates, synthesize-and-verify the conjugate partners, and sort
/// by Re τ*. Points are canonicalized to their upper-half-plane member.
pub fn pair_and_dedupe(
    model: &HamiltonianModel,
    refined: Vec<RefinedPoint>,
    tol: f64,
    opts: &RefineOptions,
) -> Result<BranchPointSet, BranchError> {
    let mut canonical: Vec<RefinedPoint> = Vec::new();
    for mut p in refined {
        if p.tau_star.im < 0.0 {
            p.tau_star = p.tau_star.conj();
            p.local_coeff = p.local_coeff.conj();
            p.pair_values = (p.pair_values.0.conj(), p.pair_values.1.conj());
        }
        let dup = canonical
            .iter()
            .any(|q| q.levels == p.levels && (q.tau_star - p.tau_star).norm() < tol);
        if !dup {
            canonical.push(p);
        }
    }
    canonical.sort_by(|a, b| {
        (a.tau_star.re, a.tau_star.im, a.levels)
            .partial_cmp(&(b.tau_star.re, b.tau_star.im, b.levels))
            .unwrap()
    });

    let mut points = Vec::with_capacity(canonical.len());
    for p in canonical {
        let conj_start = p.tau_star.conj();
        let conj_seed = (p.pair_values.0.conj(), p.pair_values.1.conj());
        let partner = refine_seeded(model, conj_start, p.levels, Some(conj_seed), opts)?;
        if (partner.tau_star - conj_start).norm() > 1e-8 * (1.0 + conj_start.norm()) {
            return Err(BranchError::ConjugateConsistency {
                tau: p.tau_star,
                refined: partner.tau_star,
            });
        }
        points.push(BranchPoint {
            levels: p.levels,
            tau_star: p.tau_star,
            local_coeff: p.local_coeff,
            residual_gap: p.residual_gap,
            coeff_fit_spread: p.coeff_fit_spread,
            conj_tau_star: partner.tau_star,
            conj_residual_gap: partner.residual_gap,
            suspicious_low: p.suspicious_low,
        });
    }
    Ok(BranchPointSet { points })
}

/// Scan, refine, and dedupe in one call.
pub fn locate(
    model: &HamiltonianModel,
    region: &ScanRegion,
    opts: &ScanOptions,
) -> Result<BranchPointSet, BranchError> {
    let outcome = scan_grid(model, region, opts)?;
    let mut refined = Vec::new();
    for c in &outcome.candidates {
        match refine(model, c, &opts.refine) {
            Ok(p) => refined.push(p),
            // A candidate that stops refining cleanly was spurious.
            Err(BranchError::RefinementFailed { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    pair_and_dedupe(model, refined, 1e-8, &opts.refine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HamiltonianModel;

    fn lz() -> HamiltonianModel {
        HamiltonianModel::landau_zener(1.0, 1.0).unwrap()
    }

    #[test]
    fn lz_scan_finds_exactly_one_candidate() {
        let region = ScanRegion {
            re_min: -2.0,
            re_max: 2.0,
            im_min: 0.0,
            im_max: 2.0,
        };
        let opts = ScanOptions {
            nx: 40,
            ny: 40,
            ..Default::default()
        };
        let out = scan_grid(&lz(), &region, &opts).unwrap();
        assert_eq!(out.candidates.len(), 1, "candidates: {:?}", out.candidates);
        let c = &out.candidates[0];
        assert_eq!(c.levels, (0, 1));
        assert!((c.tau_descended - C64::new(0.0, 1.0)).norm() < 1e-6);
    }

    #[test]
    fn constant_hamiltonian_yields_no_candidates() {
        // Zero sweep rate makes the LZ Hamiltonian τ-independent.
        let model = HamiltonianModel::landau_zener(1.0, 0.0).unwrap();
        let region = ScanRegion::standard();
        let out = scan_grid(&model, &region, &ScanOptions::default()).unwrap();
        assert!(out.candidates.is_empty());
    }

    #[test]
    fn lz_refine_hits_branch_point() {
        let model = lz();
        let e = eigenvalues_complex_symmetric(&model.eval(C64::new(0.1, 0.9)).unwrap())
            .unwrap();
        let c = Candidate {
            levels: (0, 1),
            tau_cell: C64::new(0.1, 0.9),
            tau_descended: C64::new(0.1, 0.9),
            gap: 1.0,
            pair_values: (e[0], e[1]),
        };
        let p = refine(&model, &c, &RefineOptions::default()).unwrap();
        assert!(
            (p.tau_star - C64::new(0.0, 1.0)).norm() <= 1e-10,
            "τ* = {} should be i",
            p.tau_star
        );
        // Near τ* = i: ΔE² = 2i·(τ − i)·(1 + O(τ−i))·¼·... for the ±½√ pair
        // the squared gap is τ² + 1, so α² = 2i exactly at the point.
        let alpha2 = p.local_coeff * p.local_coeff;
        assert!(
            (alpha2 - C64::new(0.0, 2.0)).norm() < 0.02,
            "α² = {alpha2} should be ≈ 2i"
        );
        // Probe-circle estimates constant within 1%.
        assert!(p.coeff_fit_spread < 0.01, "spread {:.3e}", p.coeff_fit_spread);
        assert!(!p.suspicious_low);
    }

    #[test]
    fn refine_is_idempotent() {
        let model = lz();
        let opts = RefineOptions::default();
        let p = refine_from(&model, C64::new(0.05, 0.95), (0, 1), &opts).unwrap();
        let q = refine_from(&model, p.tau_star, (0, 1), &opts).unwrap();
        assert!((q.tau_star - p.tau_star).norm() < 1e-9);
    }

    #[test]
    fn square_root_exponent_fit() {
        // |ΔE(τ* + h)| vs |h| over two decades must fit exponent 0.5 ± 0.02.
        let model = lz();
        let p = refine_from(&model, C64::new(0.0, 0.9), (0, 1), &RefineOptions::default())
            .unwrap();
        let dir = C64::from_polar(1.0, 0.45);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut h = 1e-4;
        while h <= 1e-2 + 1e-12 {
            let tau = p.tau_star + dir * h;
            let m = model.eval(tau).unwrap();
            let e = eigenvalues_complex_symmetric(&m).unwrap();
            let d = min_pair_distance(&e);
            xs.push(h.ln());
            ys.push(d.ln());
            h *= 1.5;
        }
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope - 0.5).abs() <= 0.02,
            "fitted exponent {slope} not within 0.5 ± 0.02"
        );
    }

    #[test]
    fn dedupe_merges_and_synthesizes_conjugate() {
        let model = lz();
        let opts = RefineOptions::default();
        let a = refine_from(&model, C64::new(0.05, 0.9), (0, 1), &opts).unwrap();
        let b = refine_from(&model, C64::new(-0.05, 1.1), (0, 1), &opts).unwrap();
        let set = pair_and_dedupe(&model, vec![a, b], 1e-8, &opts).unwrap();
        assert_eq!(set.len(), 1, "two refinements of the same point must merge");
        let p = &set.points[0];
        assert!((p.tau_star - C64::new(0.0, 1.0)).norm() < 1e-9);
        assert!((p.conj_tau_star - C64::new(0.0, -1.0)).norm() < 1e-8);
        assert_eq!(p.levels, (0, 1));
    }

    #[test]
    fn goe_locate_is_grid_independent_and_conjugate_paired() {
        let model = HamiltonianModel::goe_interp(6, 2.0, 42).unwrap();
        let region = ScanRegion::standard();
        let coarse = locate(&model, &region, &ScanOptions::default()).unwrap();
        assert!(
            !coarse.is_empty(),
            "a GOE model should have branch points in the window"
        );
        // No spurious candidates: every scan candidate refines into the
        // deduped set (two ranked fields may find the same point, so the
        // set can be smaller, never larger).
        let outcome = scan_grid(&model, &region, &ScanOptions::default()).unwrap();
        assert!(outcome.candidates.len() >= coarse.len());
        for c in &outcome.candidates {
            let hit = coarse
                .points
                .iter()
                .filter(|p| p.levels == c.levels)
                .map(|p| {
                    (p.tau_star - c.tau_descended)
                        .norm()
                        .min((p.tau_star - c.tau_descended.conj()).norm())
                })
                .fold(f64::INFINITY, f64::min);
            assert!(hit <= 1e-6, "spurious candidate at {}", c.tau_descended);
        }
        let fine = locate(
            &model,
            &region,
            &ScanOptions {
                nx: 240,
                ny: 80,
                ..Default::default()
            },
        )
        .unwrap();
        // Doubling the grid density changes no refined location by more than
        // 1e-8, and finds no fewer points.
        assert!(fine.len() >= coarse.len());
        for p in &coarse.points {
            let hit = fine
                .points
                .iter()
                .filter(|q| q.levels == p.levels)
                .map(|q| (q.tau_star - p.tau_star).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(
                hit <= 1e-8,
                "point {} moved {hit:.3e} under grid doubling",
                p.tau_star
            );
        }
        for p in &coarse.points {
            assert!((p.conj_tau_star - p.tau_star.conj()).norm() <= 1e-8);
            assert!(p.tau_star.im > 0.0);
            // The computed gap floor at a defective point is ~√ε·‖H‖.
            assert!(p.residual_gap <= 1e-6, "residual {:.3e}", p.residual_gap);
        }
        for w in coarse.points.windows(2) {
            assert!(w[0].tau_star.re <= w[1].tau_star.re + 1e-12);
        }
    }

    #[test]
    fn grid_too_coarse_rejected() {
        let out = scan_grid(
            &lz(),
            &ScanRegion::standard(),
            &ScanOptions {
                nx: 4,
                ny: 4,
                ..Default::default()
            },
        );
        assert!(matches!(out, Err(BranchError::GridTooCoarse { .. })));
    }

    #[test]
    fn region_clipped_near_pole() {
        // α = 0.5 puts the first pole at Im τ = π/4 ≈ 0.785, inside the
        // standard window; the scan must clip and warn.
        let model = HamiltonianModel::goe_interp(3, 0.5, 5).unwrap();
        let region = ScanRegion::standard();
        let out = scan_grid(&model, &region, &ScanOptions::default()).unwrap();
        let clipped = out.region_clipped.expect("expected region-clipped warning");
        assert!(clipped < 2.0);
    }
}
