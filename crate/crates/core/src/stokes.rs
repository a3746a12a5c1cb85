//! Stokes and anti-Stokes line tracing, and branch-cut conventions.
//!
//! For the phase-integral difference Δθ(τ) = ∫ ΔE dτ′ taken from a branch
//! point, Stokes lines are the contours Re Δθ = 0 (one adiabatic solution
//! maximally dominant) and anti-Stokes lines are Im Δθ = 0 (co-dominance).
//! A generic square-root branch point emits three of each, separated by
//! 2π/3 in arg(τ − τ*), since Δθ ≈ K·(τ − τ*)^{3/2} locally.
//!
//! The tracer advances with the step rule δτ = ±ε·i/ΔE (Stokes) or
//! δτ = ±ε/ΔE (anti-Stokes), which moves Δθ by a purely imaginary (resp.
//! real) increment, then Newton-corrects the accumulated Δθ back onto the
//! defining contour. The pair energies are followed by continuation at every
//! step, so ΔE never jumps branches mid-trace.

use thiserror::Error;

use crate::branch::BranchPoint;
use crate::model::{HamiltonianModel, ModelError};
use crate::spectral::{eigenvalues_complex_symmetric, SpectralError};
use crate::C64;

#[derive(Debug, Error)]
pub enum StokesError {
    #[error("trace step underflow at {tau} (phase drift would not converge)")]
    StepUnderflow { tau: C64 },
    #[error("could not seed the trace: ray {ray} start point failed")]
    BadStart { ray: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Stokes,
    AntiStokes,
}

/// Why a trace stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    /// Reached Im τ = 0; the final point is the interpolated crossing.
    RealAxis,
    /// Left the configured bounding box.
    RegionExit,
    /// Exhausted the arclength budget.
    MaxLength,
    /// Came within the guard radius of another singularity.
    NearSingularity { at: C64 },
}

/// A traced contour of constant Re Δθ (Stokes) or Im Δθ (anti-Stokes).
#[derive(Debug, Clone)]
pub struct StokesLine {
    pub levels: (usize, usize),
    /// The branch point the line is attached to.
    pub bp_tau: C64,
    pub kind: LineKind,
    /// Which of the three rays (index into `initial_ray_angles`).
    pub ray: usize,
    /// Initial ray angle in arg(τ − τ*).
    pub ray_angle: f64,
    pub points: Vec<C64>,
    /// Δθ accumulated from the branch point, one value per point.
    pub theta: Vec<C64>,
    /// Re τ of the real-axis crossing, when the trace reached the axis.
    pub real_crossing: Option<f64>,
    /// Max |Re Δθ| (Stokes) or |Im Δθ| (anti-Stokes) along the accepted
    /// polyline.
    pub phase_drift: f64,
    pub termination: Termination,
    pub arclength: f64,
}

impl StokesLine {
    /// Linear interpolation of the real-axis crossing from the polyline.
    pub fn real_axis_crossing(&self) -> Option<f64> {
        for w in self.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a.im == 0.0 {
                return Some(a.re);
            }
            if a.im * b.im < 0.0 {
                let t = a.im / (a.im - b.im);
                return Some(a.re + t * (b.re - a.re));
            }
        }
        self.points
            .last()
            .and_then(|p| if p.im == 0.0 { Some(p.re) } else { None })
    }
}

/// Branch cut: a ray from the branch point pointing away from the real
/// axis. The stock convention is the vertical ray (constant Re τ); the angle
/// is configurable so that cut-relocation invariance can be exercised.
#[derive(Debug, Clone, Copy)]
pub struct BranchCut {
    pub origin: C64,
    /// Direction angle of the ray. Must point away from the real axis:
    /// sin(angle) > 0 for upper-half-plane origins, < 0 below.
    pub angle: f64,
}

impl BranchCut {
    /// The stock vertical cut for a branch point.
    pub fn vertical(bp_tau: C64) -> Self {
        let angle = if bp_tau.im >= 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        Self { origin: bp_tau, angle }
    }

    /// A slanted cut; the caller must keep it off the real axis.
    pub fn slanted(bp_tau: C64, angle: f64) -> Self {
        Self { origin: bp_tau, angle }
    }

    pub fn crosses_real_axis(&self) -> bool {
        // The ray leaves the origin with vertical velocity sin(angle).
        if self.origin.im > 0.0 {
            self.angle.sin() <= 0.0
        } else if self.origin.im < 0.0 {
            self.angle.sin() >= 0.0
        } else {
            true
        }
    }

    /// Re τ of the cut at the given height, if the ray reaches it.
    pub fn re_at_height(&self, y: f64) -> Option<f64> {
        let dy = y - self.origin.im;
        let s = self.angle.sin();
        if s == 0.0 || dy * s < 0.0 {
            return None;
        }
        let t = dy / s;
        Some(self.origin.re + t * self.angle.cos())
    }
}

/// Construct the stock branch cut for a refined point.
pub fn branch_cut(bp: &BranchPoint) -> BranchCut {
    BranchCut::vertical(bp.tau_star)
}

/// Stopping box and stepping parameters for traces.
#[derive(Debug, Clone)]
pub struct TraceOptions {
    /// Phase-integral step ε (|Δθ| advanced per step).
    pub step: f64,
    /// Arclength budget.
    pub max_len: f64,
    /// Stop box (re_min, re_max, im_min, im_max). Traces also stop at the
    /// real axis regardless.
    pub region: (f64, f64, f64, f64),
    /// Other singularities (branch points, etc.) to keep away from.
    pub other_singularities: Vec<C64>,
    /// Guard radius around other singularities.
    pub guard: f64,
    /// Spatial cap on a single step.
    pub max_dtau: f64,
    /// Spatial floor on a single step: keeps traces through regions of
    /// large |ΔE| (where the phase step ε/|ΔE| becomes tiny) moving.
    pub min_dtau: f64,
    /// Starting offset factor from the branch point.
    pub start_radius: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_len: 40.0,
            region: (-10.0, 10.0, -5.0, 5.0),
            other_singularities: Vec::new(),
            guard: 0.05,
            max_dtau: 0.02,
            min_dtau: 2e-4,
            start_radius: 2e-3,
        }
    }
}

/// The three ray angles (in arg(τ − τ*)) along which lines of the given
/// kind leave the branch point, from Δθ ≈ K·(τ − τ*)^{3/2}.
pub fn initial_ray_angles(k_coeff: C64, kind: LineKind) -> [f64; 3] {
    let base = match kind {
        // Re Δθ = 0: (3/2)φ + arg K ≡ π/2 (mod π)
        LineKind::Stokes => std::f64::consts::FRAC_PI_2,
        // Im Δθ = 0: (3/2)φ + arg K ≡ 0 (mod π)
        LineKind::AntiStokes => 0.0,
    };
    let mut out = [0.0; 3];
    for (m, slot) in out.iter_mut().enumerate() {
        let phi = (2.0 / 3.0) * (base + m as f64 * std::f64::consts::PI - k_coeff.arg());
        *slot = normalize_angle(phi);
    }
    out
}

fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = a % two_pi;
    if a > std::f64::consts::PI {
        a -= two_pi;
    }
    if a < -std::f64::consts::PI {
        a += two_pi;
    }
    a
}

/// Track the two eigenvalues nearest to the previous pair values.
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

/// Trace one ray of one kind from a branch point.
///
/// The branch point may be either the canonical upper-half-plane
/// representative or its `conjugate_view()`; traces terminate at the real
/// axis from either side.
pub fn trace(
    model: &HamiltonianModel,
    bp: &BranchPoint,
    kind: LineKind,
    ray: usize,
    opts: &TraceOptions,
) -> Result<StokesLine, StokesError> {
    assert!(ray < 3, "a square-root branch point has exactly 3 rays per kind");
    let tau_star = bp.tau_star;
    let side = if tau_star.im >= 0.0 { 1.0 } else { -1.0 };
    let angles = initial_ray_angles(bp.k_coeff(), kind);
    let phi = angles[ray];

    let eigen_pair = |tau: C64, prev: Option<(C64, C64)>| -> Result<(C64, C64), StokesError> {
        let e = eigenvalues_complex_symmetric(&model.eval(tau)?)?;
        Ok(match prev {
            Some(p) => track_pair(&e, p),
            None => {
                let n = e.len();
                let (mut bi, mut bj, mut best) = (0, 1, f64::INFINITY);
                for a in 0..n {
                    for b in (a + 1)..n {
                        let d = (e[a] - e[b]).norm();
                        if d < best {
                            best = d;
                            bi = a;
                            bj = b;
                        }
                    }
                }
                (e[bi], e[bj])
            }
        })
    };

    let r0 = opts.start_radius * (1.0 + tau_star.norm());
    let mut tau = tau_star + C64::from_polar(r0, phi);
    let pair0 = eigen_pair(tau, None)?;
    let mut de = pair0.0 - pair0.1;
    let mut pair = pair0;
    if de.norm() == 0.0 {
        return Err(StokesError::BadStart { ray });
    }

    // Δθ from the branch point to the start, exact for the local √ model:
    // ∫ α√u du along the ray equals (2/3)·ΔE(τ₀)·(τ₀ − τ*) with whichever
    // pair order the tracker picked.
    let mut theta = (2.0 / 3.0) * de * (tau - tau_star);

    let drift_of = |th: C64| match kind {
        LineKind::Stokes => th.re,
        LineKind::AntiStokes => th.im,
    };
    // A decrement d of the drift component corresponds to δτ = -d/ΔE
    // (Stokes) or δτ = -i·d/ΔE (anti-Stokes).
    let correct_dir = |d: f64, de: C64| match kind {
        LineKind::Stokes => -C64::new(d, 0.0) / de,
        LineKind::AntiStokes => -C64::new(0.0, d) / de,
    };
    // Step direction: i/ΔE (Stokes) advances Im Δθ; 1/ΔE (anti) advances Re.
    let step_dir = |de: C64| match kind {
        LineKind::Stokes => C64::new(0.0, 1.0) / de,
        LineKind::AntiStokes => C64::new(1.0, 0.0) / de,
    };

    // Initial correction onto the contour.
    {
        let d = drift_of(theta);
        let dtau = correct_dir(d, de);
        tau += dtau;
        let p = eigen_pair(tau, Some(pair))?;
        let de_new = p.0 - p.1;
        theta += 0.5 * (de + de_new) * dtau;
        pair = p;
        de = de_new;
    }

    // Pick the sign that continues away from the branch point.
    let outward = C64::from_polar(1.0, phi);
    let dir = step_dir(de);
    let sign = if (outward.conj() * dir).re >= 0.0 { 1.0 } else { -1.0 };

    let mut points = vec![tau];
    let mut thetas = vec![theta];
    let mut phase_drift = drift_of(theta).abs();
    let mut arclength = 0.0;
    let mut heading = outward;
    let mut termination = Termination::MaxLength;

    let max_steps = 2_000_000usize;
    let mut steps = 0usize;
    'outer: while arclength < opts.max_len {
        steps += 1;
        if steps > max_steps {
            break;
        }
        // Local step: respect the spatial cap/floor and stay resolved close
        // to the branch point.
        let r_bp = (tau - tau_star).norm();
        let mut eps = opts
            .step
            .max(opts.min_dtau * de.norm())
            .min(opts.max_dtau * de.norm())
            .min(0.25 * r_bp * de.norm());
        let mut attempt = 0;
        loop {
            attempt += 1;
            if attempt > 40 {
                return Err(StokesError::StepUnderflow { tau });
            }
            // Midpoint predictor.
            let d0 = sign * eps * step_dir(de);
            let tau_mid = tau + 0.5 * d0;
            let pair_mid = eigen_pair(tau_mid, Some(pair))?;
            let de_mid = pair_mid.0 - pair_mid.1;
            if de_mid.norm() == 0.0 {
                return Err(StokesError::StepUnderflow { tau });
            }
            let dtau = sign * eps * step_dir(de_mid);
            let tau_new = tau + dtau;
            let pair_new = eigen_pair(tau_new, Some(pair_mid))?;
            let de_new = pair_new.0 - pair_new.1;
            let theta_inc = 0.5 * (de + de_new) * dtau;
            if drift_of(theta + theta_inc).abs() > 0.25 * eps {
                eps *= 0.5;
                continue;
            }
            // Corrector: pull the accumulated phase back onto the contour.
            let mut t2 = tau_new;
            let mut th2 = theta + theta_inc;
            let mut de2 = de_new;
            let mut pair2 = pair_new;
            let d = drift_of(th2);
            if d != 0.0 {
                let dc = correct_dir(d, de2);
                t2 += dc;
                let p = eigen_pair(t2, Some(pair2))?;
                let de_c = p.0 - p.1;
                th2 += 0.5 * (de2 + de_c) * dc;
                pair2 = p;
                de2 = de_c;
            }

            // Heading continuity guards against pair-tracking slips.
            let step_vec = t2 - tau;
            if steps > 3 && (heading.conj() * step_vec).re < 0.0 {
                eps *= 0.5;
                continue;
            }

            arclength += step_vec.norm();
            heading = step_vec / step_vec.norm();
            let crossed_axis = (tau.im * side > 0.0) && (t2.im * side <= 0.0);
            if crossed_axis {
                let a = tau;
                let b = t2;
                let t = a.im / (a.im - b.im);
                let crossing = C64::new(a.re + t * (b.re - a.re), 0.0);
                points.push(crossing);
                thetas.push(th2);
                termination = Termination::RealAxis;
                break 'outer;
            }
            tau = t2;
            theta = th2;
            de = de2;
            pair = pair2;
            points.push(tau);
            thetas.push(theta);
            phase_drift = phase_drift.max(drift_of(theta).abs());

            let (re_min, re_max, im_min, im_max) = opts.region;
            if tau.re < re_min || tau.re > re_max || tau.im < im_min || tau.im > im_max {
                termination = Termination::RegionExit;
                break 'outer;
            }
            for &s in &opts.other_singularities {
                if (tau - s).norm() < opts.guard {
                    termination = Termination::NearSingularity { at: s };
                    break 'outer;
                }
            }
            if model.pole_distance(tau) < 2.0 * model.pole_guard() {
                termination = Termination::NearSingularity { at: tau };
                break 'outer;
            }
            break;
        }
    }

    let real_crossing = if termination == Termination::RealAxis {
        points.last().map(|p| p.re)
    } else {
        None
    };

    Ok(StokesLine {
        levels: bp.levels,
        bp_tau: tau_star,
        kind,
        ray,
        ray_angle: phi,
        points,
        theta: thetas,
        real_crossing,
        phase_drift,
        termination,
        arclength,
    })
}

/// Trace all three rays of a kind.
pub fn trace_all(
    model: &HamiltonianModel,
    bp: &BranchPoint,
    kind: LineKind,
    opts: &TraceOptions,
) -> Result<Vec<StokesLine>, StokesError> {
    (0..3).map(|ray| trace(model, bp, kind, ray, opts)).collect()
}

/// The Stokes line descending from the branch point to the real axis.
/// Returns the crossing trace, preferring the shortest when several rays
/// reach the axis (an anomaly worth flagging upstream).
pub fn descending_stokes(
    model: &HamiltonianModel,
    bp: &BranchPoint,
    opts: &TraceOptions,
) -> Result<Option<StokesLine>, StokesError> {
    let mut best: Option<StokesLine> = None;
    for line in trace_all(model, bp, LineKind::Stokes, opts)? {
        if line.real_crossing.is_some() {
            best = match best {
                None => Some(line),
                Some(b) if line.arclength < b.arclength => Some(line),
                Some(b) => Some(b),
            };
        }
    }
    Ok(best)
}

/// Pairwise intersections between two polylines, for the Stokes-line
/// crossing diagnostic. Chunked bounding boxes keep this fast.
pub fn polyline_intersections(a: &[C64], b: &[C64], max_hits: usize) -> Vec<C64> {
    const CHUNK: usize = 64;
    let mut hits = Vec::new();
    let bbox = |pts: &[C64]| {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            lo = (lo.0.min(p.re), lo.1.min(p.im));
            hi = (hi.0.max(p.re), hi.1.max(p.im));
        }
        (lo, hi)
    };
    let overlap = |a: ((f64, f64), (f64, f64)), b: ((f64, f64), (f64, f64))| {
        a.0 .0 <= b.1 .0 && b.0 .0 <= a.1 .0 && a.0 .1 <= b.1 .1 && b.0 .1 <= a.1 .1
    };
    let mut ai = 0;
    while ai + 1 < a.len() {
        let a_end = (ai + CHUNK).min(a.len() - 1);
        let abox = bbox(&a[ai..=a_end]);
        let mut bi = 0;
        while bi + 1 < b.len() {
            let b_end = (bi + CHUNK).min(b.len() - 1);
            let bbox_b = bbox(&b[bi..=b_end]);
            if overlap(abox, bbox_b) {
                for i in ai..a_end {
                    for j in bi..b_end {
                        if let Some(x) = segment_intersection(a[i], a[i + 1], b[j], b[j + 1]) {
                            hits.push(x);
                            if hits.len() >= max_hits {
                                return hits;
                            }
                        }
                    }
                }
            }
            bi = b_end;
        }
        ai = a_end;
    }
    hits
}

fn segment_intersection(p1: C64, p2: C64, q1: C64, q2: C64) -> Option<C64> {
    let r = p2 - p1;
    let s = q2 - q1;
    let cross = |a: C64, b: C64| a.re * b.im - a.im * b.re;
    let denom = cross(r, s);
    if denom == 0.0 {
        return None;
    }
    let t = cross(q1 - p1, s) / denom;
    let u = cross(q1 - p1, r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(p1 + r * t)
    } else {
        None
    }
}
