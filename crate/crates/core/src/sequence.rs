//! Transition sequences and the topological selection rule.
//!
//! A transition from level n to level m can proceed through an ordered chain
//! of branch points whose level indices move strictly monotonically from n
//! to m. Each chain carries the sum of its branch-point actions; its
//! probability is exp(−2·Σλ/ε). Not every chain contributes: a step is
//! possible only while its starting level is still occupied, which
//! geometrically requires each successive branch point to lie above the real
//! axis and strictly to the right of the boundary formed by the previous
//! point's branch cut (above that point's height) joined to its descending
//! Stokes line (below it). Downward transitions use the lower-half-plane
//! mirror geometry; by reflection symmetry the test runs verbatim on the
//! upper-half-plane representatives.
//!
//! The empirical shortcut — real parts of the chain ascending in transition
//! order — is computed alongside as a cross-check; the two have agreed on
//! every case examined, and any disagreement is surfaced, not resolved.

use std::collections::BTreeMap;

use crate::branch::BranchPointSet;
use crate::stokes::{BranchCut, StokesLine};
use crate::C64;

/// Outcome of a selection test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Allowed,
    Forbidden,
    /// Geometry on a boundary or a required Stokes line missing; reported
    /// and treated as forbidden downstream.
    Indeterminate,
}

/// An ordered chain of branch points mediating an n → m transition.
#[derive(Debug, Clone)]
pub struct TransitionSequence {
    pub from_level: usize,
    pub to_level: usize,
    /// Indices into the [`BranchPointSet`], in transition (time) order.
    pub chain: Vec<usize>,
    /// Σ λ over the chain (exactly the sum, no re-integration).
    pub total_action: f64,
    pub verdict_topological: Option<Verdict>,
    pub verdict_empirical: Option<Verdict>,
    pub is_minimal: bool,
}

/// Enumeration result for one ordered level pair.
#[derive(Debug, Clone)]
pub struct EnumerationOutcome {
    pub sequences: Vec<TransitionSequence>,
    /// Level pairs that would be needed by some monotone chain but have no
    /// located branch point.
    pub missing_pairs: Vec<(usize, usize)>,
}

/// All monotone chains from `n` to `m` (each concrete choice of branch point
/// per step is a distinct sequence). `n == m` yields the single empty chain.
pub fn enumerate(
    set: &BranchPointSet,
    lambda: &[f64],
    n: usize,
    m: usize,
    dim: usize,
) -> EnumerationOutcome {
    assert_eq!(lambda.len(), set.points.len());
    assert!(n < dim && m < dim);

    if n == m {
        return EnumerationOutcome {
            sequences: vec![TransitionSequence {
                from_level: n,
                to_level: m,
                chain: Vec::new(),
                total_action: 0.0,
                verdict_topological: None,
                verdict_empirical: None,
                is_minimal: false,
            }],
            missing_pairs: Vec::new(),
        };
    }

    // Intermediate levels strictly between n and m.
    let ascending = m > n;
    let lo = n.min(m);
    let hi = n.max(m);
    let inner: Vec<usize> = ((lo + 1)..hi).collect();

    let mut sequences = Vec::new();
    let mut missing = std::collections::BTreeSet::new();

    // Each subset of the inner levels gives one level path; order follows
    // the transition direction.
    let subsets = 1usize << inner.len();
    for mask in 0..subsets {
        let mut levels: Vec<usize> = vec![n];
        let mut picked: Vec<usize> = inner
            .iter()
            .enumerate()
            .filter(|(k, _)| mask & (1 << k) != 0)
            .map(|(_, &l)| l)
            .collect();
        if !ascending {
            picked.reverse();
        }
        levels.extend(picked);
        levels.push(m);
        if levels.len() > dim {
            continue;
        }

        // Branch-point choices per edge.
        let mut per_edge: Vec<Vec<usize>> = Vec::with_capacity(levels.len() - 1);
        let mut complete = true;
        for w in levels.windows(2) {
            let choices = set.for_pair(w[0], w[1]);
            if choices.is_empty() {
                missing.insert((w[0].min(w[1]), w[0].max(w[1])));
                complete = false;
                break;
            }
            per_edge.push(choices);
        }
        if !complete {
            continue;
        }

        // Cartesian product over the per-edge choices.
        let mut stack = vec![(0usize, Vec::<usize>::new())];
        while let Some((edge, chain)) = stack.pop() {
            if edge == per_edge.len() {
                let total_action = chain.iter().map(|&b| lambda[b]).sum();
                sequences.push(TransitionSequence {
                    from_level: n,
                    to_level: m,
                    chain,
                    total_action,
                    verdict_topological: None,
                    verdict_empirical: None,
                    is_minimal: false,
                });
                continue;
            }
            for &b in &per_edge[edge] {
                let mut next = chain.clone();
                next.push(b);
                stack.push((edge + 1, next));
            }
        }
    }

    sequences.sort_by(|a, b| {
        a.total_action
            .total_cmp(&b.total_action)
            .then(a.chain.len().cmp(&b.chain.len()))
    });
    EnumerationOutcome {
        sequences,
        missing_pairs: missing.into_iter().collect(),
    }
}

/// Boundary Re τ of a previous branch point at a given height: the branch
/// cut above the point, its descending Stokes line below.
fn boundary_re_at(
    prev_tau: C64,
    cut: &BranchCut,
    line: Option<&StokesLine>,
    y: f64,
) -> Option<f64> {
    if y >= prev_tau.im {
        return cut.re_at_height(y);
    }
    let line = line?;
    // Max Re over all polyline crossings of the height (conservative for
    // non-monotone traces; generic descending lines cross once).
    let mut best: Option<f64> = None;
    for w in line.points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.im - y) * (b.im - y) <= 0.0 && a.im != b.im {
            let t = (y - a.im) / (b.im - a.im);
            if (0.0..=1.0).contains(&t) {
                let re = a.re + t * (b.re - a.re);
                best = Some(best.map_or(re, |x: f64| x.max(re)));
            }
        }
    }
    best
}

/// The topological rule for one sequence.
///
/// `lines` maps branch-point index → its descending Stokes line (the
/// upper-half-plane trace reaching the real axis); `cuts` maps index → cut.
/// Both geometries are the canonical upper-half-plane representatives; for
/// downward transitions the mirrored configuration reduces to exactly the
/// same test by reflection.
pub fn apply_topological_rule(
    seq: &TransitionSequence,
    set: &BranchPointSet,
    lines: &BTreeMap<usize, StokesLine>,
    cuts: &BTreeMap<usize, BranchCut>,
) -> Verdict {
    const TOL: f64 = 1e-9;
    if seq.chain.len() <= 1 {
        // No consecutive pairs to constrain.
        return Verdict::Allowed;
    }
    let mut verdict = Verdict::Allowed;
    for w in seq.chain.windows(2) {
        let prev = &set.points[w[0]];
        let cur = &set.points[w[1]];
        if !(cur.tau_star.im > 0.0) {
            return Verdict::Forbidden;
        }
        let cut = match cuts.get(&w[0]) {
            Some(c) => *c,
            None => BranchCut::vertical(prev.tau_star),
        };
        let boundary = boundary_re_at(
            prev.tau_star,
            &cut,
            lines.get(&w[0]),
            cur.tau_star.im,
        );
        match boundary {
            None => {
                // Required Stokes line missing or not reaching this height.
                verdict = Verdict::Indeterminate;
            }
            Some(b) => {
                if cur.tau_star.re > b + TOL {
                    // strictly right: this step passes
                } else if cur.tau_star.re < b - TOL {
                    return Verdict::Forbidden;
                } else {
                    verdict = Verdict::Indeterminate;
                }
            }
        }
    }
    verdict
}

/// The empirical shortcut: real parts of the chain ascend in transition
/// order.
pub fn empirical_rule(seq: &TransitionSequence, set: &BranchPointSet) -> Verdict {
    const TOL: f64 = 1e-9;
    let mut verdict = Verdict::Allowed;
    for w in seq.chain.windows(2) {
        let a = set.points[w[0]].tau_star.re;
        let b = set.points[w[1]].tau_star.re;
        if b > a + TOL {
            // ascending: fine
        } else if b < a - TOL {
            return Verdict::Forbidden;
        } else {
            verdict = Verdict::Indeterminate;
        }
    }
    verdict
}

/// Select the minimal-action allowed sequence; ties break toward shorter
/// chains, then lexicographically by the Re τ* sequence. Marks the winner's
/// `is_minimal` and returns its index, or `None` when nothing is allowed
/// (a no-prediction outcome for this level pair).
pub fn minimal_action(
    sequences: &mut [TransitionSequence],
    set: &BranchPointSet,
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, s) in sequences.iter().enumerate() {
        if s.verdict_topological != Some(Verdict::Allowed) {
            continue;
        }
        best = match best {
            None => Some(k),
            Some(b) => {
                let cur = &sequences[b];
                let ord = s
                    .total_action
                    .total_cmp(&cur.total_action)
                    .then(s.chain.len().cmp(&cur.chain.len()))
                    .then_with(|| {
                        let re_a: Vec<f64> =
                            s.chain.iter().map(|&i| set.points[i].tau_star.re).collect();
                        let re_b: Vec<f64> = cur
                            .chain
                            .iter()
                            .map(|&i| set.points[i].tau_star.re)
                            .collect();
                        re_a.partial_cmp(&re_b).unwrap_or(std::cmp::Ordering::Equal)
                    });
                if ord == std::cmp::Ordering::Less {
                    Some(k)
                } else {
                    Some(b)
                }
            }
        };
    }
    if let Some(k) = best {
        sequences[k].is_minimal = true;
    }
    best
}

/// The closed-circuit consistency identity for the connection matrices: a
/// full circuit around a branch point crosses three Stokes lines (each
/// applying the subdominant update M), three anti-Stokes lines (dominance
/// exchange T), and the branch cut (iT); the total i·T·M·T·M·T·M must be the
/// identity.
pub fn heading_monodromy_check() -> bool {
    let m = [
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, -1.0), C64::new(1.0, 0.0)],
    ];
    let t = [
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
    ];
    let prod = mat_mul(
        t,
        mat_mul(m, mat_mul(t, mat_mul(m, mat_mul(t, m)))),
    );
    let scaled = mat_scale(C64::new(0.0, 1.0), prod);
    scaled[0][0] == C64::new(1.0, 0.0)
        && scaled[0][1] == C64::new(0.0, 0.0)
        && scaled[1][0] == C64::new(0.0, 0.0)
        && scaled[1][1] == C64::new(1.0, 0.0)
}

type Mat2 = [[C64; 2]; 2];

fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat_scale(s: C64, a: Mat2) -> Mat2 {
    let mut out = a;
    for row in &mut out {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    out
}
