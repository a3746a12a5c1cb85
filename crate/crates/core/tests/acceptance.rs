//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Criteria 3 and 4 share one ensemble run (five random-matrix models, full
//! 30-pair comparison each); it is computed once and cached.

use std::sync::OnceLock;

use stokeslab::action::{action_table, branch_action, ActionOptions};
use stokeslab::branch::{locate, ScanOptions, ScanRegion};
use stokeslab::config::ExperimentConfig;
use stokeslab::harness::{
    adiabatic_pipeline, resolve_options, run_experiment, ComparisonReport,
};
use stokeslab::model::HamiltonianModel;
use stokeslab::propagate::{propagate, StepControl};
use stokeslab::renorm::{
    divergence_profile, growth_law_check, power_law_coefficients, RenormOptions,
};
use stokeslab::sequence::{
    apply_topological_rule, empirical_rule, enumerate, heading_monodromy_check, minimal_action,
};
use stokeslab::spectral::{
    continue_along, continue_to, frame_on_axis, ContinuationControl, SolverOptions,
};
use stokeslab::stokes::{descending_stokes, BranchCut, TraceOptions};
use stokeslab::C64;

fn announce(criterion: u32, name: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {criterion} ({name}): {verdict} — {detail}");
}

struct Ensemble {
    report: ComparisonReport,
    elapsed_s: f64,
    out_dir: std::path::PathBuf,
}

fn ensemble() -> &'static Ensemble {
    static CELL: OnceLock<Ensemble> = OnceLock::new();
    CELL.get_or_init(|| {
        let text = r#"
            [model]
            kind = "goe_interp"
            dim = 6
            alpha = 2.0
            seeds = [1, 2, 3, 4, 5]
        "#;
        let cfg =
            ExperimentConfig::from_str_validated(text, std::path::Path::new(".")).unwrap();
        let out_dir = std::env::temp_dir().join("stokeslab_acceptance_ensemble");
        std::fs::remove_dir_all(&out_dir).ok();
        let t0 = std::time::Instant::now();
        let report = run_experiment(&cfg, std::path::Path::new("."), &out_dir).unwrap();
        Ensemble {
            report,
            elapsed_s: t0.elapsed().as_secs_f64(),
            out_dir,
        }
    })
}

#[test]
fn criterion_1_landau_zener_law_at_low_epsilon() {
    // Exact law: P = exp(−πΔ²/(2Aε)). The linear drive never saturates, so
    // the integration window is widened within the runtime budget and the
    // result must stop moving; the 2%-of-ln-P bound is then checked at
    // ε = 0.02 as stated.
    let model = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
    let ctrl = StepControl::default();

    // Feasible-regime evidence that the integrator reproduces the law where
    // the window artifact permits (amplitude ~ ε/(2τ_f³) below e^{−π/4ε}).
    for (eps, window) in [(0.1, 50.0), (0.05, 50.0)] {
        let r = propagate(&model, eps, 0, -window, window, &ctrl).unwrap();
        let expect = -std::f64::consts::PI / (2.0 * eps);
        let rel = ((r.probabilities[1].ln() - expect) / expect).abs();
        println!(
            "  supplementary ε = {eps}: |Δ ln P|/|ln P| = {rel:.2e} at window ±{window}"
        );
        assert!(rel <= 0.02);
    }

    let eps = 0.02;
    let expect = -std::f64::consts::PI / (2.0 * eps);
    let mut measured = Vec::new();
    for window in [25.0, 35.0] {
        let r = propagate(&model, eps, 0, -window, window, &ctrl).unwrap();
        measured.push((window, r.probabilities[1].ln()));
    }
    for (w, lnp) in &measured {
        println!("  ε = 0.02, window ±{w}: ln P = {lnp:.3} (law: {expect:.3})");
    }
    let (_, lnp) = measured.last().unwrap();
    let rel = ((lnp - expect) / expect).abs();
    let passed = rel <= 0.02;
    announce(
        1,
        "Landau-Zener law",
        passed,
        &format!("ε = 0.02: |Δ ln P|/|ln P| = {rel:.3} (bound 0.02)"),
    );
    assert!(
        passed,
        "ε = 0.02 is unattainable by direct integration: the linear drive's endpoint \
         artifact (amplitude ≈ ε/(2τ_f³), polynomial in the window) floors ln P near \
         {lnp:.1} while the law gives {expect:.1}; reaching it needs τ_f ≈ 8e4 and ~1e13 \
         RK4 steps. The law is reproduced to 0.1% at ε ≥ 0.05 (see supplementary lines)."
    );
}

#[test]
fn criterion_2_dykhne_pipeline_on_landau_zener() {
    let model = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
    let region = ScanRegion {
        re_min: -3.0,
        re_max: 3.0,
        im_min: 0.0,
        im_max: 2.5,
    };
    let set = locate(&model, &region, &ScanOptions::default()).unwrap();
    assert_eq!(set.len(), 1);
    let bp = &set.points[0];
    let pos_err = (bp.tau_star - C64::new(0.0, 1.0)).norm();
    let action = branch_action(&model, bp, &[], &ActionOptions::default()).unwrap();
    let lambda_rel =
        (action.lambda - std::f64::consts::FRAC_PI_4).abs() / std::f64::consts::FRAC_PI_4;
    let line = descending_stokes(&model, bp, &TraceOptions::default())
        .unwrap()
        .expect("descending Stokes line");
    let crossing = line.real_crossing.unwrap().abs();
    let passed = pos_err <= 1e-8 && lambda_rel <= 1e-6 && crossing <= 1e-6;
    announce(
        2,
        "Dykhne pipeline",
        passed,
        &format!(
            "|τ* − i| = {pos_err:.2e} (≤1e-8), |λ − π/4|/λ = {lambda_rel:.2e} (≤1e-6), \
             |Re τ_c| = {crossing:.2e} (≤1e-6)"
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_3_ensemble_replication() {
    let e = ensemble();
    let r = &e.report;
    println!(
        "  {} rows total, {} compared, {} excluded; artifacts in {}",
        r.rows_total,
        r.rows_compared,
        r.rows_excluded,
        e.out_dir.display()
    );
    let passed = r.rows_total == 150
        && r.rows_compared > 0
        && r.mean_frac_diff <= 0.03
        && e.elapsed_s <= 1800.0;
    announce(
        3,
        "ensemble replication",
        passed,
        &format!(
            "mean fractional difference {:.4} (bound 0.03) over {} compared rows of 150, \
             {:.0}s (bound 1800s)",
            r.mean_frac_diff, r.rows_compared, e.elapsed_s
        ),
    );
    assert!(passed, "mean {:.4}, elapsed {:.0}s", r.mean_frac_diff, e.elapsed_s);
}

#[test]
fn criterion_4_rule_agreement() {
    let e = ensemble();
    let passed = e.report.rule_disagreements == 0;
    announce(
        4,
        "topological vs ascending-Re rule",
        passed,
        &format!(
            "{} disagreements across all evaluated sequences (bound 0); geometry tables in {}",
            e.report.rule_disagreements,
            e.out_dir.display()
        ),
    );
    assert!(
        passed,
        "rule disagreement detected — inspect sequences.csv and branch_points.csv in {}",
        e.out_dir.display()
    );
}

#[test]
fn criterion_5_monodromy() {
    // Connection-matrix identity, exactly.
    let identity_ok = heading_monodromy_check();

    // Eigenvalue exchange and double-circuit sign flip, on LZ and on one
    // GOE branch point.
    let opts = SolverOptions::default();
    let ctrl = ContinuationControl::default();
    let mut exchange_ok = true;
    let mut sign_ok = true;
    let mut detail = String::new();

    let mut check_model = |model: &HamiltonianModel, bp_tau: C64, label: &str| {
        let radius = 0.15 * bp_tau.im.max(0.4);
        let start = bp_tau + C64::new(radius, 0.0);
        let approach = frame_on_axis(model, bp_tau.re + 2.0 * radius, &opts).unwrap();
        let f0 = continue_to(model, &approach, start, &ctrl, &opts).unwrap();
        let circle: Vec<C64> = (1..=64)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                bp_tau + C64::from_polar(radius, th)
            })
            .collect();
        let f1 = continue_along(model, &f0, &circle, &ctrl, &opts).unwrap();
        let f2 = continue_along(model, &f1, &circle, &ctrl, &opts).unwrap();

        // Which pair exchanged?
        let n = model.dim();
        let mut swapped = 0;
        for a in 0..n {
            let moved = (f1.energies[a] - f0.energies[a]).norm() > 1e-6;
            let is_swap = (0..n)
                .any(|b| b != a && (f1.energies[a] - f0.energies[b]).norm() <= 1e-6);
            if moved && is_swap {
                swapped += 1;
            } else if moved {
                exchange_ok = false;
            }
        }
        if swapped != 2 {
            exchange_ok = false;
        }
        for a in 0..n {
            if (f2.energies[a] - f0.energies[a]).norm() > 1e-6 {
                exchange_ok = false;
            }
        }
        // The branch pair's eigenvectors flip sign after two circuits.
        let mut flipped = 0;
        for a in 0..n {
            let plus = (f2.state(a) - f0.state(a)).norm();
            let minus = (f2.state(a) + f0.state(a)).norm();
            if minus <= 1e-6 {
                flipped += 1;
            } else if plus > 1e-6 {
                sign_ok = false;
            }
        }
        if flipped < 2 {
            sign_ok = false;
        }
        detail.push_str(&format!("{label}: exchanged pair + {flipped} sign flips; "));
    };

    let lz = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
    check_model(&lz, C64::new(0.0, 1.0), "LZ");

    let goe = HamiltonianModel::goe_interp(6, 2.0, 42).unwrap();
    let set = locate(&goe, &ScanRegion::standard(), &ScanOptions::default()).unwrap();
    let highest = set
        .points
        .iter()
        .max_by(|a, b| a.tau_star.im.total_cmp(&b.tau_star.im))
        .unwrap();
    check_model(&goe, highest.tau_star, "GOE");

    let passed = identity_ok && exchange_ok && sign_ok;
    announce(
        5,
        "monodromy",
        passed,
        &format!("connection identity exact; {detail}"),
    );
    assert!(passed);
}

#[test]
fn criterion_6_conjugate_and_cut_invariance() {
    let mut detail = String::new();
    let mut passed = true;

    for (label, model, region) in [
        (
            "LZ",
            HamiltonianModel::landau_zener(1.0, 1.0).unwrap(),
            ScanRegion {
                re_min: -3.0,
                re_max: 3.0,
                im_min: 0.0,
                im_max: 2.5,
            },
        ),
        (
            "GOE",
            HamiltonianModel::goe_interp(6, 2.0, 42).unwrap(),
            ScanRegion::standard(),
        ),
    ] {
        let opts = resolve_options(&Default::default());
        let artifacts = adiabatic_pipeline(&model, 0, &region, &opts).unwrap();
        let set = &artifacts.set;

        // Conjugate partners within 1e-8, and equal actions.
        let mut max_conj = 0.0_f64;
        let mut max_lambda_diff = 0.0_f64;
        for (k, p) in set.points.iter().enumerate() {
            max_conj = max_conj.max((p.conj_tau_star - p.tau_star.conj()).norm());
            max_lambda_diff = max_lambda_diff
                .max((artifacts.actions.lambda[k] - artifacts.actions.lambda_conj[k]).abs());
        }
        if max_conj > 1e-8 || max_lambda_diff > 1e-8 {
            passed = false;
        }

        // Relocate every branch cut to a slanted ray that sweeps past no
        // other branch point, recompute the actions and all verdicts, and
        // demand identical predictions.
        let mut new_cuts = std::collections::BTreeMap::new();
        for (k, p) in set.points.iter().enumerate() {
            let candidates: [f64; 5] = [1.22, 1.92, 1.05, 2.2, 0.8];
            let mut chosen = std::f64::consts::FRAC_PI_2;
            'outer: for &angle in &candidates {
                for (q, other) in set.points.iter().enumerate() {
                    if q == k {
                        continue;
                    }
                    let phi = (other.tau_star - p.tau_star).arg();
                    let lo = angle.min(std::f64::consts::FRAC_PI_2);
                    let hi = angle.max(std::f64::consts::FRAC_PI_2);
                    if phi >= lo && phi <= hi {
                        continue 'outer; // would sweep past a point
                    }
                }
                chosen = angle;
                break;
            }
            new_cuts.insert(k, BranchCut::slanted(p.tau_star, chosen));
        }
        let relocated = new_cuts
            .values()
            .filter(|c| (c.angle - std::f64::consts::FRAC_PI_2).abs() > 1e-9)
            .count();

        let actions_again = action_table(&model, set, &ActionOptions::default()).unwrap();
        for (a, b) in artifacts
            .actions
            .lambda
            .iter()
            .zip(actions_again.lambda.iter())
        {
            if (a - b).abs() > 1e-12 {
                passed = false;
            }
        }

        let n = model.dim();
        let mut flips = 0;
        for from in 0..n {
            for to in 0..n {
                if from == to {
                    continue;
                }
                let mut out = enumerate(set, &artifacts.actions.lambda, from, to, n);
                for s in &mut out.sequences {
                    s.verdict_topological = Some(apply_topological_rule(
                        s,
                        set,
                        &artifacts.descending,
                        &new_cuts,
                    ));
                    s.verdict_empirical = Some(empirical_rule(s, set));
                }
                let new_min = minimal_action(&mut out.sequences, set);
                let old = artifacts
                    .predictions
                    .iter()
                    .find(|p| p.from == from && p.to == to)
                    .unwrap();
                let old_lambda = old.minimal.map(|k| old.sequences[k].total_action);
                let new_lambda = new_min.map(|k| out.sequences[k].total_action);
                match (old_lambda, new_lambda) {
                    (Some(a), Some(b)) if (a - b).abs() <= 1e-12 => {}
                    (None, None) => {}
                    _ => flips += 1,
                }
                for (sa, sb) in old.sequences.iter().zip(out.sequences.iter()) {
                    if sa.verdict_topological != sb.verdict_topological {
                        flips += 1;
                    }
                }
            }
        }
        if flips > 0 {
            passed = false;
        }
        detail.push_str(&format!(
            "{label}: conj ≤ {max_conj:.1e}, |λ−λ̄| ≤ {max_lambda_diff:.1e}, \
             {relocated} cuts relocated, {flips} verdict/λ changes; "
        ));
    }

    announce(6, "conjugate & cut invariance", passed, &detail);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_7_renormalization_diagnostics() {
    // Synthetic power-law recursion to 1e-10.
    let mut recursion_ok = true;
    for alpha in [C64::new(1.3, 0.0), C64::new(0.4, 0.9)] {
        let c = power_law_coefficients(C64::new(0.7, -0.2), alpha, 12);
        for k in 1..c.len() {
            let expect = -C64::new(3.0 * k as f64 - 1.0, 0.0) / (2.0 * alpha);
            if ((c[k] / c[k - 1]) - expect).norm() > 1e-10 * expect.norm() {
                recursion_ok = false;
            }
        }
    }

    // LZ at ε = 0.1: peak alignment for 4 ≤ k ≤ 8, and γ within 0.1.
    let model = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
    let trace = divergence_profile(
        &model,
        &RenormOptions {
            epsilon: 0.1,
            k_max: 14,
            ..Default::default()
        },
    )
    .unwrap();
    let mut max_offset = 0.0_f64;
    for (i, &k) in trace.k_list.iter().enumerate() {
        if (4..=8).contains(&k) {
            max_offset = max_offset.max(trace.peak_tau[&(0, 1)][i].abs());
        }
    }
    let fit = growth_law_check(&trace, (0, 1), 4, 11).unwrap();
    let gamma_err = (fit.gamma + 1.0 / 3.0).abs();

    let passed = recursion_ok && max_offset <= 0.05 && gamma_err <= 0.1;
    announce(
        7,
        "renormalization diagnostics",
        passed,
        &format!(
            "peak offset ≤ {max_offset:.3} (bound 0.05), γ = {:.3} (err {gamma_err:.3} ≤ 0.1), \
             recursion exact: {recursion_ok}",
            fit.gamma
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_8_integrator_quality() {
    let model = HamiltonianModel::landau_zener(1.0, 1.0).unwrap();
    // Norm drift at the default policy.
    let r = propagate(&model, 0.05, 0, -25.0, 25.0, &StepControl::default()).unwrap();
    let drift_ok = r.norm_drift <= 1e-10;

    // Fourth-order step-halving before the roundoff floor.
    let lnp = |h: f64| {
        let ctrl = StepControl {
            explicit_h: Some(h),
            ..Default::default()
        };
        propagate(&model, 0.2, 0, -8.0, 8.0, &ctrl).unwrap().probabilities[1].ln()
    };
    let a = lnp(0.004);
    let b = lnp(0.002);
    let c = lnp(0.001);
    let ratio = (a - b).abs() / (b - c).abs();
    let order_ok = ratio >= 12.0;

    let passed = drift_ok && order_ok;
    announce(
        8,
        "integrator quality",
        passed,
        &format!(
            "norm drift {:.2e} (≤1e-10), step-halving reduction ×{ratio:.1} (≥12)",
            r.norm_drift
        ),
    );
    assert!(passed);
}
