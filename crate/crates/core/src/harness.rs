//! End-to-end experiment orchestration: both pipelines per seed, comparison
//! statistics, and plain-text exports.
//!
//! Per seed: build model → locate branch points → trace Stokes lines →
//! integrate actions → enumerate sequences and apply both selection rules →
//! propagate over the ε list for every initial level → extrapolate the
//! empirical exponents → compare λ_theory against λ_empirical per ordered
//! level pair. Everything is written as CSV plus a human-readable manifest;
//! outputs are deterministic for a fixed config (the seeded RNG is the only
//! entropy source, and aggregation is a sorted merge).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::action::{action_table, ActionError, ActionOptions, ActionTable};
use crate::branch::{
    locate, BranchError, BranchPointSet, RefineOptions, ScanOptions, ScanRegion,
};
use crate::config::{ConfigError, ExperimentConfig, ToleranceConfig};
use crate::model::HamiltonianModel;
use crate::propagate::{
    empirical_actions, extrapolate, propagate, EmpiricalAction, ExtrapolationMethod,
    PropagateError, StepControl,
};
use crate::sequence::{
    apply_topological_rule, empirical_rule, enumerate, minimal_action, TransitionSequence,
    Verdict,
};
use crate::spectral::SpectralError;
use crate::stokes::{
    branch_cut, polyline_intersections, trace_all, BranchCut, LineKind, StokesError,
    StokesLine, TraceOptions,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: {source}")]
    Branch { seed: u64, source: BranchError },
    #[error("seed {seed}: {source}")]
    Stokes { seed: u64, source: StokesError },
    #[error("seed {seed}: {source}")]
    Action { seed: u64, source: ActionError },
    #[error("seed {seed}: {source}")]
    Spectral { seed: u64, source: SpectralError },
    #[error("missing upstream artifact: {0}")]
    MissingArtifact(&'static str),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Why a comparison row carries no number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExclusionReason {
    /// No monotone chain exists (some pair has no branch point).
    NoChain,
    /// Chains exist but none is allowed by the rule.
    NoAllowedSequence,
    /// The empirical sweep had no usable (unflagged) points.
    EmpiricalUnusable,
    /// A propagation failed outright.
    PropagationError,
}

impl ExclusionReason {
    pub fn code(self) -> &'static str {
        match self {
            ExclusionReason::NoChain => "no_chain",
            ExclusionReason::NoAllowedSequence => "no_allowed_sequence",
            ExclusionReason::EmpiricalUnusable => "empirical_unusable",
            ExclusionReason::PropagationError => "propagation_error",
        }
    }
}

/// One ordered level pair of one seed.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub seed: u64,
    pub from: usize,
    pub to: usize,
    pub lambda_theory: Option<f64>,
    /// Chain of the minimal sequence, formatted "(i,j)@re;(k,l)@re".
    pub chain: String,
    pub lambda_empirical: Option<f64>,
    pub method: Option<ExtrapolationMethod>,
    pub frac_diff: Option<f64>,
    pub excluded: Option<ExclusionReason>,
}

/// Verdicts and sequences for one ordered pair.
#[derive(Debug, Clone)]
pub struct PairPrediction {
    pub from: usize,
    pub to: usize,
    pub sequences: Vec<TransitionSequence>,
    pub minimal: Option<usize>,
    pub missing_pairs: Vec<(usize, usize)>,
    /// Sequences whose topological and empirical verdicts differ.
    pub rule_disagreements: Vec<usize>,
}

/// Everything the adiabatic side produces for one seed.
#[derive(Debug, Clone)]
pub struct AdiabaticArtifacts {
    pub seed: u64,
    pub set: BranchPointSet,
    pub actions: ActionTable,
    /// All traced Stokes rays (three per branch point).
    pub stokes_lines: Vec<StokesLine>,
    /// Descending (axis-crossing) line per branch-point index.
    pub descending: BTreeMap<usize, StokesLine>,
    pub cuts: BTreeMap<usize, BranchCut>,
    pub predictions: Vec<PairPrediction>,
    /// Pairwise crossings between descending Stokes lines (the open
    /// ambiguity surfaced as a diagnostic).
    pub stokes_crossing_warnings: usize,
    pub region_clipped: Option<f64>,
}

/// The empirical side for one seed: λ(ε) sweeps and extrapolations.
#[derive(Debug, Clone)]
pub struct EmpiricalArtifacts {
    pub seed: u64,
    /// (n, m, ε) → empirical action with flag.
    pub sweep: BTreeMap<(usize, usize), Vec<(f64, EmpiricalAction)>>,
    /// (n, m) → extrapolated λ.
    pub extrapolated: BTreeMap<(usize, usize), Result<(f64, ExtrapolationMethod, f64), ExclusionReason>>,
    pub propagation_failures: Vec<(usize, f64, String)>,
    pub max_norm_drift: f64,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub adiabatic: AdiabaticArtifacts,
    pub empirical: EmpiricalArtifacts,
    pub rows: Vec<ComparisonRow>,
}

/// Aggregate over all seeds.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub rows_total: usize,
    pub rows_compared: usize,
    pub rows_excluded: usize,
    pub mean_frac_diff: f64,
    pub rule_disagreements: usize,
    pub module_errors: usize,
}

impl ComparisonReport {
    fn from_rows(rows: Vec<ComparisonRow>, rule_disagreements: usize, module_errors: usize) -> Self {
        let rows_total = rows.len();
        let compared: Vec<f64> = rows.iter().filter_map(|r| r.frac_diff).collect();
        let rows_compared = compared.len();
        let mean = if compared.is_empty() {
            f64::NAN
        } else {
            compared.iter().sum::<f64>() / compared.len() as f64
        };
        Self {
            rows_total,
            rows_compared,
            rows_excluded: rows_total - rows_compared,
            mean_frac_diff: mean,
            rule_disagreements,
            module_errors,
            rows,
        }
    }
}

/// Resolved per-module options from the config tolerances.
pub struct ResolvedOptions {
    pub scan: ScanOptions,
    pub trace: TraceOptions,
    pub action: ActionOptions,
    pub step: StepControl,
    pub extrapolation_degree: usize,
}

pub fn resolve_options(tol: &ToleranceConfig) -> ResolvedOptions {
    let mut scan = ScanOptions::default();
    if let Some(v) = tol.candidate_rel_threshold {
        scan.candidate_rel_threshold = v;
    }
    let mut refine = RefineOptions::default();
    if let Some(v) = tol.refine_gap_tol {
        refine.gap_tol_rel = v;
    }
    if let Some(v) = tol.min_height {
        refine.min_height = v;
    }
    scan.refine = refine;
    let mut trace = TraceOptions::default();
    if let Some(v) = tol.trace_step {
        trace.step = v;
    }
    if let Some(v) = tol.trace_guard {
        trace.guard = v;
    }
    let mut action = ActionOptions::default();
    if let Some(v) = tol.action_rel_tol {
        action.rel_tol = v;
    }
    let mut step = StepControl::default();
    if let Some(v) = tol.phase_bound {
        step.phase_bound = v;
    }
    if let Some(v) = tol.norm_budget {
        step.norm_budget = v;
    }
    ResolvedOptions {
        scan,
        trace,
        action,
        step,
        extrapolation_degree: tol.extrapolation_degree.unwrap_or(2),
    }
}

/// The adiabatic pipeline for one model: branch points → Stokes lines →
/// actions → sequence verdicts and minimal selections for every ordered
/// pair.
pub fn adiabatic_pipeline(
    model: &HamiltonianModel,
    seed: u64,
    region: &ScanRegion,
    opts: &ResolvedOptions,
) -> Result<AdiabaticArtifacts, HarnessError> {
    let scan_out = crate::branch::scan_grid(model, region, &opts.scan)
        .map_err(|source| HarnessError::Branch { seed, source })?;
    let set = locate(model, region, &opts.scan)
        .map_err(|source| HarnessError::Branch { seed, source })?;
    let actions = action_table(model, &set, &opts.action)
        .map_err(|source| HarnessError::Action { seed, source })?;

    // Trace all rays for every point; keep the descending line per point.
    let mut trace_opts = opts.trace.clone();
    trace_opts.region = (
        region.re_min - 2.0,
        region.re_max + 2.0,
        -1.0,
        region.im_max + 2.0,
    );
    let all_positions: Vec<crate::C64> = set.points.iter().map(|p| p.tau_star).collect();
    let mut stokes_lines = Vec::new();
    let mut descending: BTreeMap<usize, StokesLine> = BTreeMap::new();
    for (k, p) in set.points.iter().enumerate() {
        let mut others = all_positions.clone();
        others.remove(k);
        let mut t = trace_opts.clone();
        t.other_singularities = others;
        let lines = trace_all(model, p, LineKind::Stokes, &t)
            .map_err(|source| HarnessError::Stokes { seed, source })?;
        let mut best: Option<StokesLine> = None;
        for line in &lines {
            if line.real_crossing.is_some() {
                best = match best {
                    None => Some(line.clone()),
                    Some(b) if line.arclength < b.arclength => Some(line.clone()),
                    Some(b) => Some(b),
                };
            }
        }
        if let Some(b) = best {
            descending.insert(k, b);
        }
        stokes_lines.extend(lines);
    }

    let cuts: BTreeMap<usize, BranchCut> = set
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| (k, branch_cut(p)))
        .collect();

    // Diagnostic: crossings between distinct descending Stokes lines (the
    // configuration where path-dependent verdicts become conceivable).
    let mut stokes_crossing_warnings = 0;
    let desc: Vec<&StokesLine> = descending.values().collect();
    for i in 0..desc.len() {
        for j in (i + 1)..desc.len() {
            stokes_crossing_warnings +=
                polyline_intersections(&desc[i].points, &desc[j].points, 4).len();
        }
    }

    // Sequences and verdicts for every ordered pair.
    let n = model.dim();
    let mut predictions = Vec::new();
    for from in 0..n {
        for to in 0..n {
            if from == to {
                continue;
            }
            let mut out = enumerate(&set, &actions.lambda, from, to, n);
            let mut disagreements = Vec::new();
            for (si, s) in out.sequences.iter_mut().enumerate() {
                let vt = apply_topological_rule(s, &set, &descending, &cuts);
                let ve = empirical_rule(s, &set);
                s.verdict_topological = Some(vt);
                s.verdict_empirical = Some(ve);
                if vt != ve {
                    disagreements.push(si);
                }
            }
            let minimal = minimal_action(&mut out.sequences, &set);
            predictions.push(PairPrediction {
                from,
                to,
                sequences: out.sequences,
                minimal,
                missing_pairs: out.missing_pairs,
                rule_disagreements: disagreements,
            });
        }
    }

    Ok(AdiabaticArtifacts {
        seed,
        set,
        actions,
        stokes_lines,
        descending,
        cuts,
        predictions,
        stokes_crossing_warnings,
        region_clipped: scan_out.region_clipped,
    })
}

/// The empirical pipeline for one model: the full ε sweep for every initial
/// level, then per-pair extrapolation. Propagations fan out in parallel.
pub fn empirical_pipeline(
    model: &HamiltonianModel,
    seed: u64,
    epsilons: &[f64],
    window: (f64, f64),
    opts: &ResolvedOptions,
) -> EmpiricalArtifacts {
    let n = model.dim();
    let jobs: Vec<(usize, f64)> = (0..n)
        .flat_map(|lvl| epsilons.iter().map(move |&e| (lvl, e)))
        .collect();
    let runs = crate::map_indexed(jobs.len(), |k| {
        let (lvl, eps) = jobs[k];
        propagate(model, eps, lvl, window.0, window.1, &opts.step)
    });

    let mut sweep: BTreeMap<(usize, usize), Vec<(f64, EmpiricalAction)>> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut max_norm_drift = 0.0_f64;
    for (k, run) in runs.into_iter().enumerate() {
        let (lvl, eps) = jobs[k];
        match run {
            Ok(r) => {
                max_norm_drift = max_norm_drift.max(r.norm_drift);
                for (m, act) in empirical_actions(&r) {
                    sweep.entry((lvl, m)).or_default().push((eps, act));
                }
            }
            Err(e) => failures.push((lvl, eps, e.to_string())),
        }
    }

    let mut extrapolated = BTreeMap::new();
    for from in 0..n {
        for to in 0..n {
            if from == to {
                continue;
            }
            let entry = match sweep.get(&(from, to)) {
                Some(points) => match extrapolate(points, opts.extrapolation_degree) {
                    Ok(x) => Ok((x.lambda_limit, x.method, x.residual)),
                    Err(PropagateError::InsufficientData { .. }) => {
                        Err(ExclusionReason::EmpiricalUnusable)
                    }
                    Err(_) => Err(ExclusionReason::PropagationError),
                },
                None => Err(ExclusionReason::PropagationError),
            };
            extrapolated.insert((from, to), entry);
        }
    }

    EmpiricalArtifacts {
        seed,
        sweep,
        extrapolated,
        propagation_failures: failures,
        max_norm_drift,
    }
}

fn chain_string(seq: &TransitionSequence, set: &BranchPointSet) -> String {
    if seq.chain.is_empty() {
        return String::from("-");
    }
    seq.chain
        .iter()
        .map(|&b| {
            let p = &set.points[b];
            format!(
                "({},{})@{}",
                p.levels.0 + 1,
                p.levels.1 + 1,
                p.tau_star.re
            )
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Join the two pipelines into comparison rows for one seed.
pub fn compare_seed(
    adiabatic: AdiabaticArtifacts,
    empirical: EmpiricalArtifacts,
) -> SeedResult {
    let mut rows = Vec::new();
    for pred in &adiabatic.predictions {
        let key = (pred.from, pred.to);
        let (lambda_theory, chain, theory_excl) = match pred.minimal {
            Some(k) => {
                let s = &pred.sequences[k];
                (
                    Some(s.total_action),
                    chain_string(s, &adiabatic.set),
                    None,
                )
            }
            None => {
                let reason = if pred.sequences.is_empty() {
                    ExclusionReason::NoChain
                } else {
                    ExclusionReason::NoAllowedSequence
                };
                (None, String::from("-"), Some(reason))
            }
        };
        let (lambda_empirical, method, emp_excl) = match empirical.extrapolated.get(&key) {
            Some(Ok((l, m, _res))) => (Some(*l), Some(*m), None),
            Some(Err(r)) => (None, None, Some(*r)),
            None => (None, None, Some(ExclusionReason::PropagationError)),
        };
        let excluded = theory_excl.or(emp_excl);
        let frac_diff = match (lambda_theory, lambda_empirical, excluded) {
            (Some(t), Some(e), None) if t > 0.0 => Some((t - e).abs() / t),
            _ => None,
        };
        rows.push(ComparisonRow {
            seed: adiabatic.seed,
            from: pred.from,
            to: pred.to,
            lambda_theory,
            chain,
            lambda_empirical,
            method,
            frac_diff,
            excluded,
        });
    }
    SeedResult {
        adiabatic,
        empirical,
        rows,
    }
}

/// Run the full experiment for every seed in the config and write all
/// artifacts under `out_dir`. Returns the aggregate report.
pub fn run_experiment(
    config: &ExperimentConfig,
    base_dir: &Path,
    out_dir: &Path,
) -> Result<ComparisonReport, HarnessError> {
    let t0 = std::time::Instant::now();
    let seeds = {
        let s = config.seeds()?;
        if s.is_empty() {
            vec![0u64]
        } else {
            s
        }
    };
    let opts = resolve_options(&config.tolerances);
    let region = config.scan.region();
    let window = (config.propagation.tau_i, config.propagation.tau_f);

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut all_rows = Vec::new();
    let mut disagreements = 0usize;
    let mut module_errors = 0usize;
    let mut timing = String::new();
    for &seed in &seeds {
        let ts = std::time::Instant::now();
        let model = config.build_model(seed, base_dir)?;
        let result = match adiabatic_pipeline(&model, seed, &region, &opts) {
            Ok(adiabatic) => {
                let empirical = empirical_pipeline(
                    &model,
                    seed,
                    &config.propagation.epsilons,
                    window,
                    &opts,
                );
                module_errors += empirical.propagation_failures.len();
                compare_seed(adiabatic, empirical)
            }
            Err(e) => {
                // A fully failed seed aborts only that seed.
                module_errors += 1;
                let _ = writeln!(timing, "seed {seed}: FAILED: {e}");
                continue;
            }
        };
        disagreements += result
            .adiabatic
            .predictions
            .iter()
            .map(|p| p.rule_disagreements.len())
            .sum::<usize>();
        let seed_dir = out_dir.join(format!("seed_{seed:04}"));
        write_seed_artifacts(&seed_dir, &model, config, &result)?;
        all_rows.extend(result.rows);
        let _ = writeln!(timing, "seed {seed}: {:.2}s", ts.elapsed().as_secs_f64());
    }

    all_rows.sort_by_key(|r| (r.seed, r.from, r.to));
    let report = ComparisonReport::from_rows(all_rows, disagreements, module_errors);
    write_aggregate(out_dir, config, &report)?;

    let manifest = out_dir.join("manifest.txt");
    let mut text = String::new();
    let _ = writeln!(text, "stokeslab run manifest");
    let _ = writeln!(text, "version: {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "config: {config:#?}");
    let _ = writeln!(text, "timings:\n{timing}");
    let _ = writeln!(text, "total: {:.2}s", t0.elapsed().as_secs_f64());
    std::fs::write(&manifest, text).map_err(io_err(&manifest))?;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::from(""),
    }
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), HarnessError> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Level-curve samples over the scan's Re range: the data behind the
/// energy-level figures.
pub fn level_curves(
    model: &HamiltonianModel,
    re_min: f64,
    re_max: f64,
    samples: usize,
) -> Vec<(f64, Vec<f64>)> {
    (0..samples)
        .map(|k| {
            let tau = re_min + (re_max - re_min) * k as f64 / (samples - 1) as f64;
            let mut e: Vec<f64> = model
                .eval_real(tau)
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .collect();
            e.sort_by(f64::total_cmp);
            (tau, e)
        })
        .collect()
}

fn write_seed_artifacts(
    dir: &Path,
    model: &HamiltonianModel,
    config: &ExperimentConfig,
    result: &SeedResult,
) -> Result<(), HarnessError> {
    write_adiabatic_artifacts(dir, model, config, result)?;
    write_empirical_artifacts(dir, &result.empirical)?;
    if config.output.figures {
        emit_figure_data(dir, model, config, &result.adiabatic)?;
    }
    Ok(())
}

/// Write the adiabatic-side tables: branch points, Stokes lines, level
/// curves, sequences, and the comparison skeleton.
pub fn write_adiabatic_artifacts(
    dir: &Path,
    model: &HamiltonianModel,
    config: &ExperimentConfig,
    result: &SeedResult,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let a = &result.adiabatic;

    // The model's constant matrices, as importable plain-text tables
    // (regression fixtures for the custom-pair kind).
    crate::config::write_matrix_txt(&dir.join("h1.txt"), model.m1())?;
    crate::config::write_matrix_txt(&dir.join("h2.txt"), model.m2())?;

    // Branch-point table (levels are 1-based in exports).
    let rows: Vec<String> = a
        .set
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            format!(
                "{},{},{},{},{}",
                p.levels.0 + 1,
                p.levels.1 + 1,
                p.tau_star.re,
                p.tau_star.im,
                a.actions.lambda[k]
            )
        })
        .collect();
    write_csv(&dir.join("branch_points.csv"), "i,j,re_tau,im_tau,lambda", &rows)?;

    // Stokes polylines plus an index mapping lines to branch points.
    let mut index_rows = Vec::new();
    let mut line_rows = Vec::new();
    for (id, line) in a.stokes_lines.iter().enumerate() {
        index_rows.push(format!(
            "{},{},{},{},{},{},{},{},{}",
            id,
            line.levels.0 + 1,
            line.levels.1 + 1,
            line.bp_tau.re,
            line.bp_tau.im,
            match line.kind {
                LineKind::Stokes => "stokes",
                LineKind::AntiStokes => "anti_stokes",
            },
            line.ray,
            fmt_opt(line.real_crossing),
            line.phase_drift
        ));
        for p in &line.points {
            line_rows.push(format!("{},{},{}", id, p.re, p.im));
        }
    }
    write_csv(
        &dir.join("stokes_index.csv"),
        "line_id,i,j,bp_re,bp_im,kind,ray,crossing_re,phase_drift",
        &index_rows,
    )?;
    write_csv(&dir.join("stokes_lines.csv"), "line_id,re_tau,im_tau", &line_rows)?;

    // Level curves over the scan window.
    let curves = level_curves(model, config.scan.re_min, config.scan.re_max, 601);
    let n = model.dim();
    let header = {
        let mut h = String::from("tau");
        for i in 1..=n {
            let _ = write!(h, ",e{i}");
        }
        h
    };
    let rows: Vec<String> = curves
        .iter()
        .map(|(tau, es)| {
            let mut r = format!("{tau}");
            for v in es {
                let _ = write!(r, ",{v}");
            }
            r
        })
        .collect();
    write_csv(&dir.join("level_curves.csv"), &header, &rows)?;

    // Sequence table.
    let mut rows = Vec::new();
    for pred in &a.predictions {
        for s in &pred.sequences {
            let verdict = |v: Option<Verdict>| match v {
                Some(Verdict::Allowed) => "allowed",
                Some(Verdict::Forbidden) => "forbidden",
                Some(Verdict::Indeterminate) => "indeterminate",
                None => "",
            };
            rows.push(format!(
                "{},{},\"{}\",{},{},{},{}",
                pred.from + 1,
                pred.to + 1,
                chain_string(s, &a.set),
                s.total_action,
                verdict(s.verdict_topological),
                verdict(s.verdict_empirical),
                s.is_minimal
            ));
        }
    }
    write_csv(
        &dir.join("sequences.csv"),
        "n,m,chain,lambda_theory,verdict_topological,verdict_empirical,is_minimal",
        &rows,
    )?;

    // Comparison rows.
    let rows: Vec<String> = result
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},\"{}\",{},{},{}",
                r.from + 1,
                r.to + 1,
                fmt_opt(r.lambda_theory),
                r.chain,
                fmt_opt(r.lambda_empirical),
                fmt_opt(r.frac_diff),
                r.excluded.map(|x| x.code()).unwrap_or("")
            )
        })
        .collect();
    write_csv(
        &dir.join("comparison.csv"),
        "n,m,lambda_theory,chain,lambda_empirical,frac_diff,status",
        &rows,
    )?;
    Ok(())
}

/// Write the empirical-side tables: the ε sweep and the extrapolations.
pub fn write_empirical_artifacts(
    dir: &Path,
    e: &EmpiricalArtifacts,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut rows = Vec::new();
    for ((from, to), points) in &e.sweep {
        for (eps, act) in points {
            rows.push(format!(
                "{},{},{},{},{}",
                from + 1,
                to + 1,
                eps,
                fmt_opt(act.lambda),
                act.flagged
            ));
        }
    }
    write_csv(&dir.join("empirical.csv"), "n,m,epsilon,lambda,flagged", &rows)?;

    let mut rows = Vec::new();
    for ((from, to), entry) in &e.extrapolated {
        match entry {
            Ok((l, m, res)) => rows.push(format!(
                "{},{},{},{},{}",
                from + 1,
                to + 1,
                l,
                match m {
                    ExtrapolationMethod::Polynomial => "polynomial",
                    ExtrapolationMethod::SmallestReliable => "smallest-reliable",
                },
                res
            )),
            Err(r) => rows.push(format!("{},{},,{},", from + 1, to + 1, r.code())),
        }
    }
    write_csv(
        &dir.join("extrapolated.csv"),
        "n,m,lambda_limit,method,residual",
        &rows,
    )?;
    Ok(())
}

/// Figure data: level curves (already written per seed) plus the
/// branch-point/Stokes-crossing diagram, each crossing labeled by its level
/// pair.
pub fn emit_figure_data(
    dir: &Path,
    _model: &HamiltonianModel,
    _config: &ExperimentConfig,
    a: &AdiabaticArtifacts,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut rows = Vec::new();
    for (k, p) in a.set.points.iter().enumerate() {
        let crossing = a
            .descending
            .get(&k)
            .and_then(|l| l.real_crossing)
            .map(|c| format!("{c}"))
            .unwrap_or_default();
        rows.push(format!(
            "{},{},{},{},{}",
            p.levels.0 + 1,
            p.levels.1 + 1,
            p.tau_star.re,
            p.tau_star.im,
            crossing
        ));
    }
    write_csv(&dir.join("diagram.csv"), "i,j,re_tau,im_tau,crossing_re", &rows)
}

fn write_aggregate(
    out_dir: &Path,
    _config: &ExperimentConfig,
    report: &ComparisonReport,
) -> Result<(), HarnessError> {
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.seed,
                r.from + 1,
                r.to + 1,
                fmt_opt(r.lambda_theory),
                fmt_opt(r.lambda_empirical),
                fmt_opt(r.frac_diff),
                r.excluded.map(|x| x.code()).unwrap_or("")
            )
        })
        .collect();
    write_csv(
        &out_dir.join("report.csv"),
        "seed,n,m,lambda_theory,lambda_empirical,frac_diff,status",
        &rows,
    )?;

    let summary = vec![format!(
        "{},{},{},{},{},{}",
        report.rows_total,
        report.rows_compared,
        report.rows_excluded,
        report.mean_frac_diff,
        report.rule_disagreements,
        report.module_errors
    )];
    write_csv(
        &out_dir.join("summary.csv"),
        "rows_total,rows_compared,rows_excluded,mean_frac_diff,rule_disagreements,module_errors",
        &summary,
    )?;
    Ok(())
}
