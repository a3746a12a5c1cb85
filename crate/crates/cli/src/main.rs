//! Batch harness for the transition laboratory.
//!
//! Subcommands mirror the pipeline stages; `run` does everything end to end.
//! All take `--config <path>` (TOML) and `--out <dir>`. The output directory
//! can also come from STOKESLAB_OUT, and STOKESLAB_THREADS caps the worker
//! pool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stokeslab::config::{parse_seed_range, ExperimentConfig};
use stokeslab::harness::{
    adiabatic_pipeline, compare_seed, emit_figure_data, empirical_pipeline, resolve_options,
    run_experiment,
};
use stokeslab::renorm::{divergence_profile, RenormOptions};

#[derive(Parser)]
#[command(name = "stokeslab", version, about = "Non-adiabatic transition laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides config and STOKESLAB_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed range "a..b" overriding the config seed list.
    #[arg(long)]
    seed_range: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Full experiment: both pipelines, comparison tables, figure data.
    Run(Common),
    /// Locate and refine branch points; write the branch-point table.
    Branchpoints(Common),
    /// Trace Stokes lines; write polylines and the index.
    Stokes(Common),
    /// Enumerate transition sequences and apply the selection rules.
    Sequences(Common),
    /// Integrate the Schrödinger equation over the ε list and extrapolate.
    Propagate(Common),
    /// Renormalization divergence diagnostics.
    Renorm {
        #[command(flatten)]
        common: Common,
        /// Adiabatic parameter for the iteration (default: largest ε in the
        /// config).
        #[arg(long)]
        epsilon: Option<f64>,
        /// Iteration depth.
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        /// Comma-separated level list to project out (1-based).
        #[arg(long)]
        subspace: Option<String>,
    },
    /// Emit level-curve and diagram data without propagating.
    Figures(Common),
}

fn main() -> ExitCode {
    match run() {
        Ok(errors) if errors == 0 => ExitCode::SUCCESS,
        Ok(errors) => {
            eprintln!("completed with {errors} module-level error(s)");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf, PathBuf)> {
    let mut config = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(range) = &common.seed_range {
        let seeds = parse_seed_range(range)?;
        config.model.seeds = Some(seeds);
        config.model.seed_range = None;
    }
    let base = common
        .config
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let out = common
        .out
        .clone()
        .or_else(|| std::env::var_os("STOKESLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| config.output.dir.clone());
    Ok((config, base, out))
}

fn seeds_of(config: &ExperimentConfig) -> Result<Vec<u64>> {
    let s = config.seeds()?;
    Ok(if s.is_empty() { vec![0] } else { s })
}

fn init_threads() {
    if let Ok(v) = std::env::var("STOKESLAB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn run() -> Result<usize> {
    init_threads();
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(common) => {
            let (config, base, out) = load(common)?;
            let report = run_experiment(&config, &base, &out)?;
            println!(
                "rows: {} compared, {} excluded of {}; mean fractional difference {:.4}; \
                 rule disagreements {}; module errors {}",
                report.rows_compared,
                report.rows_excluded,
                report.rows_total,
                report.mean_frac_diff,
                report.rule_disagreements,
                report.module_errors
            );
            if report.rule_disagreements > 0 {
                println!(
                    "NOTE: {} sequence(s) where the topological and ascending-Re rules \
                     disagree — a research-grade finding, see sequences.csv",
                    report.rule_disagreements
                );
            }
            println!("artifacts in {}", out.display());
            Ok(report.module_errors)
        }
        Command::Branchpoints(common) | Command::Stokes(common) | Command::Sequences(common)
        | Command::Figures(common) => {
            let (config, base, out) = load(common)?;
            let opts = resolve_options(&config.tolerances);
            let region = config.scan.region();
            let mut errors = 0usize;
            for seed in seeds_of(&config)? {
                let model = config.build_model(seed, &base)?;
                let seed_dir = out.join(format!("seed_{seed:04}"));
                std::fs::create_dir_all(&seed_dir)?;
                match adiabatic_pipeline(&model, seed, &region, &opts) {
                    Ok(artifacts) => {
                        // The stage subcommands share the adiabatic writer;
                        // each one's primary table is part of the set.
                        let empirical = stokeslab::harness::EmpiricalArtifacts {
                            seed,
                            sweep: Default::default(),
                            extrapolated: Default::default(),
                            propagation_failures: Vec::new(),
                            max_norm_drift: 0.0,
                        };
                        let result = compare_seed(artifacts, empirical);
                        stokeslab::harness::write_adiabatic_artifacts(
                            &seed_dir, &model, &config, &result,
                        )?;
                        if matches!(cli.command, Command::Figures(_)) {
                            emit_figure_data(&seed_dir, &model, &config, &result.adiabatic)?;
                        }
                        println!(
                            "seed {seed}: {} branch points, {} descending lines",
                            result.adiabatic.set.len(),
                            result.adiabatic.descending.len()
                        );
                    }
                    Err(e) => {
                        eprintln!("seed {seed}: {e}");
                        errors += 1;
                    }
                }
            }
            Ok(errors)
        }
        Command::Propagate(common) => {
            let (config, base, out) = load(common)?;
            let opts = resolve_options(&config.tolerances);
            let window = (config.propagation.tau_i, config.propagation.tau_f);
            let mut errors = 0usize;
            for seed in seeds_of(&config)? {
                let model = config.build_model(seed, &base)?;
                let seed_dir = out.join(format!("seed_{seed:04}"));
                std::fs::create_dir_all(&seed_dir)?;
                let empirical = empirical_pipeline(
                    &model,
                    seed,
                    &config.propagation.epsilons,
                    window,
                    &opts,
                );
                errors += empirical.propagation_failures.len();
                stokeslab::harness::write_empirical_artifacts(&seed_dir, &empirical)?;
                println!(
                    "seed {seed}: {} sweep rows, max norm drift {:.2e}",
                    empirical.sweep.len(),
                    empirical.max_norm_drift
                );
            }
            Ok(errors)
        }
        Command::Renorm {
            common,
            epsilon,
            k_max,
            subspace,
        } => {
            let (config, base, out) = load(common)?;
            let eps = epsilon.unwrap_or(config.propagation.epsilons[0]);
            let subspace_p: Vec<usize> = match subspace {
                Some(s) => s
                    .split(',')
                    .map(|x| -> Result<usize> {
                        let v: usize = x.trim().parse().context("bad subspace level")?;
                        if v == 0 {
                            bail!("subspace levels are 1-based");
                        }
                        Ok(v - 1)
                    })
                    .collect::<Result<_>>()?,
                None => Vec::new(),
            };
            let mut errors = 0usize;
            for seed in seeds_of(&config)? {
                let model = config.build_model(seed, &base)?;
                let seed_dir = out.join(format!("seed_{seed:04}"));
                std::fs::create_dir_all(&seed_dir)?;
                let opts = RenormOptions {
                    epsilon: eps,
                    k_max: *k_max,
                    subspace_p: subspace_p.clone(),
                    ..Default::default()
                };
                match divergence_profile(&model, &opts) {
                    Ok(trace) => {
                        let path = seed_dir.join("renorm_profiles.csv");
                        let mut text = String::from("k,n,m,tau,magnitude\n");
                        for (pair, profiles) in &trace.profiles {
                            for (i, profile) in profiles.iter().enumerate() {
                                let k = trace.k_list[i];
                                for (j, v) in profile.iter().enumerate() {
                                    use std::fmt::Write as _;
                                    let _ = writeln!(
                                        text,
                                        "{},{},{},{},{}",
                                        k,
                                        pair.0 + 1,
                                        pair.1 + 1,
                                        trace.grid_points[j],
                                        v
                                    );
                                }
                            }
                        }
                        std::fs::write(&path, text)?;
                        println!(
                            "seed {seed}: k* = {} (ε = {eps}), profiles in {}",
                            trace.k_star,
                            path.display()
                        );
                    }
                    Err(e) => {
                        eprintln!("seed {seed}: {e}");
                        errors += 1;
                    }
                }
            }
            Ok(errors)
        }
    }
}
