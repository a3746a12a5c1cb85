//! Experiment configuration: a versioned TOML schema plus plain-text matrix
//! tables for custom Hamiltonian pairs.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;
use thiserror::Error;

use crate::branch::ScanRegion;
use crate::model::{HamiltonianModel, ModelError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported config version {0} (this build understands version 1)")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad matrix table {path}: {reason}")]
    BadMatrix { path: PathBuf, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Model block of the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: String,
    pub dim: Option<usize>,
    pub alpha: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    /// Convenience range "a..b" (half-open), overridden by `seeds`.
    pub seed_range: Option<String>,
    pub delta: Option<f64>,
    pub slope: Option<f64>,
    pub h1_file: Option<PathBuf>,
    pub h2_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "d_re_min")]
    pub re_min: f64,
    #[serde(default = "d_re_max")]
    pub re_max: f64,
    #[serde(default)]
    pub im_min: f64,
    #[serde(default = "d_im_max")]
    pub im_max: f64,
    #[serde(default = "d_nx")]
    pub nx: usize,
    #[serde(default = "d_ny")]
    pub ny: usize,
}

fn d_re_min() -> f64 {
    -6.0
}
fn d_re_max() -> f64 {
    6.0
}
fn d_im_max() -> f64 {
    2.0
}
fn d_nx() -> usize {
    120
}
fn d_ny() -> usize {
    40
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            re_min: d_re_min(),
            re_max: d_re_max(),
            im_min: 0.0,
            im_max: d_im_max(),
            nx: d_nx(),
            ny: d_ny(),
        }
    }
}

impl ScanConfig {
    pub fn region(&self) -> ScanRegion {
        ScanRegion {
            re_min: self.re_min,
            re_max: self.re_max,
            im_min: self.im_min,
            im_max: self.im_max,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationConfig {
    #[serde(default = "d_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "d_tau_i")]
    pub tau_i: f64,
    #[serde(default = "d_tau_f")]
    pub tau_f: f64,
}

fn d_epsilons() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.02, 0.01]
}
fn d_tau_i() -> f64 {
    -25.0
}
fn d_tau_f() -> f64 {
    25.0
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            epsilons: d_epsilons(),
            tau_i: d_tau_i(),
            tau_f: d_tau_f(),
        }
    }
}

/// Module tolerances, all optional with the module defaults.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub candidate_rel_threshold: Option<f64>,
    pub refine_gap_tol: Option<f64>,
    pub min_height: Option<f64>,
    pub trace_step: Option<f64>,
    pub trace_guard: Option<f64>,
    pub action_rel_tol: Option<f64>,
    pub degeneracy_tol: Option<f64>,
    pub phase_bound: Option<f64>,
    pub norm_budget: Option<f64>,
    pub extrapolation_degree: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "d_outdir")]
    pub dir: PathBuf,
    /// Also write the figure-data files during `run`.
    #[serde(default = "d_true")]
    pub figures: bool,
}

fn d_outdir() -> PathBuf {
    PathBuf::from("out")
}
fn d_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: d_outdir(),
            figures: true,
        }
    }
}

/// The whole experiment configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_version")]
    pub version: u32,
    pub model: ModelConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub propagation: PropagationConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn d_version() -> u32 {
    1
}

impl ExperimentConfig {
    pub fn from_str_validated(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate(base_dir)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str_validated(&text, base)
    }

    fn validate(&self, base_dir: &Path) -> Result<(), ConfigError> {
        if self.version != 1 {
            return Err(ConfigError::Version(self.version));
        }
        match self.model.kind.as_str() {
            "goe_interp" => {
                if self.model.dim.is_none() {
                    return Err(ConfigError::Invalid("goe_interp requires `dim`".into()));
                }
                if self.model.alpha.is_none() {
                    return Err(ConfigError::Invalid("goe_interp requires `alpha`".into()));
                }
                if self.seeds()?.is_empty() {
                    return Err(ConfigError::Invalid(
                        "goe_interp requires a non-empty `seeds` list or `seed_range`".into(),
                    ));
                }
            }
            "landau_zener" => {
                if self.model.delta.is_none() {
                    return Err(ConfigError::Invalid("landau_zener requires `delta`".into()));
                }
                if self.model.slope.is_none() {
                    return Err(ConfigError::Invalid("landau_zener requires `slope`".into()));
                }
            }
            "custom_pair" => {
                if self.model.h1_file.is_none() || self.model.h2_file.is_none() {
                    return Err(ConfigError::Invalid(
                        "custom_pair requires `h1_file` and `h2_file`".into(),
                    ));
                }
                if self.model.alpha.is_none() {
                    return Err(ConfigError::Invalid("custom_pair requires `alpha`".into()));
                }
                // Readability checked here so errors surface before a run.
                for f in [&self.model.h1_file, &self.model.h2_file] {
                    let p = base_dir.join(f.as_ref().unwrap());
                    read_matrix_txt(&p)?;
                }
            }
            other => {
                return Err(ConfigError::Invalid(format!("unknown model kind `{other}`")));
            }
        }
        let eps = &self.propagation.epsilons;
        if eps.is_empty() {
            return Err(ConfigError::Invalid("epsilons must be non-empty".into()));
        }
        for w in eps.windows(2) {
            if !(w[1] < w[0]) {
                return Err(ConfigError::Invalid(
                    "epsilons must be strictly descending".into(),
                ));
            }
        }
        if eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(ConfigError::Invalid("epsilons must be positive".into()));
        }
        if !(self.propagation.tau_f > self.propagation.tau_i) {
            return Err(ConfigError::Invalid("tau_f must exceed tau_i".into()));
        }
        let s = &self.scan;
        if !(s.re_max > s.re_min) || !(s.im_max > s.im_min) || s.im_min < 0.0 {
            return Err(ConfigError::Invalid(
                "scan region must satisfy re_min < re_max, 0 <= im_min < im_max".into(),
            ));
        }
        Ok(())
    }

    /// Seed list, from `seeds` or the `seed_range` convenience.
    pub fn seeds(&self) -> Result<Vec<u64>, ConfigError> {
        if let Some(s) = &self.model.seeds {
            return Ok(s.clone());
        }
        if let Some(r) = &self.model.seed_range {
            return parse_seed_range(r);
        }
        Ok(vec![])
    }

    /// Construct the model for one seed (seed ignored by non-GOE kinds).
    pub fn build_model(&self, seed: u64, base_dir: &Path) -> Result<HamiltonianModel, ConfigError> {
        match self.model.kind.as_str() {
            "goe_interp" => Ok(HamiltonianModel::goe_interp(
                self.model.dim.unwrap(),
                self.model.alpha.unwrap(),
                seed,
            )?),
            "landau_zener" => Ok(HamiltonianModel::landau_zener(
                self.model.delta.unwrap(),
                self.model.slope.unwrap(),
            )?),
            "custom_pair" => {
                let h1 = read_matrix_txt(&base_dir.join(self.model.h1_file.as_ref().unwrap()))?;
                let h2 = read_matrix_txt(&base_dir.join(self.model.h2_file.as_ref().unwrap()))?;
                Ok(HamiltonianModel::custom_pair(h1, h2, self.model.alpha.unwrap())?)
            }
            _ => unreachable!("validated"),
        }
    }
}

/// Parse "a..b" (half-open) into a seed list.
pub fn parse_seed_range(text: &str) -> Result<Vec<u64>, ConfigError> {
    let parts: Vec<&str> = text.split("..").collect();
    if parts.len() != 2 {
        return Err(ConfigError::Invalid(format!(
            "seed range `{text}` must look like `a..b`"
        )));
    }
    let a: u64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| ConfigError::Invalid(format!("bad seed range start in `{text}`")))?;
    let b: u64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| ConfigError::Invalid(format!("bad seed range end in `{text}`")))?;
    if b <= a {
        return Err(ConfigError::Invalid(format!(
            "seed range `{text}` is empty"
        )));
    }
    Ok((a..b).collect())
}

/// Read a plain-text numeric table: one matrix row per line, whitespace
/// separated, full-precision decimal.
pub fn read_matrix_txt(path: &Path) -> Result<DMatrix<f64>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let row = row.map_err(|e| ConfigError::BadMatrix {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ConfigError::BadMatrix {
            path: path.to_path_buf(),
            reason: "no rows".into(),
        });
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ConfigError::BadMatrix {
            path: path.to_path_buf(),
            reason: "ragged rows".into(),
        });
    }
    let nrows = rows.len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Write a matrix as a plain-text numeric table (row-major, shortest
/// round-trip decimal).
pub fn write_matrix_txt(path: &Path, m: &DMatrix<f64>) -> Result<(), ConfigError> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}
