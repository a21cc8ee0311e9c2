//! Run configuration (TOML) and the run manifest (JSON).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{MissingPolicy, TermSpec};
use crate::error::{RemError, Result};
use crate::fitter::{log_grid, SmoothingPolicy};
use crate::fixture::BikeFixtureConfig;
use crate::fullik::CompareConfig;
use crate::ingest::SeriesTransform;
use crate::scenario::CovariateScenario;
use crate::study::{StudyConfig, StudySetting};

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    /// Shift scale: shifts are exponential with mean ν·t̄.
    #[serde(default = "unit")]
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<CovariateScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<BikeFixtureConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<TermSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            nu: 1.0,
            out_dir: None,
            smoothing: SmoothingConfig::default(),
            simulation: None,
            data: None,
            fixture: None,
            terms: Vec::new(),
            study: None,
            compare: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| RemError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.data.as_mut() {
            d.resolve_paths(base);
        }
        if let Some(out) = cfg.out_dir.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| RemError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(RemError::Config(format!("nu must be positive, got {}", self.nu)));
        }
        if self.workers == 0 {
            return Err(RemError::Config("workers must be at least 1".into()));
        }
        if self.simulation.is_some() && self.data.is_some() {
            return Err(RemError::Config("a run uses either [simulation] or [data], not both".into()));
        }
        self.smoothing.validate()
    }

    pub fn smoothing_policy(&self) -> SmoothingPolicy {
        self.smoothing.policy(self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMode {
    #[default]
    CrossValidated,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub mode: SmoothingMode,
    /// Grid bounds as powers of ten.
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub folds: usize,
    pub sweeps: usize,
    /// Used when `mode = "fixed"`, one per smooth term in order.
    pub lambdas: Vec<f64>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            mode: SmoothingMode::CrossValidated,
            grid_min: -3.0,
            grid_max: 6.0,
            grid_points: 13,
            folds: 10,
            sweeps: 2,
            lambdas: Vec::new(),
        }
    }
}

impl SmoothingConfig {
    fn validate(&self) -> Result<()> {
        match self.mode {
            SmoothingMode::CrossValidated => {
                if self.grid_points < 2 || self.grid_max <= self.grid_min {
                    return Err(RemError::Config("smoothing grid needs two or more points and max > min".into()));
                }
                if self.folds < 2 || self.sweeps == 0 {
                    return Err(RemError::Config("smoothing needs at least 2 folds and 1 sweep".into()));
                }
            }
            SmoothingMode::Fixed => {
                if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                    return Err(RemError::Config("fixed smoothing parameters must be finite and >= 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn policy(&self, seed: u64) -> SmoothingPolicy {
        match self.mode {
            SmoothingMode::Fixed => SmoothingPolicy::Fixed { lambdas: self.lambdas.clone() },
            SmoothingMode::CrossValidated => SmoothingPolicy::CrossValidated {
                grid: log_grid(self.grid_min, self.grid_max, self.grid_points),
                folds: self.folds,
                seed,
                sweeps: self.sweeps,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesConfig {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub transform: SeriesTransform,
}

fn default_error_fraction() -> f64 {
    0.01
}

fn default_gap_hours() -> f64 {
    3.0
}

fn default_true() -> bool {
    true
}

/// Observed rides and their covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub events: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<PathBuf>,
    pub window_start: String,
    pub window_end: String,
    /// Fixed UTC offset of wall-clock stamps, e.g. `-04:00`.
    pub utc_offset: String,
    #[serde(default = "default_error_fraction")]
    pub max_error_fraction: f64,
    #[serde(default = "default_gap_hours")]
    pub max_gap_hours: f64,
    #[serde(default = "default_true")]
    pub drop_self_loops: bool,
    #[serde(default)]
    pub series: Vec<SeriesConfig>,
    /// Name of the derived time-of-day global covariate; empty disables it.
    #[serde(default = "default_tod")]
    pub time_of_day: String,
    #[serde(default)]
    pub missing: MissingPolicy,
}

fn default_tod() -> String {
    "tod".into()
}

impl DataConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.events);
        if let Some(d) = self.distances.as_mut() {
            fix(d);
        }
        for s in &mut self.series {
            fix(&mut s.path);
        }
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.events.clone()];
        v.extend(self.distances.clone());
        v.extend(self.series.iter().map(|s| s.path.clone()));
        v
    }
}

fn default_base_n() -> usize {
    3000
}

fn default_base_p() -> usize {
    15
}

fn default_n_sweep() -> Vec<usize> {
    vec![1000, 3000, 9000]
}

fn default_p_sweep() -> Vec<usize> {
    vec![5, 15, 45]
}

fn default_nu_sweep() -> Vec<f64> {
    vec![0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0]
}

/// One-at-a-time sweeps around a base setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub replications: usize,
    #[serde(default = "default_base_n")]
    pub base_n: usize,
    #[serde(default = "default_base_p")]
    pub base_p: usize,
    #[serde(default = "unit")]
    pub base_nu: f64,
    #[serde(default = "default_n_sweep")]
    pub n: Vec<usize>,
    #[serde(default = "default_p_sweep")]
    pub p: Vec<usize>,
    #[serde(default = "default_nu_sweep")]
    pub nu: Vec<f64>,
}

impl StudySection {
    pub fn to_study(&self, seed: u64, workers: usize, smoothing: SmoothingPolicy) -> StudyConfig {
        let mut settings = Vec::new();
        for &n in &self.n {
            settings.push(StudySetting { label: "n".into(), n, p: self.base_p, nu: self.base_nu });
        }
        for &p in &self.p {
            settings.push(StudySetting { label: "p".into(), n: self.base_n, p, nu: self.base_nu });
        }
        for &nu in &self.nu {
            settings.push(StudySetting { label: "nu".into(), n: self.base_n, p: self.base_p, nu });
        }
        StudyConfig { settings, replications: self.replications, seed, workers, smoothing }
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, shown_as: String) -> Result<Self> {
        Ok(Self { path: shown_as, sha256: sha256_file(path)? })
    }
}

/// Everything needed to rerun a command bit-identically. Deliberately free of
/// wall-clock times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub workers: usize,
    pub nu: f64,
    pub config: FileDigest,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default)]
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn output(&self, name: &str) -> Option<&FileDigest> {
        self.outputs.iter().find(|d| d.path == name)
    }
}
