//! JSON run configuration. Every section has defaults; unknown keys are
//! rejected. Command-line flags override the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use whittle_core::config::ModelSpec;
use whittle_core::model::{ExtReal, InitialDistribution, Side};
use whittle_core::pcl::PclTolerances;

pub const CONFIG_SCHEMA: &str = "whittle.config/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: String,
    pub model: ModelSpec,
    /// Number of uniform grid points over the state interval.
    pub grid: usize,
    /// Certificate target for index values.
    pub index_tol: f64,
    pub tolerances: PclTolerances,
    pub metrics: MetricsConfig,
    pub frontier: FrontierConfig,
    pub rmabp: RmabpConfig,
    pub seed: u64,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA.into(),
            model: ModelSpec::default(),
            grid: 201,
            index_tol: 1e-9,
            tolerances: PclTolerances::default(),
            metrics: MetricsConfig::default(),
            frontier: FrontierConfig::default(),
            rmabp: RmabpConfig::default(),
            seed: 42,
            threads: None,
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// States to evaluate; the uniform grid when absent.
    pub states: Option<Vec<f64>>,
    pub z: ExtReal,
    pub side: Side,
    pub alpha: Option<f64>,
    pub tol: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            states: None,
            z: ExtReal::Finite(0.5),
            side: Side::Right,
            alpha: None,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontierConfig {
    /// Initial law; uniform over the state interval with `nodes` nodes when absent.
    pub nu0: Option<InitialDistribution>,
    pub nodes: usize,
    pub thresholds: Option<Vec<f64>>,
    pub tol: f64,
    /// Number of shadow-price probes (interior nodes of the initial law).
    pub probes: usize,
    pub probe_tol: f64,
}

impl Default for FrontierConfig {
    fn default() -> Self {
        Self {
            nu0: None,
            nodes: 201,
            thresholds: None,
            tol: 1e-9,
            probes: 20,
            probe_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmabpConfig {
    /// Project models; `copies` copies of the top-level model when empty.
    pub projects: Vec<ModelSpec>,
    pub copies: usize,
    pub budget: f64,
    pub initial_states: Vec<f64>,
    pub episodes: u64,
    /// Simulation horizon; derived from `bias_tol` when absent.
    pub horizon: Option<usize>,
    pub bias_tol: f64,
    pub dual_tol: f64,
}

impl Default for RmabpConfig {
    fn default() -> Self {
        Self {
            projects: Vec::new(),
            copies: 2,
            budget: 1.0,
            initial_states: Vec::new(),
            episodes: 10_000,
            horizon: None,
            bias_tol: 1e-4,
            dual_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Primary artifact; stdout when absent.
    pub out: Option<PathBuf>,
    /// Secondary JSON document (frontier curve and probes).
    pub json: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Checks everything that can be checked before computing.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != CONFIG_SCHEMA {
            return bad(format!(
                "schema_version '{}' is not '{CONFIG_SCHEMA}'",
                self.schema_version
            ));
        }
        if self.grid < 2 {
            return bad(format!("grid needs at least 2 points, got {}", self.grid));
        }
        let positive = [
            ("index_tol", self.index_tol),
            ("metrics.tol", self.metrics.tol),
            ("frontier.tol", self.frontier.tol),
            ("frontier.probe_tol", self.frontier.probe_tol),
            ("rmabp.bias_tol", self.rmabp.bias_tol),
            ("rmabp.dual_tol", self.rmabp.dual_tol),
            ("tolerances.pcli1", self.tolerances.pcli1),
            ("tolerances.index", self.tolerances.index),
            ("tolerances.pcli3", self.tolerances.pcli3),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.tolerances.monotonicity >= 0.0) {
            return bad("tolerances.monotonicity must be nonnegative".into());
        }
        if self.tolerances.refinement_factor < 2 {
            return bad("tolerances.refinement_factor must be at least 2".into());
        }
        if matches!(self.threads, Some(0)) {
            return bad("threads must be at least 1".into());
        }
        if let Some(s) = &self.metrics.states {
            if s.is_empty() {
                return bad("metrics.states is empty".into());
            }
        }
        if let Some(a) = self.metrics.alpha {
            if !(0.0..=1.0).contains(&a) || !self.metrics.z.is_finite() {
                return bad("metrics.alpha needs a finite z and a value in [0,1]".into());
            }
        }
        if self.frontier.nodes < 2 && self.frontier.nu0.is_none() {
            return bad("frontier.nodes must be at least 2".into());
        }
        if let Some(t) = &self.frontier.thresholds {
            if t.is_empty() {
                return bad("frontier.thresholds is empty".into());
            }
        }
        let n = self.rmabp_projects().len();
        if n == 0 {
            return bad("rmabp needs at least one project".into());
        }
        if !self.rmabp.initial_states.is_empty() && self.rmabp.initial_states.len() != n {
            return bad(format!(
                "rmabp.initial_states has {} entries for {n} projects",
                self.rmabp.initial_states.len()
            ));
        }
        if self.rmabp.episodes == 0 {
            return bad("rmabp.episodes must be positive".into());
        }
        if !(self.rmabp.budget >= 0.0 && self.rmabp.budget.is_finite()) {
            return bad("rmabp.budget must be nonnegative".into());
        }
        Ok(())
    }

    pub fn rmabp_projects(&self) -> Vec<ModelSpec> {
        if self.rmabp.projects.is_empty() {
            vec![self.model.clone(); self.rmabp.copies]
        } else {
            self.rmabp.projects.clone()
        }
    }
}
