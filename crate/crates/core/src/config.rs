//! Run configuration. Serialised as TOML; every field has a default so a
//! config file only needs the keys it changes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::TaskContext;
use crate::backend::{LiveConfig, MockConfig};
use crate::context::ContextConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Ablation variants, each switching off one input channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The full pipeline.
    #[default]
    Full,
    /// No mandatory nearest neighbours; only agent-chosen points.
    NoNear10,
    /// No agent-chosen points; only the nearest neighbours.
    NoPtsel,
    /// No covariates anywhere.
    NoExtvars,
}

impl Variant {
    pub const ABLATIONS: [Variant; 3] = [Variant::NoNear10, Variant::NoPtsel, Variant::NoExtvars];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoNear10 => "no_near10",
            Variant::NoPtsel => "no_ptsel",
            Variant::NoExtvars => "no_extvars",
        }
    }

    pub fn uses_mandatory(self) -> bool {
        self != Variant::NoNear10
    }

    pub fn uses_point_agent(self) -> bool {
        self != Variant::NoPtsel
    }

    pub fn uses_covariates(self) -> bool {
        self != Variant::NoExtvars
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Variant::Full),
            "no_near10" => Ok(Variant::NoNear10),
            "no_ptsel" => Ok(Variant::NoPtsel),
            "no_extvars" => Ok(Variant::NoExtvars),
            _ => Err(format!("unknown variant {s:?} (expected full, no_near10, no_ptsel or no_extvars)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    #[default]
    Mock,
    Live,
}

impl FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(BackendMode::Mock),
            "live" => Ok(BackendMode::Live),
            _ => Err(format!("unknown backend mode {s:?} (expected mock or live)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub mode: BackendMode,
    pub mock: MockConfig,
    pub live: LiveConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub dataset: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Refinement rounds after the initial prediction.
    pub rounds: usize,
    pub k_near: usize,
    pub p_far: usize,
    /// Largest covariate subset the variable-selection agent may pick.
    pub d_max: usize,
    /// Candidates offered to the point-selection agent beyond the nearest ring.
    pub menu_size: usize,
    /// Worker threads, and so the most backend calls in flight.
    pub concurrency: usize,
    pub seed: u64,
    /// Stop once a round changes no score.
    pub early_stop: bool,
    /// Select variables and points once, in round 1, and reuse them.
    pub cache_selections: bool,
    pub variant: Variant,
    pub task: TaskContext,
    pub backend: BackendConfig,
    pub context: ContextConfig,
    pub templates_dir: Option<PathBuf>,
    pub data: DataPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            k_near: 10,
            p_far: 5,
            d_max: 5,
            menu_size: 30,
            concurrency: 4,
            seed: 0,
            early_stop: false,
            cache_selections: false,
            variant: Variant::Full,
            task: TaskContext::default(),
            backend: BackendConfig::default(),
            context: ContextConfig::default(),
            templates_dir: None,
            data: DataPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1".into());
        }
        if self.k_near == 0 {
            return bad("k_near must be at least 1".into());
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must be at most {}", i64::MAX));
        }
        self.task.validate().map_err(ConfigError::Invalid)?;
        let m = &self.backend.mock;
        if !(m.noise_sd >= 0.0 && m.noise_sd.is_finite()) {
            return bad(format!("mock noise_sd must be finite and non-negative, got {}", m.noise_sd));
        }
        if !(0.0..=1.0).contains(&m.refusal_rate) {
            return bad(format!("mock refusal_rate must be in [0, 1], got {}", m.refusal_rate));
        }
        if !(0.0..=1.0).contains(&m.blend) {
            return bad(format!("mock blend must be in [0, 1], got {}", m.blend));
        }
        if self.context.radius_km.is_nan() || self.context.radius_km <= 0.0 {
            return bad("context radius_km must be positive".into());
        }
        Ok(())
    }
}
