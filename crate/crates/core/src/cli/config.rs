//! TOML experiment and sweep files.
//!
//! Every key is optional and unknown keys are rejected. Errors carry the
//! 1-based line of the offending key when it appears in the file.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{ExperimentConfig, Paradigm};
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = self
            .path
            .as_deref()
            .map_or("<config>".into(), |p| p.display().to_string());
        match self.line {
            Some(line) => write!(f, "{path}:{line}: {}", self.message),
            None => write!(f, "{path}: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn with_path(mut self, path: &Path) -> Self {
        self.path = Some(path.to_path_buf());
        self
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn from_toml(text: &str, err: toml::de::Error) -> ConfigError {
    ConfigError {
        path: None,
        line: err.span().map(|s| line_of_offset(text, s.start)),
        message: err.message().trim().to_string(),
    }
}

/// Line where dotted `key` is set, or where its table starts.
pub fn find_key_line(text: &str, key: &str) -> Option<usize> {
    let (table, leaf) = match key.rsplit_once('.') {
        Some((t, l)) => (t, l),
        None => ("", key),
    };
    let assigns = |line: &str, name: &str| {
        line.strip_prefix(name)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
    };
    let mut current = String::new();
    let mut table_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[') {
            current = header
                .trim_start_matches('[')
                .split(']')
                .next()
                .unwrap_or("")
                .trim()
                .to_string();
            if current == key {
                return Some(i + 1);
            }
            if current == table && table_line.is_none() {
                table_line = Some(i + 1);
            }
            continue;
        }
        if current == table && assigns(line, leaf) {
            return Some(i + 1);
        }
        if current.is_empty() && assigns(line, key) {
            return Some(i + 1);
        }
    }
    table_line
}

fn from_validation(text: &str, err: Error, prefix: &str) -> ConfigError {
    match err {
        Error::Field { key, message } => {
            let full = if prefix.is_empty() {
                key
            } else {
                format!("{prefix}.{key}")
            };
            // Walk up the key until something in the file matches.
            let mut probe = full.as_str();
            let line = loop {
                if let Some(l) = find_key_line(text, probe) {
                    break Some(l);
                }
                match probe.rsplit_once('.') {
                    Some((parent, _)) => probe = parent,
                    None => break None,
                }
            };
            ConfigError {
                path: None,
                line,
                message: format!("invalid value for `{full}`: {message}"),
            }
        }
        other => ConfigError {
            path: None,
            line: None,
            message: other.to_string(),
        },
    }
}

/// Parses and validates an experiment file.
pub fn parse_experiment(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| from_toml(text, e))?;
    config.validate().map_err(|e| from_validation(text, e, ""))?;
    Ok(config)
}

/// Applies command-line overrides to a parsed file and re-validates.
pub fn apply_overrides(
    text: &str,
    mut config: ExperimentConfig,
    seed: Option<u64>,
    paradigm: Option<Paradigm>,
) -> Result<ExperimentConfig, ConfigError> {
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(p) = paradigm {
        config.paradigm = p;
    }
    config.validate().map_err(|e| from_validation(text, e, ""))?;
    Ok(config)
}

pub fn read_file(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: Some(path.to_path_buf()),
        line: None,
        message: format!("cannot read: {e}"),
    })
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    parse_experiment(&read_file(path)?).map_err(|e| e.with_path(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCondition {
    pub connectivity: f64,
    pub reliability: f64,
}

fn default_paradigms() -> Vec<Paradigm> {
    Paradigm::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

fn default_conditions() -> Vec<NetworkCondition> {
    vec![
        NetworkCondition {
            connectivity: 1.0,
            reliability: 1.0,
        },
        NetworkCondition {
            connectivity: 0.5,
            reliability: 0.5,
        },
    ]
}

pub const DEFAULT_OUT_DIR: &str = "results";
pub const DEFAULT_LOSS_THRESHOLD: f64 = 0.5;

fn default_out() -> PathBuf {
    PathBuf::from(DEFAULT_OUT_DIR)
}

fn default_threshold() -> f64 {
    DEFAULT_LOSS_THRESHOLD
}

/// A cross product of paradigms, seeds and network conditions over a base
/// experiment. The base's own paradigm, seed, connectivity and reliability
/// are overridden per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub base: ExperimentConfig,
    #[serde(default = "default_paradigms")]
    pub paradigms: Vec<Paradigm>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_conditions")]
    pub conditions: Vec<NetworkCondition>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_threshold")]
    pub loss_threshold: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            base: ExperimentConfig::default(),
            paradigms: default_paradigms(),
            seeds: default_seeds(),
            conditions: default_conditions(),
            out: default_out(),
            loss_threshold: default_threshold(),
        }
    }
}

impl SweepSpec {
    /// The configuration of one run in the sweep.
    pub fn run_config(&self, paradigm: Paradigm, seed: u64, condition: NetworkCondition) -> ExperimentConfig {
        let mut c = self.base.clone();
        c.paradigm = paradigm;
        c.seed = seed;
        c.network.connectivity = condition.connectivity;
        c.network.reliability = condition.reliability;
        c
    }

    pub fn validate(&self) -> crate::Result<()> {
        use crate::error::at_key;
        let empty = |k: &str| at_key(k, Error::InvalidArgument("must not be empty".into()));
        if self.paradigms.is_empty() {
            return Err(empty("paradigms"));
        }
        if self.seeds.is_empty() {
            return Err(empty("seeds"));
        }
        if self.conditions.is_empty() {
            return Err(empty("conditions"));
        }
        if !self.loss_threshold.is_finite() {
            return Err(at_key(
                "loss_threshold",
                Error::InvalidArgument("must be finite".into()),
            ));
        }
        self.base.validate().map_err(|e| at_key("base", e))?;
        for c in &self.conditions {
            self.run_config(self.paradigms[0], self.seeds[0], *c)
                .validate()
                .map_err(|e| at_key("conditions", e))?;
        }
        Ok(())
    }
}

pub fn parse_sweep(text: &str) -> Result<SweepSpec, ConfigError> {
    let spec: SweepSpec = toml::from_str(text).map_err(|e| from_toml(text, e))?;
    spec.validate().map_err(|e| from_validation(text, e, ""))?;
    Ok(spec)
}

pub fn load_sweep(path: &Path) -> Result<SweepSpec, ConfigError> {
    parse_sweep(&read_file(path)?).map_err(|e| e.with_path(path))
}
