//! Flat `key = value` experiment configs and run manifests.
//!
//! One assignment per line; `#` starts a comment. Unknown and repeated keys
//! are rejected. Overrides (from command-line flags) are applied after the
//! file, then the result is validated.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::federation::ExperimentConfig;
use crate::Error;

/// Environment variable that replaces the default MNIST directory.
pub const MNIST_DIR_ENV: &str = "AIRFL_MNIST_DIR";

/// Every accepted key, in manifest order.
pub const KEYS: &[&str] = &[
    "K", "B", "attack", "mode", "rounds", "batch", "lr", "nu", "max_iter", "tol", "P", "sigma2",
    "cmult", "weights", "dataset", "mnist_dir", "n_train", "n_test", "features", "classes", "seed",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("config key {key} is set twice (line {line})")]
    Duplicate { key: String, line: usize },
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("config key {key}: cannot parse {value:?}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("config key {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

/// Sets one key on `config`.
pub fn apply(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let v = value.trim();
    match key {
        "K" => config.devices = parse_value(key, v)?,
        "B" => config.byzantine = parse_value(key, v)?,
        "attack" => config.attack = parse_value(key, v)?,
        "mode" => config.mode = parse_value(key, v)?,
        "rounds" => config.rounds = parse_value(key, v)?,
        "batch" => config.batch = parse_value(key, v)?,
        "lr" => config.lr = parse_value(key, v)?,
        "nu" => config.nu = parse_value(key, v)?,
        "max_iter" => config.max_iter = parse_value(key, v)?,
        "tol" => config.tol = parse_value(key, v)?,
        "P" => config.power = parse_value(key, v)?,
        "sigma2" => config.sigma2 = parse_value(key, v)?,
        "cmult" => config.cmult = parse_value(key, v)?,
        "weights" => config.weights = parse_value(key, v)?,
        "dataset" => config.dataset = parse_value(key, v)?,
        "mnist_dir" => config.mnist_dir = PathBuf::from(v),
        "n_train" => config.n_train = parse_value(key, v)?,
        "n_test" => config.n_test = parse_value(key, v)?,
        "features" => config.features = parse_value(key, v)?,
        "classes" => config.classes = parse_value(key, v)?,
        "seed" => config.seed = parse_value(key, v)?,
        _ => {
            return Err(ConfigError::UnknownKey {
                key: key.to_string(),
            })
        }
    }
    Ok(())
}

/// Defaults, with the MNIST directory taken from [`MNIST_DIR_ENV`] if set.
pub fn base_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    if let Some(dir) = std::env::var_os(MNIST_DIR_ENV) {
        config.mnist_dir = PathBuf::from(dir);
    }
    config
}

/// Parses config text over [`base_config`], applies `overrides` in order and
/// validates the result.
pub fn parse_config_str(
    text: &str,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    let mut config = base_config();
    let mut seen: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        let key = key.trim();
        if seen.iter().any(|k| k == key) {
            return Err(ConfigError::Duplicate {
                key: key.to_string(),
                line: i + 1,
            });
        }
        apply(&mut config, key, value)?;
        seen.push(key.to_string());
    }
    for (key, value) in overrides {
        apply(&mut config, key, value)?;
    }
    config.validate().map_err(|e| match e {
        Error::InvalidConfig { key, reason } => ConfigError::Invalid {
            key: key.to_string(),
            reason,
        },
        other => ConfigError::Invalid {
            key: "config".into(),
            reason: other.to_string(),
        },
    })?;
    Ok(config)
}

/// Reads and parses a config file; `None` means defaults plus overrides.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|source| ConfigError::Io {
            path: p.to_path_buf(),
            source,
        })?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

/// The value of `key` as it would be written in a config file.
pub fn value_of(config: &ExperimentConfig, key: &str) -> Option<String> {
    Some(match key {
        "K" => config.devices.to_string(),
        "B" => config.byzantine.to_string(),
        "attack" => config.attack.to_string(),
        "mode" => config.mode.to_string(),
        "rounds" => config.rounds.to_string(),
        "batch" => config.batch.to_string(),
        "lr" => config.lr.to_string(),
        "nu" => config.nu.to_string(),
        "max_iter" => config.max_iter.to_string(),
        "tol" => config.tol.to_string(),
        "P" => config.power.to_string(),
        "sigma2" => config.sigma2.to_string(),
        "cmult" => config.cmult.to_string(),
        "weights" => config.weights.to_string(),
        "dataset" => config.dataset.to_string(),
        "mnist_dir" => config.mnist_dir.display().to_string(),
        "n_train" => config.n_train.to_string(),
        "n_test" => config.n_test.to_string(),
        "features" => config.features.to_string(),
        "classes" => config.classes.to_string(),
        "seed" => config.seed.to_string(),
        _ => return None,
    })
}

/// Every key of `config`, one `key = value` line each.
pub fn write_config(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    for key in KEYS {
        let value = value_of(config, key).expect("every listed key has a value");
        let _ = writeln!(out, "{key} = {value}");
    }
    out
}

/// Fully resolved description of a run, written before the first round.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub metrics_path: PathBuf,
}

impl RunManifest {
    pub fn new(config: ExperimentConfig, metrics_path: PathBuf) -> Self {
        let started = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started,
            metrics_path,
        }
    }
}

/// Manifest text. Metadata lives in comments, so the text is itself a config
/// file that reproduces the run.
pub fn write_manifest(manifest: &RunManifest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# airfl run manifest");
    let _ = writeln!(out, "# version: {}", manifest.version);
    let _ = writeln!(out, "# started: {}", manifest.started);
    let _ = writeln!(out, "# metrics: {}", manifest.metrics_path.display());
    out.push_str(&write_config(&manifest.config));
    out
}
