//! Flat `key = value` settings: file values overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug)]
pub enum ConfigError {
    /// Bad file syntax or an unknown key; a usage problem.
    Usage(String),
    /// A value that does not parse or violates a contract.
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Usage(m) | ConfigError::Invalid(m) => f.write_str(m),
        }
    }
}

pub const KEYS: &[&str] = &[
    "alpha", "batch", "checkpoint", "data", "decay", "eta", "flow_alpha", "flow_iterations",
    "flow_predictions", "flow_scale", "gamma", "hidden", "iters", "ir_predictions", "knn_k", "lr",
    "method", "momentum", "neuron", "noise", "out", "ppm", "profile", "seed", "spec", "steps", "stream",
    "threads", "train_per_class", "videos_per_class", "w_flow", "w_ir", "wd",
];

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
    used: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut s = Settings::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::Usage(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn overlay<T: Display>(&mut self, key: &str, value: Option<T>) -> Result<(), ConfigError> {
        match value {
            Some(v) => self.set(key, &v.to_string()),
            None => Ok(()),
        }
    }

    /// Resolved value of `key`, recorded for the effective-config dump.
    pub fn get<T>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match self.values.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| ConfigError::Invalid(format!("bad value `{raw}` for {key}: {e}")))?,
            None => default,
        };
        self.used.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Every resolved setting as `key = value` lines, loadable with `--config`.
    pub fn effective(&self) -> String {
        self.used.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
