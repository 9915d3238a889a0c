//! Scenario files (TOML). Every field has a default, so an empty file is
//! the 64x64 reference scenario: 25 facilities and 25 personnel (caps 50),
//! 800-step horizon, 50 episodes, heuristic policies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::ConfigError;
use crate::metrics::MetricsConfig;
use crate::model::GridConfig;
use crate::policies::PolicySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub initial_facilities: usize,
    pub initial_personnel: usize,
    pub episodes: usize,
    pub seed: u64,
    pub horizon: u64,
    pub grid: GridConfig,
    pub engine: EngineConfig,
    pub metrics: MetricsConfig,
    pub policy: PolicySpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            initial_facilities: 25,
            initial_personnel: 25,
            episodes: 50,
            seed: 0,
            horizon: 800,
            grid: GridConfig::default(),
            engine: EngineConfig::default(),
            metrics: MetricsConfig::default(),
            policy: PolicySpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid.validate()?;
        self.engine.validate()?;
        self.metrics.validate()?;
        self.policy.validate()?;
        if self.initial_facilities > self.engine.max_facilities {
            return Err(ConfigError::new(
                "initial_facilities",
                format!("{} exceeds engine.max_facilities = {}", self.initial_facilities, self.engine.max_facilities),
            ));
        }
        if self.initial_personnel > self.engine.max_personnel {
            return Err(ConfigError::new(
                "initial_personnel",
                format!("{} exceeds engine.max_personnel = {}", self.initial_personnel, self.engine.max_personnel),
            ));
        }
        if self.horizon == 0 {
            return Err(ConfigError::new("horizon", "must be at least 1"));
        }
        if self.episodes == 0 {
            return Err(ConfigError::new("episodes", "must be at least 1"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| toml_error(&e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes to TOML")
    }

    /// Sets a dotted key, e.g. `engine.service_duration=7` or
    /// `grid.width=128`. Unknown keys are rejected.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::new(assignment, "expected key=value"))?;
        let key = key.trim();
        let value = parse_toml_value(raw.trim());
        let mut root = toml::Value::try_from(&*self).map_err(|e| ConfigError::new(key, e.to_string()))?;
        let (parents, last) = match key.rsplit_once('.') {
            Some((parents, last)) => (parents.split('.').collect::<Vec<_>>(), last),
            None => (Vec::new(), key),
        };
        let mut table = root
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(key, "not a table"))?;
        for part in parents {
            table = table
                .get_mut(part)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| ConfigError::new(key, "unknown key"))?;
        }
        if !table.contains_key(last) {
            return Err(ConfigError::new(key, "unknown key"));
        }
        table.insert(last.to_string(), value);
        let updated: Self = root.try_into().map_err(|e: toml::de::Error| {
            let mut err = toml_error(&e);
            err.key = key.to_string();
            err
        })?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn toml_error(e: &toml::de::Error) -> ConfigError {
    let message = e.message().to_string();
    let key = message
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string)
        .unwrap_or_else(|| "config".to_string());
    ConfigError::new(key, message)
}
