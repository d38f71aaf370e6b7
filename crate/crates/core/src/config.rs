//! Experiment configuration: one TOML file with a section per subsystem.
//!
//! Every key is optional; missing keys take their defaults, and the
//! materialized copy written next to a run spells all of them out.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codesign::BoConfig;
use crate::error::ConfigError;
use crate::ppo::PpoConfig;
use crate::rewards::{MetricConfig, RewardWeights};
use crate::scenario::{HockeyStopConfig, SelfAlignConfig, SweepConfig};
use crate::sim::SimParams;
use crate::train::{InnerLoopConfig, TaskConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub hockey_stop: HockeyStopConfig,
    pub self_align: SelfAlignConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every random stream of a run derives from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sim: SimParams,
    pub task: TaskConfig,
    pub rewards: RewardWeights,
    pub metric: MetricConfig,
    pub ppo: PpoConfig,
    pub bo: BoConfig,
    pub scenario: ScenarioConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            sim: SimParams::default(),
            task: TaskConfig::default(),
            rewards: RewardWeights::default(),
            metric: MetricConfig::default(),
            ppo: PpoConfig::default(),
            bo: BoConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

const TOP_LEVEL: &str = "top-level";

fn invalid(section: &str, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { section: section.to_string(), key: key.to_string(), message: message.into() }
}

/// Deserializes one section, checking each key on its own first so errors
/// can name the offending key.
fn section<T: DeserializeOwned + Default>(name: &str, value: toml::Value) -> Result<T, ConfigError> {
    let toml::Value::Table(table) = value else {
        return Err(invalid(TOP_LEVEL, name, "expected a table"));
    };
    for (key, v) in &table {
        let mut single = toml::Table::new();
        single.insert(key.clone(), v.clone());
        if let Err(e) = toml::Value::Table(single).try_into::<T>() {
            return Err(invalid(name, key, e.message()));
        }
    }
    toml::Value::Table(table).try_into::<T>().map_err(|e| invalid(name, "*", e.message()))
}

/// The key a validation message is about: its first word.
fn key_of(message: &str) -> &str {
    message.split_whitespace().next().unwrap_or("*")
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| ConfigError::Parse { path: origin.to_string(), message: e.message().to_string() })?;
        let mut cfg = Self::default();
        for (key, value) in table {
            match key.as_str() {
                "seed" => {
                    cfg.seed = value
                        .as_integer()
                        .and_then(|v| u64::try_from(v).ok())
                        .ok_or_else(|| invalid(TOP_LEVEL, "seed", "expected a non-negative integer"))?
                }
                "output_dir" => {
                    cfg.output_dir =
                        value.as_str().map(PathBuf::from).ok_or_else(|| invalid(TOP_LEVEL, "output_dir", "expected a string"))?
                }
                "sim" => cfg.sim = section("sim", value)?,
                "task" => cfg.task = section("task", value)?,
                "rewards" => cfg.rewards = section("rewards", value)?,
                "metric" => cfg.metric = section("metric", value)?,
                "ppo" => cfg.ppo = section("ppo", value)?,
                "bo" => cfg.bo = section("bo", value)?,
                "scenario" => cfg.scenario = section("scenario", value)?,
                other => return Err(invalid(TOP_LEVEL, other, "unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate().map_err(|e| match e {
            crate::error::SimError::InvalidParam(k) => invalid("sim", k, "out of range"),
            other => invalid("sim", "*", other.to_string()),
        })?;
        let checks: [(&str, Result<(), String>); 6] = [
            ("task", self.task.validate()),
            ("rewards", self.rewards.validate()),
            ("metric", self.metric.validate()),
            ("ppo", self.ppo.validate()),
            ("bo", self.bo.validate()),
            ("scenario", self.scenario.validate()),
        ];
        for (name, r) in checks {
            if let Err(m) = r {
                return Err(invalid(name, key_of(&m), m.clone()));
            }
        }
        Ok(())
    }

    /// Copy with every default spelled out.
    pub fn materialized(&self) -> Self {
        let mut c = self.clone();
        c.bo.initial_points = Some(c.bo.initial_size());
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.materialized()).expect("config serializes")
    }

    pub fn inner_loop(&self) -> InnerLoopConfig {
        InnerLoopConfig {
            sim: self.sim.clone(),
            task: self.task.clone(),
            rewards: self.rewards.clone(),
            metric: self.metric.clone(),
            ppo: self.ppo.clone(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        let h = &self.hockey_stop;
        if !(h.speed >= 0.0 && h.stop_threshold > 0.0 && h.stop_timeout > 0.0 && h.steady_timeout >= 0.0) {
            return Err("hockey_stop speeds and timeouts must be non-negative".into());
        }
        if !(self.self_align.settle >= 0.0 && self.self_align.speed >= 0.0) {
            return Err("self_align settle and speed must be non-negative".into());
        }
        let s = &self.sweep;
        if !(s.speed >= 0.0 && s.duration > 0.0 && s.warmup >= 0.0 && s.warmup < s.duration) {
            return Err("sweep warmup must lie in [0, duration)".into());
        }
        Ok(())
    }
}
