//! Experiment configuration: strict TOML with recorded defaults.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::BreakOperatorSet;
use crate::hub::HubParams;
use crate::plan::OperatorKind;
use crate::sim::{DriftMode, DriftScript, OracleConstants, Regime, ScheduleEntry, SimError, WorkloadParams};
use crate::trainer::TrainerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    pub mode: DriftMode,
    pub iterations: usize,
    /// Iterations per period for the periodic modes.
    pub period: usize,
    /// Run-length bounds for the non-periodic mode.
    pub min_run: usize,
    pub max_run: usize,
    /// Explicit schedule; overrides `mode` when present.
    pub schedule: Option<Vec<ScheduleEntry>>,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            mode: DriftMode::WorkloadSwitch,
            iterations: 40,
            period: 5,
            min_run: 2,
            max_run: 8,
            schedule: None,
        }
    }
}

impl DriftConfig {
    pub fn script(&self, seed: u64) -> Result<DriftScript, SimError> {
        match (&self.schedule, self.mode) {
            (Some(entries), _) => DriftScript::custom(entries.clone()),
            (None, DriftMode::NonPeriodic) => DriftScript::non_periodic(self.iterations, self.min_run, self.max_run, seed),
            (None, mode) => DriftScript::periodic(mode, self.iterations, self.period),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub tree_hidden: usize,
    pub r: usize,
    pub attention_dim: usize,
    pub out_hidden: usize,
    pub operator_one_hot: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = crate::predictor::ModelDims::default();
        ModelConfig {
            tree_hidden: d.tree_hidden,
            r: d.r,
            attention_dim: d.attention_dim,
            out_hidden: d.out_hidden,
            operator_one_hot: d.operator_one_hot,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, n_tables: usize) -> crate::predictor::ModelDims {
        crate::predictor::ModelDims {
            n_tables,
            tree_hidden: self.tree_hidden,
            r: self.r,
            attention_dim: self.attention_dim,
            out_hidden: self.out_hidden,
            operator_one_hot: self.operator_one_hot,
            ..Default::default()
        }
    }
}

/// Which predictors an experiment runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Limao,
    Baseline,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Limao => "limao",
            SystemKind::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub systems: Vec<SystemKind>,
    pub workloads: Vec<WorkloadParams>,
    pub drift: DriftConfig,
    pub queries_per_iteration: usize,
    pub candidates: usize,
    pub include_optimal: bool,
    /// Held-out queries per workload.
    pub test_queries: usize,
    /// Timeout threshold as a multiple of the query's optimal latency.
    pub timeout_factor: f64,
    /// Iterations excluded from spike and post-warmup metrics.
    pub warmup: usize,
    /// Break operator symbols, e.g. `["HJ", "NL"]`.
    pub break_operators: Vec<String>,
    /// Modules per hub, keyed by break symbol or `OTH`.
    pub hub_sizes: BTreeMap<String, usize>,
    pub hub: HubParams,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub oracle: OracleConstants,
    /// Write a checkpoint after every this many iterations.
    pub checkpoint_every: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            systems: vec![SystemKind::Limao, SystemKind::Baseline],
            workloads: vec![
                WorkloadParams::new("A", Regime::Selective),
                WorkloadParams::new("B", Regime::Bulk),
            ],
            drift: DriftConfig::default(),
            queries_per_iteration: 20,
            candidates: 6,
            include_optimal: true,
            test_queries: 10,
            timeout_factor: 50.0,
            warmup: 20,
            break_operators: vec!["HJ".into(), "MJ".into(), "NL".into()],
            hub_sizes: [("HJ", 2), ("MJ", 1), ("NL", 3), ("OTH", 1)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            hub: HubParams::default(),
            model: ModelConfig::default(),
            trainer: TrainerConfig::default(),
            oracle: OracleConstants::default(),
            checkpoint_every: None,
        }
    }
}

impl ExperimentConfig {
    pub fn break_set(&self) -> Result<BreakOperatorSet, ConfigError> {
        let kinds = self
            .break_operators
            .iter()
            .map(|s| OperatorKind::from_symbol(s).ok_or_else(|| invalid("break_operators", format!("unknown operator `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        BreakOperatorSet::new(kinds).map_err(|e| invalid("break_operators", e.to_string()))
    }

    pub fn script(&self) -> Result<DriftScript, ConfigError> {
        self.drift.script(self.seed).map_err(|e| invalid("drift", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.systems.is_empty() {
            return Err(invalid("systems", "at least one system is required"));
        }
        if self.workloads.is_empty() {
            return Err(invalid("workloads", "at least one workload is required"));
        }
        if self.queries_per_iteration == 0 {
            return Err(invalid("queries_per_iteration", "must be positive"));
        }
        if self.candidates < 2 {
            return Err(invalid("candidates", "must be at least 2"));
        }
        if !(self.timeout_factor > 1.0) {
            return Err(invalid("timeout_factor", "must exceed 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(invalid("checkpoint_every", "must be positive"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", "must fit a signed 64-bit integer"));
        }
        let breaks = self.break_set()?;
        for (key, size) in &self.hub_sizes {
            let known = key == "OTH" || breaks.kinds().iter().any(|k| k.to_string() == *key);
            if !known {
                return Err(invalid(&format!("hub_sizes.{key}"), "not a configured hub"));
            }
            if *size == 0 {
                return Err(invalid(&format!("hub_sizes.{key}"), "must be positive"));
            }
        }
        if !(self.hub.gamma >= 0.0) || self.hub.m_min == 0 {
            return Err(invalid("hub", "gamma must be non-negative and m_min positive"));
        }
        self.trainer.validate().map_err(|e| invalid("trainer", e.to_string()))?;
        let script = self.script()?;
        if script.workload_count() > self.workloads.len() {
            return Err(invalid(
                "drift",
                format!("schedule uses workload {} but only {} are defined", script.workload_count() - 1, self.workloads.len()),
            ));
        }
        Ok(())
    }

    pub fn iterations(&self) -> Result<usize, ConfigError> {
        Ok(self.script()?.len())
    }

    /// Full TOML rendering with every default made explicit.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Parses and validates; returns the config and the dotted paths of
    /// every field that took its default.
    pub fn from_toml(text: &str) -> Result<(Self, Vec<String>), ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        let given: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let full: toml::Table = cfg.to_toml().parse().expect("rendered config parses");
        let mut defaulted = Vec::new();
        missing_paths(&full, &given, "", &mut defaulted);
        Ok((cfg, defaulted))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<String>), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

fn missing_paths(full: &toml::Table, given: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in full {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (value, given.get(key)) {
            (_, None) => out.push(path),
            (toml::Value::Table(f), Some(toml::Value::Table(g))) => missing_paths(f, g, &path, out),
            _ => {}
        }
    }
}
