//! Pipeline configuration loaded from JSON; absent keys take documented defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Category;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Http,
    Reader,
}

/// What a scripted backend does for documents without a sidecar answer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unscripted {
    /// The backend is treated as absent for that document.
    #[default]
    Absent,
    /// Answer with the label-reading reference extractor.
    ReadDocument,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Directory of sidecar answer files (scripted backends).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures_dir: Option<PathBuf>,
    #[serde(default)]
    pub unscripted: Unscripted,
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrySettings {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetrySettings {
    fn default() -> Self {
        RetrySettings {
            attempts: 3,
            initial_backoff_ms: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl EndpointConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub confidence_threshold_default: f64,
    /// Keyed by `supplier:doc_type`.
    pub category_thresholds: BTreeMap<String, f64>,
    /// Keyed by field name.
    pub field_thresholds: BTreeMap<String, f64>,
    pub arithmetic_tolerance_minor_units: i64,
    /// Legal VAT percentages per ISO country code.
    pub vat_table: BTreeMap<String, Vec<f64>>,
    /// Country assumed when a tax id carries no prefix.
    pub default_country: String,
    pub split_confidence: f64,
    pub header_crop_fraction: f64,
    pub max_examples: usize,
    /// Check ids switched off entirely.
    pub disabled_checks: BTreeSet<String>,
    pub backends: Vec<BackendConfig>,
    pub classifier_endpoint: Option<EndpointConfig>,
    pub parser_endpoint: Option<EndpointConfig>,
    pub retry: RetrySettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            confidence_threshold_default: 0.85,
            category_thresholds: BTreeMap::new(),
            field_thresholds: BTreeMap::new(),
            arithmetic_tolerance_minor_units: 2,
            vat_table: BTreeMap::from([("IT".to_string(), vec![0.0, 4.0, 5.0, 10.0, 22.0])]),
            default_country: "IT".to_string(),
            split_confidence: 0.7,
            header_crop_fraction: 0.4,
            max_examples: 8,
            disabled_checks: BTreeSet::new(),
            backends: Vec::new(),
            classifier_endpoint: None,
            parser_endpoint: None,
            retry: RetrySettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "{name} = {v} is outside [0,1]"
                )))
            }
        };
        unit(
            "confidence_threshold_default",
            self.confidence_threshold_default,
        )?;
        if !(0.80..=0.90).contains(&self.confidence_threshold_default) {
            return Err(ConfigError::Invalid(format!(
                "confidence_threshold_default = {} must lie in [0.80, 0.90]",
                self.confidence_threshold_default
            )));
        }
        for (k, v) in &self.category_thresholds {
            k.parse::<Category>()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            unit(&format!("category_thresholds[{k}]"), *v)?;
        }
        for (k, v) in &self.field_thresholds {
            unit(&format!("field_thresholds[{k}]"), *v)?;
        }
        unit("split_confidence", self.split_confidence)?;
        if !(self.header_crop_fraction > 0.0 && self.header_crop_fraction <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "header_crop_fraction = {} is outside (0,1]",
                self.header_crop_fraction
            )));
        }
        if self.arithmetic_tolerance_minor_units < 0 {
            return Err(ConfigError::Invalid(
                "arithmetic_tolerance_minor_units must be non-negative".into(),
            ));
        }
        if self.max_examples == 0 {
            return Err(ConfigError::Invalid(
                "max_examples must be at least 1".into(),
            ));
        }
        let mut ids = BTreeSet::new();
        for b in &self.backends {
            if !ids.insert(&b.backend_id) {
                return Err(ConfigError::Invalid(format!(
                    "backend id {} declared twice",
                    b.backend_id
                )));
            }
            if b.kind == BackendKind::Http && b.endpoint.is_none() {
                return Err(ConfigError::Invalid(format!(
                    "http backend {} needs an endpoint",
                    b.backend_id
                )));
            }
        }
        Ok(())
    }

    /// Field override, then category override, then the default.
    pub fn threshold_for(&self, category: &Category, field: &str) -> f64 {
        self.field_thresholds
            .get(field)
            .or_else(|| self.category_thresholds.get(&category.key()))
            .copied()
            .unwrap_or(self.confidence_threshold_default)
    }

    pub fn check_enabled(&self, check_id: &str) -> bool {
        !self.disabled_checks.contains(check_id)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    PipelineConfig::from_json(&text)
}
