//! TOML configuration files and command-line overrides.

use std::path::Path;

use dleaf_core::engine::{BasRule, DetectionMetric, DleafConfig, HeadMetric, LayerWindow};
use dleaf_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> LabResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    toml::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
}

pub fn load_model_config(path: Option<&Path>) -> LabResult<ModelConfig> {
    let config = match path {
        Some(p) => read_toml(p)?,
        None => ModelConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DetectionMetricName {
    Liae,
    Liaf,
    Lias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum HeadMetricName {
    Iaf,
    Iae,
    Ias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BasRuleName {
    RunningMin,
    ListingLiteral,
}

/// Flat on-disk form of the intervention settings. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DleafSettings {
    pub gamma: Option<f64>,
    pub heads: Option<usize>,
    pub window: Option<String>,
    pub detection_metric: Option<DetectionMetricName>,
    pub alpha: Option<f64>,
    pub head_metric: Option<HeadMetricName>,
    pub beta: Option<f64>,
    pub renormalize: Option<bool>,
    pub bas_rule: Option<BasRuleName>,
}

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 0.5;

impl DleafSettings {
    pub fn load(path: &Path) -> LabResult<Self> {
        read_toml(path)
    }

    /// Values set in `other` win.
    pub fn overlay(&self, other: &DleafSettings) -> DleafSettings {
        DleafSettings {
            gamma: other.gamma.or(self.gamma),
            heads: other.heads.or(self.heads),
            window: other.window.clone().or_else(|| self.window.clone()),
            detection_metric: other.detection_metric.or(self.detection_metric),
            alpha: other.alpha.or(self.alpha),
            head_metric: other.head_metric.or(self.head_metric),
            beta: other.beta.or(self.beta),
            renormalize: other.renormalize.or(self.renormalize),
            bas_rule: other.bas_rule.or(self.bas_rule),
        }
    }

    pub fn resolve(&self) -> LabResult<DleafConfig> {
        let base = DleafConfig::default();
        let window = match &self.window {
            Some(w) => w.parse::<LayerWindow>()?,
            None => base.window,
        };
        let detection_metric = match self.detection_metric {
            None => base.detection_metric,
            Some(DetectionMetricName::Liae) => DetectionMetric::Liae,
            Some(DetectionMetricName::Liaf) => DetectionMetric::Liaf,
            Some(DetectionMetricName::Lias) => DetectionMetric::Lias { alpha: self.alpha.unwrap_or(DEFAULT_ALPHA) },
        };
        let head_metric = match self.head_metric {
            None => base.head_metric,
            Some(HeadMetricName::Iaf) => HeadMetric::Iaf,
            Some(HeadMetricName::Iae) => HeadMetric::Iae,
            Some(HeadMetricName::Ias) => HeadMetric::Ias { beta: self.beta.unwrap_or(DEFAULT_BETA) },
        };
        let bas_rule = match self.bas_rule {
            None => base.bas_rule,
            Some(BasRuleName::RunningMin) => BasRule::RunningMin,
            Some(BasRuleName::ListingLiteral) => BasRule::ListingLiteral,
        };
        let config = DleafConfig {
            gamma: self.gamma.unwrap_or(base.gamma),
            heads_to_correct: self.heads.unwrap_or(base.heads_to_correct),
            window,
            detection_metric,
            head_metric,
            renormalize_rows: self.renormalize.unwrap_or(base.renormalize_rows),
            bas_rule,
        };
        config.validate().map_err(|e| LabError::Config(e.to_string()))?;
        Ok(config)
    }
}
