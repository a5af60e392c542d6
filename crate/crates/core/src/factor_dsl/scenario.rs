use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ops;
use crate::dico_reward::RewardParams;
use crate::market_data::{BASE_FIELDS, RETURN_VARIABLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniverseMode {
    SingleAsset,
    CrossSectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryMetric {
    Diracc,
    Ic,
    Rankic,
}

impl PrimaryMetric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Diracc => "diracc",
            Self::Ic => "ic",
            Self::Rankic => "rankic",
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn default_d_max() -> usize {
    8
}
fn default_elite_size() -> usize {
    32
}
fn default_min_periods() -> usize {
    20
}
fn default_min_assets() -> usize {
    3
}

/// Structured mining scenario: universe, target, language restrictions and
/// quality gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub universe_mode: UniverseMode,
    pub primary_metric: PrimaryMetric,
    pub horizon: usize,
    pub allowed_variables: BTreeSet<String>,
    pub allowed_operators: BTreeSet<String>,
    #[serde(default = "default_d_max")]
    pub d_max: usize,
    pub w_max: usize,
    pub min_coverage: f64,
    pub quality_threshold: f64,
    #[serde(default)]
    pub reward: RewardParams,
    /// Elite set size `M` for complementarity.
    #[serde(default = "default_elite_size")]
    pub elite_size: usize,
    /// Minimum defined periods for a valid backtest.
    #[serde(default = "default_min_periods")]
    pub min_periods: usize,
    /// Minimum valid assets for a cross-sectional correlation.
    #[serde(default = "default_min_assets")]
    pub min_assets: usize,
}

impl Scenario {
    pub fn cross_sectional(name: &str) -> Self {
        Self {
            name: name.to_string(),
            universe_mode: UniverseMode::CrossSectional,
            primary_metric: PrimaryMetric::Rankic,
            horizon: 1,
            allowed_variables: BASE_FIELDS
                .iter()
                .copied()
                .chain([RETURN_VARIABLE])
                .map(String::from)
                .collect(),
            allowed_operators: ops::all_operator_names().map(String::from).collect(),
            d_max: default_d_max(),
            w_max: 30,
            min_coverage: 0.5,
            quality_threshold: 0.02,
            reward: RewardParams::default(),
            elite_size: default_elite_size(),
            min_periods: default_min_periods(),
            min_assets: default_min_assets(),
        }
    }

    pub fn single_asset(name: &str) -> Self {
        let mut s = Self::cross_sectional(name);
        s.universe_mode = UniverseMode::SingleAsset;
        s.primary_metric = PrimaryMetric::Diracc;
        s.quality_threshold = 0.5;
        s.allowed_operators.remove("rank");
        s.allowed_operators.remove("zscore");
        s
    }

    pub fn check(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.allowed_variables.is_empty() {
            return invalid("allowed_variables must be non-empty".into());
        }
        if self.allowed_operators.is_empty() {
            return invalid("allowed_operators must be non-empty".into());
        }
        if let Some(op) = self.allowed_operators.iter().find(|o| ops::lookup(o).is_none()) {
            return invalid(format!("unknown operator `{op}` in allowed_operators"));
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return invalid(format!("min_coverage {} outside [0, 1]", self.min_coverage));
        }
        if self.horizon == 0 || self.w_max == 0 || self.d_max == 0 {
            return invalid("horizon, w_max and d_max must be positive".into());
        }
        if !self.quality_threshold.is_finite() {
            return invalid("quality_threshold must be finite".into());
        }
        self.reward.check().map_err(ScenarioError::Invalid)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = serde_json::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Threshold for the unseen-family bonus (defaults to the quality threshold).
    pub fn tau_new(&self) -> f64 {
        self.reward.tau_new.unwrap_or(self.quality_threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_uses_snake_case() {
        let s = Scenario::cross_sectional("cs");
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"universe_mode\":\"cross_sectional\""));
        assert!(text.contains("\"primary_metric\":\"rankic\""));
        assert!(text.contains("\"w_max\""));
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let text = r#"{"name":"x","universe_mode":"single_asset","primary_metric":"diracc","horizon":1,
            "allowed_variables":["close"],"allowed_operators":["ts_mean"],"w_max":10,
            "min_coverage":0.5,"quality_threshold":0.5}"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.d_max, 8);
        assert_eq!(s.elite_size, 32);
        assert_eq!(s.reward, RewardParams::default());
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut s = Scenario::cross_sectional("x");
        s.min_coverage = 1.5;
        assert!(s.check().is_err());
        let mut s = Scenario::cross_sectional("x");
        s.allowed_operators.clear();
        assert!(s.check().is_err());
        let mut s = Scenario::cross_sectional("x");
        s.allowed_operators.insert("frobnicate".into());
        assert!(s.check().is_err());
    }
}
