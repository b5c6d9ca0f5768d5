//! Scenario configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use gittins_sched::gittins::RGrid;
use gittins_sched::jobmodel::{JobChain, ModelFile};
use gittins_sched::policies::PolicyKind;
use gittins_sched::scenarios;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where the job model comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    /// A built-in scenario, e.g. `{"builtin": "klimov"}`.
    Builtin { builtin: String },
    /// A model file, resolved relative to the config file.
    File { file: PathBuf },
    Inline(ModelFile),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Log,
}

/// Penalty grid for r-work curves. Missing bounds are derived from the
/// model's ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RGridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

fn default_points() -> usize {
    200
}

impl Default for RGridConfig {
    fn default() -> Self {
        RGridConfig {
            min: None,
            max: None,
            points: default_points(),
            spacing: Spacing::Log,
        }
    }
}

fn default_tolerance() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Scenario label used in output files.
    pub name: String,
    pub model: ModelRef,
    /// Batch arrival rate. Defaults to the model's own rate if it has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_rate: Option<f64>,
    pub policies: Vec<PolicyKind>,
    /// State ids from highest to lowest priority, for the `priority` policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_order: Option<Vec<String>>,
    pub horizon: f64,
    pub warmup: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub r_grid: RGridConfig,
    /// Bisection tolerance for ranks (relative).
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    pub output_dir: PathBuf,
    /// Also write one NDJSON event log per policy and seed.
    #[serde(default)]
    pub event_log: bool,
}

/// A config with its model loaded.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: ScenarioConfig,
    pub chain: JobChain,
    pub batch_rate: f64,
    pub priority_order: Vec<usize>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| CliError::Invalid(format!("config: {e}")))?;
        config.check()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Structural checks that need no model.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if !(self.horizon.is_finite() && self.warmup >= 0.0 && self.horizon > self.warmup) {
            return bad(format!(
                "need horizon > warmup >= 0 (horizon {}, warmup {})",
                self.horizon, self.warmup
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.policies.is_empty() {
            return bad("policies must not be empty".into());
        }
        if let Some(rate) = self.arrival_rate {
            if !(rate.is_finite() && rate >= 0.0) {
                return bad(format!("arrival_rate {rate} must be finite and nonnegative"));
            }
        }
        let g = &self.r_grid;
        for (name, v) in [("min", g.min), ("max", g.max)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return bad(format!("r_grid {name} must be positive, got {v}"));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (g.min, g.max) {
            if hi <= lo {
                return bad(format!("r_grid max {hi} must exceed min {lo}"));
            }
        }
        if g.points < 2 {
            return bad(format!("r_grid needs at least 2 points, got {}", g.points));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad(format!("tolerance {} must be positive", self.tolerance));
        }
        Ok(())
    }

    /// The grid request handed to the rank solver.
    pub fn rgrid(&self) -> RGrid {
        let g = &self.r_grid;
        match (g.min, g.max) {
            (Some(min), Some(max)) => RGrid::Log {
                min,
                max,
                points: g.points,
            },
            _ => RGrid::Auto { points: g.points },
        }
    }

    /// Load the model, relative to `base` (the config file's directory).
    pub fn resolve(self, base: &Path) -> Result<Resolved, CliError> {
        let (chain, own_rate, default_order) = match &self.model {
            ModelRef::Builtin { builtin } => {
                let s = scenarios::by_name(builtin).ok_or_else(|| {
                    CliError::Invalid(format!(
                        "unknown builtin model `{builtin}` (expected one of {})",
                        scenarios::NAMES.join(", ")
                    ))
                })?;
                (s.chain, Some(s.batch_rate), Some(s.priority_order))
            }
            ModelRef::File { file } => {
                let path = base.join(file);
                let text =
                    fs::read_to_string(&path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
                let model: ModelFile = serde_json::from_str(&text)
                    .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
                (model.to_chain().map_err(CliError::Model)?, model.arrival_rate, None)
            }
            ModelRef::Inline(model) => (model.to_chain().map_err(CliError::Model)?, model.arrival_rate, None),
        };
        let report = chain.validate();
        if !report.ok {
            return Err(CliError::InvalidModel(
                report.violations.iter().map(|v| v.to_string()).collect(),
            ));
        }
        let batch_rate = self
            .arrival_rate
            .or(own_rate)
            .ok_or_else(|| CliError::Invalid("arrival_rate missing from config and model".into()))?;
        let priority_order = match &self.priority_order {
            Some(ids) => ids
                .iter()
                .map(|id| {
                    chain
                        .index_of(id)
                        .ok_or_else(|| CliError::Invalid(format!("priority_order: unknown state `{id}`")))
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => default_order.unwrap_or_else(|| (0..chain.len()).collect()),
        };
        if priority_order.len() != chain.len() {
            return Err(CliError::Invalid(format!(
                "priority_order must list all {} states exactly once",
                chain.len()
            )));
        }
        Ok(Resolved {
            config: self,
            chain,
            batch_rate,
            priority_order,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "name": "demo",
        "model": {"builtin": "mm1"},
        "arrival_rate": 0.6,
        "policies": ["gittins", "fcfs", "antigittins"],
        "horizon": 1000.0,
        "warmup": 100.0,
        "seeds": [1, 2],
        "r_grid": {"min": 0.01, "max": 100.0, "points": 50, "spacing": "log"},
        "output_dir": "out"
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ScenarioConfig::from_json(SAMPLE).unwrap();
        assert_eq!(c.policies[2], PolicyKind::AntiGittins);
        assert_eq!(c.tolerance, 1e-10);
        let again = ScenarioConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("\"min\": 0.01", "\"min\": 0.0"),
            ("\"seeds\": [1, 2]", "\"seeds\": []"),
            ("\"warmup\": 100.0", "\"warmup\": 1000.0"),
            ("\"points\": 50", "\"points\": 1"),
            ("\"log\"", "\"linear\""),
            ("\"fcfs\"", "\"lifo\""),
        ] {
            let text = SAMPLE.replace(from, to);
            assert!(
                matches!(ScenarioConfig::from_json(&text), Err(CliError::Invalid(_))),
                "{to}"
            );
        }
    }

    #[test]
    fn inline_and_builtin_models() {
        let c = ScenarioConfig::from_json(SAMPLE).unwrap();
        let r = c.clone().resolve(Path::new(".")).unwrap();
        assert_eq!(r.batch_rate, 0.6);
        let model = ModelFile::from_chain(&r.chain, Some(0.3));
        let inline = ScenarioConfig {
            model: ModelRef::Inline(model),
            arrival_rate: None,
            ..c
        };
        let again = ScenarioConfig::from_json(&inline.to_json()).unwrap();
        assert_eq!(again, inline);
        assert_eq!(again.resolve(Path::new(".")).unwrap().batch_rate, 0.3);
    }
}
