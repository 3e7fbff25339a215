//! Run manifests, configuration overrides and scenario files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use concord_core::baselines::CoordinatorKind;
use concord_core::domain::{CoordinationConfig, DualUpdateRule, ScenarioId};
use concord_core::metrics::scenario_config;
use concord_core::scenarios::{build_scenario, ScenarioDefinition};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

pub const MANIFEST_SCHEMA: &str = "concord.manifest/1";
pub const SCENARIO_SCHEMA: &str = "concord.scenario/1";

pub const DEFAULT_EPISODES: u64 = 500;
pub const DEFAULT_SEED: u64 = 42;

fn default_episodes() -> u64 {
    DEFAULT_EPISODES
}

/// Optional replacements for the coordination defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_update_rule: Option<DualUpdateRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl ConfigOverrides {
    pub fn apply(&self, mut cfg: CoordinationConfig) -> CoordinationConfig {
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.lambda0 {
            cfg.lambda0 = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.k_max {
            cfg.k_max = v;
        }
        if let Some(v) = self.dual_update_rule {
            cfg.dual_update_rule = v;
        }
        if let Some(v) = self.eta0 {
            cfg.eta0 = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        cfg
    }
}

/// One emitted file, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema: String,
    pub scenarios: Vec<ScenarioId>,
    pub coordinators: Vec<CoordinatorKind>,
    #[serde(default = "default_episodes")]
    pub episodes: u64,
    pub seed: u64,
    #[serde(default)]
    pub overrides: ConfigOverrides,
    /// When present every run is repeated at each threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_grid: Option<Vec<f64>>,
    /// Scenario definitions loaded from files instead of the built-ins.
    /// Relative paths resolve against the manifest's directory.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scenario_files: BTreeMap<ScenarioId, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(scenarios: Vec<ScenarioId>, coordinators: Vec<CoordinatorKind>, episodes: u64, seed: u64) -> Self {
        RunManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            scenarios,
            coordinators,
            episodes,
            seed,
            overrides: ConfigOverrides::default(),
            tau_grid: None,
            scenario_files: BTreeMap::new(),
            output_dir: None,
            tool_version: None,
            artifacts: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: RunManifest = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            record_index: 0,
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in m.scenario_files.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::ConfigInvalid(m));
        if self.schema != MANIFEST_SCHEMA {
            return bad(format!("unsupported manifest schema `{}`", self.schema));
        }
        if self.scenarios.is_empty() || self.coordinators.is_empty() {
            return bad("at least one scenario and one coordinator are required".into());
        }
        if let Some(s) = self.scenarios.iter().find(|s| !ScenarioId::EVALUATED.contains(s)) {
            return bad(format!("scenario {s} cannot be run"));
        }
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        if let Some(grid) = &self.tau_grid {
            if grid.is_empty() || grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                return bad("tau grid must hold positive finite values".into());
            }
        }
        self.overrides.apply(CoordinationConfig::default()).validate()?;
        Ok(())
    }

    /// Definition of `id` seeded with the manifest seed.
    pub fn scenario(&self, id: ScenarioId) -> Result<ScenarioDefinition> {
        let def = match self.scenario_files.get(&id) {
            Some(path) => {
                let def = load_scenario_file(path)?;
                if def.id != id {
                    return Err(HarnessError::ConfigInvalid(format!(
                        "{} defines {} but is listed for {id}",
                        path.display(),
                        def.id
                    )));
                }
                def
            }
            None => build_scenario(id, 0)?,
        };
        Ok(def.with_seed(self.seed))
    }

    /// Coordination config for one scenario, before any threshold sweep.
    pub fn config_for(&self, def: &ScenarioDefinition) -> CoordinationConfig {
        self.overrides
            .apply(scenario_config(def, &CoordinationConfig::default()))
    }

    /// Thresholds to run for `def`.
    pub fn taus_for(&self, def: &ScenarioDefinition) -> Vec<f64> {
        match &self.tau_grid {
            Some(grid) => grid.clone(),
            None => vec![self.config_for(def).tau],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: String,
    pub scenario: ScenarioDefinition,
}

pub fn scenario_file_text(def: &ScenarioDefinition) -> String {
    let file = ScenarioFile {
        schema: SCENARIO_SCHEMA.to_string(),
        scenario: def.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("scenario definitions serialize");
    text.push('\n');
    text
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioDefinition> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        record_index: 0,
        message: e.to_string(),
    })?;
    if file.schema != SCENARIO_SCHEMA {
        return Err(HarnessError::ConfigInvalid(format!(
            "{}: unsupported scenario schema `{}`",
            path.display(),
            file.schema
        )));
    }
    Ok(file.scenario)
}

/// Parses `lo:hi:step` into an inclusive grid. Values are rounded to 1e-9 so
/// that `0.4:1.4:0.2` yields exactly `0.6`, `0.8` and so on.
pub fn parse_tau_range(spec: &str) -> Result<Vec<f64>> {
    let bad = || HarnessError::ConfigInvalid(format!("tau range `{spec}` is not lo:hi:step"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [lo, hi, step] = parts[..] else {
        return Err(bad());
    };
    if !(lo > 0.0 && hi >= lo && step > 0.0 && lo.is_finite() && hi.is_finite()) {
        return Err(bad());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_range_is_exact_on_decimal_steps() {
        assert_eq!(parse_tau_range("0.4:1.4:0.2").unwrap(), [0.4, 0.6, 0.8, 1.0, 1.2, 1.4]);
        assert_eq!(parse_tau_range("1:1:0.5").unwrap(), [1.0]);
        assert!(parse_tau_range("1:0.5:0.1").is_err());
        assert!(parse_tau_range("0.4:1.4").is_err());
        assert!(parse_tau_range("a:b:c").is_err());
    }

    #[test]
    fn manifest_round_trips_and_validates() {
        let mut m = RunManifest::new(vec![ScenarioId::S1], vec![CoordinatorKind::Camco], 10, 7);
        m.overrides.k_max = Some(5);
        let text = serde_json::to_string(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        back.validate().unwrap();
        let mut bad = m.clone();
        bad.overrides.tau = Some(-1.0);
        assert!(bad.validate().is_err());
        let mut bad = m.clone();
        bad.schema = "concord.manifest/0".into();
        assert!(bad.validate().is_err());
        let mut bad = m;
        bad.scenarios = vec![ScenarioId::Synthetic];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text =
            r#"{"schema":"concord.manifest/1","scenarios":["S1"],"coordinators":["camco"],"seed":1,"episodez":3}"#;
        assert!(serde_json::from_str::<RunManifest>(text).is_err());
        let text = r#"{"schema":"concord.manifest/1","scenarios":["S1"],"coordinators":["camco"],"seed":1}"#;
        assert_eq!(
            serde_json::from_str::<RunManifest>(text).unwrap().episodes,
            DEFAULT_EPISODES
        );
    }

    #[test]
    fn overrides_only_touch_given_fields() {
        let o = ConfigOverrides {
            alpha: Some(1.5),
            ..Default::default()
        };
        let cfg = o.apply(CoordinationConfig::default());
        assert_eq!(cfg.alpha, 1.5);
        assert_eq!(cfg.tau, CoordinationConfig::default().tau);
    }
}
