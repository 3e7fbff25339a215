//! `validate-config`: schema, roster and fallback checks for manifests and
//! scenario files.

use std::fs;
use std::path::Path;

use concord_core::domain::validate_roster;
use concord_core::negotiation::FallbackOperator;
use concord_core::scenarios::{sample_episode_states, ScenarioDefinition};
use serde_json::Value;

use crate::error::{io_err, HarnessError, Result};
use crate::manifest::{load_scenario_file, RunManifest, MANIFEST_SCHEMA, SCENARIO_SCHEMA};

/// States sampled per scenario when checking rosters and the fallback.
pub const VALIDATION_STATES: u64 = 1000;

#[derive(Debug, Clone, Default)]
pub struct ValidationOutcome {
    pub checked: Vec<String>,
    pub problems: Vec<String>,
}

impl ValidationOutcome {
    pub fn is_valid(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Roster validation and the fallback invariant on sampled states.
pub fn check_scenario(def: &ScenarioDefinition, tau: f64, states: u64, out: &mut ValidationOutcome) {
    let before = out.problems.len();
    if !(def.tau_default.is_finite() && def.tau_default > 0.0) {
        out.problems.push(format!("{}: tau_default must be positive", def.id));
    }
    for e in 0..states {
        let s = sample_episode_states(def, e);
        let report = validate_roster(&def.roster, &s, Some(&def.risk_profile), Some(&def.bundle));
        for f in report.findings {
            out.problems.push(format!("{} episode {e}: {f:?}", def.id));
        }
        if let Err(err) = FallbackOperator::verify(&def.problem(&s), tau) {
            out.problems.push(format!("{} episode {e}: {err}", def.id));
        }
        if out.problems.len() > before + 20 {
            out.problems.push(format!("{}: further problems suppressed", def.id));
            break;
        }
    }
    out.checked.push(format!(
        "{} ({} agents, {states} sampled states)",
        def.id,
        def.roster.len()
    ));
}

pub fn validate_file(path: &Path) -> Result<ValidationOutcome> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        record_index: 0,
        message: e.to_string(),
    })?;
    let mut out = ValidationOutcome::default();
    match v.get("schema").and_then(Value::as_str) {
        Some(MANIFEST_SCHEMA) => {
            let m = RunManifest::load(path)?;
            if let Err(e) = m.validate() {
                out.problems.push(e.to_string());
                return Ok(out);
            }
            for &id in &m.scenarios {
                let def = m.scenario(id)?;
                let cfg = m.config_for(&def);
                let tau = m
                    .tau_grid
                    .as_ref()
                    .map_or(cfg.tau, |g| g.iter().copied().fold(f64::INFINITY, f64::min));
                check_scenario(&def, tau, VALIDATION_STATES, &mut out);
            }
        }
        Some(SCENARIO_SCHEMA) => {
            let def = load_scenario_file(path)?;
            let tau = def.tau_default;
            check_scenario(&def, tau, VALIDATION_STATES, &mut out);
        }
        Some(other) => out.problems.push(format!("unknown schema `{other}`")),
        None => out.problems.push("missing `schema` field".into()),
    }
    Ok(out)
}
