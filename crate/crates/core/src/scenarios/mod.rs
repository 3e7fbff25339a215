//! The three evaluated enterprise scenarios and seeded episode generation.

mod s1;
mod s2;
mod s3;
pub mod sampler;

use serde::{Deserialize, Serialize};

use crate::domain::{ActionSpace, ActionValue, AgentSpec, EnterpriseState, ScenarioId};
use crate::error::{Error, Result};
use crate::expr::{Expr, Value};
use crate::negotiation::Problem;
use crate::policy::PolicyBundle;
use crate::projection::EditDistance;
use crate::risk::{Indicator, RiskProfile};

pub use sampler::{Distribution, StateSampler};

/// Version tag of the shipped scenario parameterisations.
pub const SCENARIO_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDefinition {
    pub id: ScenarioId,
    pub version: String,
    pub seed: u64,
    pub roster: Vec<AgentSpec>,
    pub bundle: PolicyBundle,
    pub risk_profile: RiskProfile,
    pub state_sampler: StateSampler,
    pub tau_default: f64,
}

impl ScenarioDefinition {
    pub fn problem<'a>(&'a self, state: &'a EnterpriseState) -> Problem<'a> {
        Problem::new(&self.roster, state, &self.bundle, &self.risk_profile)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Builds a scenario. The seed only drives episode sampling.
pub fn build_scenario(id: ScenarioId, seed: u64) -> Result<ScenarioDefinition> {
    let def = match id {
        ScenarioId::S1 => s1::build(),
        ScenarioId::S2 => s2::build(),
        ScenarioId::S3 => s3::build(),
        ScenarioId::Synthetic => return Err(Error::UnknownScenario(id.to_string())),
    };
    Ok(def.with_seed(seed))
}

/// Initial state of an episode, a pure function of `(def.seed, episode_index)`.
pub fn sample_episode_states(def: &ScenarioDefinition, episode_index: u64) -> EnterpriseState {
    def.state_sampler.sample(def.id, def.seed, episode_index)
}

/// One action on an agent's ladder: `tier` orders actions by aggressiveness
/// and drives the projection metric, `risk` gives the base indicator value
/// per risk dimension.
pub(crate) struct Rung {
    pub label: &'static str,
    pub tier: f64,
    pub utility: f64,
    pub risk: &'static [f64],
}

pub(crate) const fn rung(label: &'static str, tier: f64, utility: f64, risk: &'static [f64]) -> Rung {
    Rung {
        label,
        tier,
        utility,
        risk,
    }
}

/// Agent whose first rung is the safe default.
pub(crate) fn ladder_agent(id: &str, role: &str, rungs: &[Rung]) -> AgentSpec {
    let actions: Vec<ActionValue> = rungs
        .iter()
        .map(|r| ActionValue::discrete(r.label, [("tier", Value::Num(r.tier))]))
        .collect();
    let max_tier = rungs.iter().map(|r| r.tier).fold(1.0, f64::max);
    AgentSpec {
        agent_id: id.to_string(),
        role: role.to_string(),
        safe_default: actions[0].clone(),
        action_space: ActionSpace::Discrete(actions),
        utility_fn: Expr::label_table(&rungs.iter().map(|r| (r.label, r.utility)).collect::<Vec<_>>(), 0.0),
        edit_distance: EditDistance::default().with_range("tier", max_tier),
    }
}

/// Registers `base(label) × exposure_d(s)` for every dimension, with
/// `r_max = max base × exposure_max_d`.
pub(crate) fn register_ladder_risk(profile: &mut RiskProfile, id: &str, rungs: &[Rung], exposure: &[(Expr, f64)]) {
    let dims = profile.dimensions.clone();
    for (d, dim) in dims.iter().enumerate() {
        let table: Vec<(&str, f64)> = rungs.iter().map(|r| (r.label, r.risk[d])).collect();
        let max_base = table.iter().map(|(_, b)| *b).fold(0.0, f64::max);
        let (expo, expo_max) = &exposure[d];
        profile.register(
            id,
            dim,
            Indicator::new(
                Expr::Mul(vec![Expr::label_table(&table, 0.0), expo.clone()]),
                max_base * expo_max,
            ),
        );
    }
}

pub(crate) fn labels(rungs: &[Rung], from_tier: f64) -> Vec<&'static str> {
    rungs.iter().filter(|r| r.tier >= from_tier).map(|r| r.label).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_roster;
    use crate::negotiation::FallbackOperator;

    #[test]
    fn rosters_have_expected_sizes_and_roles() {
        let s1 = build_scenario(ScenarioId::S1, 1).unwrap();
        let ids: Vec<_> = s1.roster.iter().map(|a| a.agent_id.as_str()).collect();
        assert_eq!(ids, ["requester", "manager", "compliance", "cfo"]);
        assert_eq!(build_scenario(ScenarioId::S2, 1).unwrap().roster.len(), 3);
        let s3 = build_scenario(ScenarioId::S3, 1).unwrap();
        assert_eq!(s3.roster.len(), 5);
        assert!(s3.bundle.feasibility.iter().any(|r| r.window.is_some()));
        assert!(matches!(
            build_scenario(ScenarioId::Synthetic, 1),
            Err(Error::UnknownScenario(_))
        ));
    }

    #[test]
    fn deterministic_build_and_sampling() {
        for id in ScenarioId::EVALUATED {
            let a = build_scenario(id, 42).unwrap();
            assert_eq!(a, build_scenario(id, 42).unwrap());
            assert_eq!(sample_episode_states(&a, 0), sample_episode_states(&a, 0));
            let b = build_scenario(id, 43).unwrap();
            assert!((0..10).any(|e| sample_episode_states(&a, e) != sample_episode_states(&b, e)));
        }
    }

    #[test]
    fn validation_and_fallback_hold_on_sampled_states() {
        for id in ScenarioId::EVALUATED {
            let def = build_scenario(id, 7).unwrap();
            for e in 0..1000 {
                let s = sample_episode_states(&def, e);
                let report = validate_roster(&def.roster, &s, Some(&def.risk_profile), Some(&def.bundle));
                assert!(report.is_valid(), "{id} ep {e}: {:?}", report.findings);
                FallbackOperator::verify(&def.problem(&s), def.tau_default).unwrap();
            }
        }
    }

    #[test]
    fn definitions_round_trip_through_json() {
        for id in ScenarioId::EVALUATED {
            let def = build_scenario(id, 3).unwrap();
            let text = serde_json::to_string(&def).unwrap();
            let back: ScenarioDefinition = serde_json::from_str(&text).unwrap();
            assert_eq!(back, def);
        }
    }
}
