//! Weighted-additive risk model and aggregate risk reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{ActionValue, AgentSpec, EnterpriseState, JointAction};
use crate::error::{Error, Result};
use crate::expr::{Expr, Scope};

/// Per-agent, per-dimension risk indicator `r_{i,d}(a_i, s)` with its
/// declared upper bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indicator {
    pub expr: Expr,
    pub r_max: f64,
}

impl Indicator {
    pub fn new(expr: Expr, r_max: f64) -> Self {
        Indicator { expr, r_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    /// Summation order of the dimensions.
    pub dimensions: Vec<String>,
    pub weights: BTreeMap<String, f64>,
    /// agent id → dimension → indicator
    pub indicators: BTreeMap<String, BTreeMap<String, Indicator>>,
}

impl RiskProfile {
    pub fn new(weights: &[(&str, f64)]) -> Self {
        RiskProfile {
            dimensions: weights.iter().map(|(d, _)| d.to_string()).collect(),
            weights: weights.iter().map(|(d, w)| (d.to_string(), *w)).collect(),
            indicators: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, agent_id: &str, dimension: &str, indicator: Indicator) {
        self.indicators
            .entry(agent_id.to_string())
            .or_default()
            .insert(dimension.to_string(), indicator);
    }

    pub fn weight(&self, dimension: &str) -> f64 {
        self.weights.get(dimension).copied().unwrap_or(0.0)
    }

    /// Raw indicator value for one dimension, `None` if not registered.
    pub fn indicator_value(
        &self,
        agent_id: &str,
        dimension: &str,
        action: &ActionValue,
        state: &EnterpriseState,
    ) -> Option<f64> {
        let ind = self.indicators.get(agent_id)?.get(dimension)?;
        Some(ind.expr.eval_f64(&Scope::agent(state, agent_id, action)))
    }

    /// `R_i(a_i) = Σ_d w_d · r_{i,d}(a_i, s)`, summed in `dimensions` order.
    pub fn agent_risk(&self, agent_id: &str, action: &ActionValue, state: &EnterpriseState) -> Result<f64> {
        let dims = self
            .indicators
            .get(agent_id)
            .filter(|d| !d.is_empty())
            .ok_or_else(|| Error::MissingIndicator(agent_id.to_string()))?;
        let scope = Scope::agent(state, agent_id, action);
        let mut total = 0.0;
        for d in &self.dimensions {
            if let Some(ind) = dims.get(d) {
                total += self.weight(d) * ind.expr.eval_f64(&scope);
            }
        }
        Ok(total)
    }

    /// Indicators whose value at `action` lies outside `[0, r_max]`.
    pub fn bound_violations(
        &self,
        agent_id: &str,
        action: &ActionValue,
        state: &EnterpriseState,
    ) -> Vec<(String, f64)> {
        let Some(dims) = self.indicators.get(agent_id) else {
            return Vec::new();
        };
        let scope = Scope::agent(state, agent_id, action);
        dims.iter()
            .filter_map(|(d, ind)| {
                let v = ind.expr.eval_f64(&scope);
                (!(0.0..=ind.r_max).contains(&v)).then(|| (d.clone(), v))
            })
            .collect()
    }

    /// Upper bound `r̄_i = Σ_d w_d · r_max_d` for an agent.
    pub fn agent_bound(&self, agent_id: &str) -> f64 {
        let Some(dims) = self.indicators.get(agent_id) else {
            return 0.0;
        };
        self.dimensions
            .iter()
            .filter_map(|d| dims.get(d).map(|ind| self.weight(d) * ind.r_max))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRisk {
    pub agent_id: String,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub per_agent: Vec<AgentRisk>,
    pub total: f64,
    pub threshold: f64,
    pub ratio: f64,
    pub within_bound: bool,
}

impl RiskReport {
    /// Builds a report from per-agent risks summed left to right.
    pub fn from_parts(per_agent: Vec<AgentRisk>, tau: f64) -> Self {
        let total = per_agent.iter().fold(0.0, |acc, r| acc + r.risk);
        RiskReport {
            per_agent,
            total,
            threshold: tau,
            ratio: total / tau,
            within_bound: total <= tau,
        }
    }

    pub fn risk_of(&self, agent_id: &str) -> Option<f64> {
        self.per_agent.iter().find(|r| r.agent_id == agent_id).map(|r| r.risk)
    }
}

pub fn agent_risk(profile: &RiskProfile, agent_id: &str, action: &ActionValue, state: &EnterpriseState) -> Result<f64> {
    profile.agent_risk(agent_id, action, state)
}

/// Aggregate risk of a joint action, folded in roster order.
pub fn joint_risk(
    profile: &RiskProfile,
    agents: &[AgentSpec],
    joint: &JointAction,
    state: &EnterpriseState,
    tau: f64,
) -> Result<RiskReport> {
    joint.check_roster(agents)?;
    let per_agent = joint
        .entries
        .iter()
        .map(|e| {
            profile.agent_risk(&e.agent_id, &e.action, state).map(|risk| AgentRisk {
                agent_id: e.agent_id.clone(),
                risk,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskReport::from_parts(per_agent, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ActionSpace, ScenarioId};
    use crate::projection::EditDistance;

    fn state() -> EnterpriseState {
        EnterpriseState::new(ScenarioId::Synthetic, 0).with("amount", 50_000.0)
    }

    #[test]
    fn zero_weights_give_zero_risk() {
        let mut p = RiskProfile::new(&[("financial", 0.0), ("compliance", 0.0)]);
        p.register("a", "financial", Indicator::new(Expr::num(0.9), 1.0));
        p.register("a", "compliance", Indicator::new(Expr::num(0.4), 1.0));
        let r = p.agent_risk("a", &ActionValue::label_only("x"), &state()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn equal_weights_unit_indicators() {
        let mut p = RiskProfile::new(&[("financial", 0.5), ("compliance", 0.5)]);
        p.register("a", "financial", Indicator::new(Expr::num(1.0), 1.0));
        p.register("a", "compliance", Indicator::new(Expr::num(1.0), 1.0));
        let r = p.agent_risk("a", &ActionValue::label_only("x"), &state()).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn amount_scaled_indicator_matches_hand_computation() {
        // financial = 0.4 * amount/100k * rating factor 1.5 for "pay"; compliance = 0.2
        let mut p = RiskProfile::new(&[("financial", 0.7), ("compliance", 0.3)]);
        let fin = Expr::Mul(vec![
            Expr::label_table(&[("pay", 0.4)], 0.0),
            Expr::state("amount"),
            Expr::num(1.0 / 100_000.0),
            Expr::num(1.5),
        ]);
        p.register("a", "financial", Indicator::new(fin, 1.0));
        p.register(
            "a",
            "compliance",
            Indicator::new(Expr::label_table(&[("pay", 0.2)], 0.0), 1.0),
        );
        let r = p.agent_risk("a", &ActionValue::label_only("pay"), &state()).unwrap();
        let fin_value = 0.4 * 50_000.0 * (1.0 / 100_000.0) * 1.5;
        let expected = 0.0 + 0.7 * fin_value + 0.3 * 0.2;
        assert_eq!(r, expected);
    }

    #[test]
    fn missing_indicator_errors() {
        let p = RiskProfile::new(&[("financial", 1.0)]);
        assert_eq!(
            p.agent_risk("ghost", &ActionValue::label_only("x"), &state()),
            Err(Error::MissingIndicator("ghost".into()))
        );
    }

    #[test]
    fn joint_report_arithmetic() {
        let mk = |id: &str| AgentSpec {
            agent_id: id.into(),
            role: String::new(),
            action_space: ActionSpace::Discrete(vec![ActionValue::label_only("x")]),
            utility_fn: Expr::num(1.0),
            safe_default: ActionValue::label_only("x"),
            edit_distance: EditDistance::default(),
        };
        let agents = vec![mk("a"), mk("b")];
        let mut p = RiskProfile::new(&[("operational", 1.0)]);
        p.register("a", "operational", Indicator::new(Expr::num(0.4), 1.0));
        p.register("b", "operational", Indicator::new(Expr::num(0.5), 1.0));
        let joint = JointAction::from_roster(&agents, vec![ActionValue::label_only("x"); 2]);
        let report = joint_risk(&p, &agents, &joint, &state(), 1.0).unwrap();
        assert_eq!(report.total, 0.9);
        assert_eq!(report.ratio, 0.9);
        assert!(report.within_bound);
    }
}
