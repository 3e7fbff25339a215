//! Coordinator versus exhaustive optimum on scenario episodes or random
//! small instances.

use concord_core::baselines::CoordinatorKind;
use concord_core::domain::{CoordinationConfig, ORACLE_CAP};
use concord_core::negotiation::{Problem, Status};
use concord_core::oracle::{compare_with_oracle, FailureCause, OracleComparison};
use concord_core::scenarios::{sample_episode_states, ScenarioDefinition};
use concord_core::synthetic::{random_instance, rng};
use concord_core::verifier::guarantees_compliance;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub instance: u64,
    pub comparison: OracleComparison,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub instances: u64,
    pub oracle_infeasible: u64,
    pub accepted: u64,
    pub accepted_feasible: u64,
    pub disagreements: u64,
    pub mean_gap: Option<f64>,
    pub max_gap: Option<f64>,
    pub failed_no_feasible_point: u64,
    pub failed_joint_policy: u64,
    pub failed_risk_budget: u64,
}

impl OracleSummary {
    pub fn from_rows(rows: &[OracleRow]) -> Self {
        let mut s = OracleSummary {
            instances: rows.len() as u64,
            ..Default::default()
        };
        let mut gaps = Vec::new();
        for r in rows {
            let c = &r.comparison;
            if c.optimum.is_none() {
                s.oracle_infeasible += 1;
            }
            if c.status == Status::Accepted {
                s.accepted += 1;
            }
            if c.accepted_feasible == Some(true) {
                s.accepted_feasible += 1;
                gaps.extend(c.optimality_gap);
            }
            if !c.agrees {
                s.disagreements += 1;
            }
            match c.failure_cause {
                Some(FailureCause::NoFeasiblePoint) => s.failed_no_feasible_point += 1,
                Some(FailureCause::JointPolicyInteraction) => s.failed_joint_policy += 1,
                Some(FailureCause::RiskBudget) => s.failed_risk_budget += 1,
                None => {}
            }
        }
        if !gaps.is_empty() {
            s.mean_gap = Some(gaps.iter().sum::<f64>() / gaps.len() as f64);
            s.max_gap = gaps.iter().copied().reduce(f64::max);
        }
        s
    }

    /// Disagreement only counts against coordinators that promise compliance.
    pub fn acceptable(&self, kind: CoordinatorKind) -> bool {
        !guarantees_compliance(kind) || self.disagreements == 0
    }
}

/// Compares `kind` with the oracle on the first `episodes` episodes of `def`.
pub fn scenario_oracle(
    def: &ScenarioDefinition,
    kind: CoordinatorKind,
    cfg: &CoordinationConfig,
    episodes: u64,
) -> Result<Vec<OracleRow>> {
    let rows = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let s = sample_episode_states(def, e);
            compare_with_oracle(&def.problem(&s), kind, cfg, ORACLE_CAP).map(|comparison| OracleRow {
                instance: e,
                comparison,
            })
        })
        .collect::<concord_core::Result<Vec<_>>>()?;
    Ok(rows)
}

/// Compares `kind` with the oracle on random instances with at most three
/// agents and six actions each; instance `k` is generated from `seed + k`.
pub fn synthetic_oracle(kind: CoordinatorKind, seed: u64, instances: u64) -> Result<Vec<OracleRow>> {
    let rows = (0..instances)
        .into_par_iter()
        .map(|k| {
            let inst = random_instance(&mut rng(seed.wrapping_add(k)), 3, 6, true);
            let p = Problem::new(&inst.agents, &inst.state, &inst.bundle, &inst.risk);
            compare_with_oracle(&p, kind, &inst.cfg, ORACLE_CAP).map(|comparison| OracleRow {
                instance: k,
                comparison,
            })
        })
        .collect::<concord_core::Result<Vec<_>>>()?;
    Ok(rows)
}

pub fn render_summary(kind: CoordinatorKind, s: &OracleSummary) -> String {
    let gap = |g: Option<f64>| g.map_or("-".to_string(), |v| format!("{v:.4}"));
    format!(
        "coordinator {kind}: {} instances, {} oracle-infeasible, {} accepted ({} oracle-feasible), \
         {} disagreements, gap mean {} max {}; failures: {} no feasible point, {} joint policy, {} risk budget\n",
        s.instances,
        s.oracle_infeasible,
        s.accepted,
        s.accepted_feasible,
        s.disagreements,
        gap(s.mean_gap),
        gap(s.max_gap),
        s.failed_no_feasible_point,
        s.failed_joint_policy,
        s.failed_risk_budget,
    )
}
