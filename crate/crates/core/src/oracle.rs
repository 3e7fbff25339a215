//! Exhaustive constrained optimum over small discrete instances.

use serde::{Deserialize, Serialize};

use crate::baselines::{coordinate, CoordinatorKind};
use crate::domain::{enumerate_joint_actions, CoordinationConfig, JointAction};
use crate::error::Result;
use crate::negotiation::{FallbackOperator, Problem, Status};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub joint: JointAction,
    pub utility: f64,
    pub risk: f64,
}

/// Enumerates the joint space and returns the utility-maximising tuple with
/// `Φ = 1`, every `a_i ∈ F_i(s)` and `R_tot ≤ τ`; the first one in
/// enumeration order wins ties. `None` proves that no feasible tuple exists.
pub fn constrained_optimum(p: &Problem<'_>, tau: f64, cap: u128) -> Result<Option<OracleSolution>> {
    let mut best: Option<OracleSolution> = None;
    for joint in enumerate_joint_actions(p.agents, cap)? {
        if !p.execution_feasible(&joint) || !p.phi(&joint)?.phi {
            continue;
        }
        let risk = p.joint_risk(&joint, tau)?;
        if !risk.within_bound {
            continue;
        }
        let utility = p.total_utility(&joint);
        if best.as_ref().is_none_or(|b| utility > b.utility) {
            best = Some(OracleSolution {
                joint,
                utility,
                risk: risk.total,
            });
        }
    }
    Ok(best)
}

/// Why a coordinator failed on an instance, as far as the oracle can tell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    /// The oracle proves the instance infeasible.
    NoFeasiblePoint,
    /// Some evaluated proposal was blocked by the joint predicates.
    JointPolicyInteraction,
    /// Only the risk bound blocked acceptance within the round budget.
    RiskBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub coordinator: CoordinatorKind,
    pub optimum: Option<OracleSolution>,
    pub status: Status,
    pub coordinator_utility: Option<f64>,
    /// `optimum − accepted` utility for accepted outcomes.
    pub optimality_gap: Option<f64>,
    /// The accepted tuple passes the oracle's own feasibility test.
    pub accepted_feasible: Option<bool>,
    /// Accepted implies feasible, and infeasible implies failed.
    pub agrees: bool,
    pub failure_cause: Option<FailureCause>,
}

/// Runs `kind` once and compares it with the exhaustive optimum.
pub fn compare_with_oracle(
    p: &Problem<'_>,
    kind: CoordinatorKind,
    cfg: &CoordinationConfig,
    cap: u128,
) -> Result<OracleComparison> {
    let optimum = constrained_optimum(p, cfg.tau, cap)?;
    let outcome = coordinate(kind, p, cfg, &FallbackOperator::new(), 0)?;
    let accepted = outcome.joint.as_ref().filter(|_| outcome.status == Status::Accepted);
    let accepted_feasible = match accepted {
        Some(j) => Some(p.is_compliant(j, cfg.tau)?),
        None => None,
    };
    let coordinator_utility = accepted.map(|j| p.total_utility(j));
    let optimality_gap = match (&optimum, coordinator_utility) {
        (Some(o), Some(u)) => Some(o.utility - u),
        _ => None,
    };
    let agrees = accepted_feasible.unwrap_or(true) && (optimum.is_some() || outcome.status == Status::Failed);
    let failure_cause = (outcome.status == Status::Failed).then(|| {
        if optimum.is_none() {
            FailureCause::NoFeasiblePoint
        } else if outcome.rounds.iter().any(|r| r.violates_policy()) {
            FailureCause::JointPolicyInteraction
        } else {
            FailureCause::RiskBudget
        }
    });
    Ok(OracleComparison {
        coordinator: kind,
        optimum,
        status: outcome.status,
        coordinator_utility,
        optimality_gap,
        accepted_feasible,
        agrees,
        failure_cause,
    })
}
