//! Structured audit events emitted by every coordinator.

use serde::{Deserialize, Serialize};

use crate::domain::{ActionValue, DualUpdateRule, JointAction};
use crate::policy::PredicateVerdict;
use crate::projection::ProjectionOutcome;
use crate::risk::AgentRisk;

/// Version of the persisted audit record layout.
pub const AUDIT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    /// The shared multiplier loop used all `K_max` rounds.
    IterationBudget,
    /// A single-shot coordinator produced a tuple with `Φ = 0`.
    PolicyCheck,
    /// Some per-agent multiplier was still moving after `K_max` rounds.
    Unsettled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackSource {
    LastCompliant,
    SafeDefaults,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event_kind", content = "payload")]
pub enum EventBody {
    Proposal {
        action: ActionValue,
        utility: f64,
        risk: f64,
        shaped: f64,
        lambda: f64,
    },
    Projection {
        before: ActionValue,
        after: Option<ActionValue>,
        outcome: ProjectionOutcome,
        distance: f64,
        candidates_examined: usize,
    },
    RejectToSafeDefault {
        rejected: ActionValue,
        safe_default: ActionValue,
    },
    RiskEval {
        per_agent: Vec<AgentRisk>,
        total: f64,
        threshold: f64,
        /// Previous round's total, kept for the record only.
        r_prev: Option<f64>,
    },
    PhiVerdict {
        phi: bool,
        /// Per-agent execution feasibility of the evaluated tuple.
        feasible: bool,
        verdicts: Vec<PredicateVerdict>,
    },
    LambdaUpdate {
        rule: DualUpdateRule,
        before: f64,
        after: f64,
        observed: f64,
        threshold: f64,
    },
    Accept {
        joint: JointAction,
        total_risk: f64,
    },
    Fail {
        reason: FailReason,
        iterations: u32,
    },
    Fallback {
        joint: JointAction,
        source: FallbackSource,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Proposal { .. } => "Proposal",
            EventBody::Projection { .. } => "Projection",
            EventBody::RejectToSafeDefault { .. } => "RejectToSafeDefault",
            EventBody::RiskEval { .. } => "RiskEval",
            EventBody::PhiVerdict { .. } => "PhiVerdict",
            EventBody::LambdaUpdate { .. } => "LambdaUpdate",
            EventBody::Accept { .. } => "Accept",
            EventBody::Fail { .. } => "Fail",
            EventBody::Fallback { .. } => "Fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub episode_id: u64,
    pub iteration: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<String>,
    /// Logical counter, strictly increasing within an episode.
    pub timestamp: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Append-only event buffer for one episode.
#[derive(Debug, Clone, Default)]
pub struct AuditTrail {
    episode_id: u64,
    events: Vec<AuditEvent>,
}

impl AuditTrail {
    pub fn new(episode_id: u64) -> Self {
        AuditTrail {
            episode_id,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, iteration: u32, agent_id: Option<&str>, body: EventBody) {
        let timestamp = self.events.len() as u64;
        self.events.push(AuditEvent {
            episode_id: self.episode_id,
            iteration,
            agent_id: agent_id.map(str::to_string),
            timestamp,
            body,
        });
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<AuditEvent> {
        self.events
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_round_trips_through_json() {
        let mut trail = AuditTrail::new(3);
        trail.push(
            1,
            Some("cfo"),
            EventBody::Proposal {
                action: ActionValue::label_only("approve"),
                utility: 0.1 + 0.2,
                risk: 1.0 / 3.0,
                shaped: 0.0,
                lambda: 0.25,
            },
        );
        trail.push(
            1,
            None,
            EventBody::Fail {
                reason: FailReason::IterationBudget,
                iterations: 10,
            },
        );
        for ev in trail.events() {
            let line = serde_json::to_string(ev).unwrap();
            assert!(line.contains("\"event_kind\""));
            let back: AuditEvent = serde_json::from_str(&line).unwrap();
            assert_eq!(&back, ev);
        }
        assert_eq!(trail.events()[1].timestamp, 1);
        assert_eq!(trail.events()[1].body.kind(), "Fail");
    }
}
