//! Independent replay of an episode's audit events.
//!
//! Each record is re-derived from the problem definition (utilities, risks,
//! projections, `Φ`, multiplier updates, fallback) and the whole stream is
//! compared against a fresh run of the same coordinator. Divergences carry
//! the absolute record index so a tampered file points at the bad line.

use serde::{Deserialize, Serialize};

use crate::audit::{AuditEvent, EventBody};
use crate::baselines::{coordinate, feasible_response, CoordinatorKind};
use crate::domain::{ActionValue, CoordinationConfig, DualUpdateRule, JointAction};
use crate::error::Result;
use crate::metrics::{policy_violation, unconstrained_optimum, EpisodeRecord};
use crate::negotiation::{FallbackOperator, Problem, Status};
use crate::projection::project;
use crate::shaping::{best_response_scored, lambda_increment, shaped_utility};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// Absolute index of the offending record in its stream.
    pub record_index: usize,
    pub episode_id: u64,
    pub event_kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeVerification {
    pub episode_id: u64,
    pub divergences: Vec<Divergence>,
    /// The executed joint action is policy-infeasible. A divergence for
    /// coordinators that promise compliance, a flag for the others.
    pub violation_flagged: bool,
}

impl EpisodeVerification {
    pub fn is_clean(&self) -> bool {
        self.divergences.is_empty()
    }
}

/// Whether `kind` promises that every accepted tuple is compliant.
pub fn guarantees_compliance(kind: CoordinatorKind) -> bool {
    matches!(kind, CoordinatorKind::Camco | CoordinatorKind::B3StaticRules)
}

struct Checker<'p, 'a> {
    p: &'p Problem<'a>,
    kind: CoordinatorKind,
    first_index: usize,
    out: Vec<Divergence>,
}

impl Checker<'_, '_> {
    fn flag(&mut self, pos: usize, ev: &AuditEvent, detail: impl Into<String>) {
        self.out.push(Divergence {
            record_index: self.first_index + pos,
            episode_id: ev.episode_id,
            event_kind: ev.body.kind().to_string(),
            detail: detail.into(),
        });
    }

    fn agent_index(&self, ev: &AuditEvent) -> Option<usize> {
        let id = ev.agent_id.as_deref()?;
        self.p.agents.iter().position(|a| a.agent_id == id)
    }

    fn expected_proposal(&self, i: usize, lambda: f64) -> Result<ActionValue> {
        let agent = &self.p.agents[i];
        Ok(match self.kind {
            CoordinatorKind::B2CentralizedGreedy | CoordinatorKind::B4LagrangianPerAgent => {
                feasible_response(self.p, agent, lambda)?.action
            }
            _ => best_response_scored(agent, self.p.state, lambda, self.p.risk)?.action,
        })
    }
}

fn eq(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

/// Verifies the events of one episode. `first_index` is the absolute index
/// of `events[0]` in the enclosing stream.
pub fn verify_episode(
    p: &Problem<'_>,
    kind: CoordinatorKind,
    cfg: &CoordinationConfig,
    events: &[AuditEvent],
    first_index: usize,
) -> Result<EpisodeVerification> {
    let mut c = Checker {
        p,
        kind,
        first_index,
        out: Vec::new(),
    };
    let episode_id = events.first().map(|e| e.episode_id).unwrap_or(0);
    let n = p.agents.len();
    let mut current: Vec<Option<ActionValue>> = vec![None; n];
    let mut last_risk: Vec<Option<f64>> = vec![None; n];
    let mut lambda = cfg.lambda0;
    let mut agent_lambda = vec![cfg.lambda0; n];
    let mut last_total: Option<f64> = None;
    let mut terminal = false;
    let mut violation_flagged = false;

    for (pos, ev) in events.iter().enumerate() {
        if ev.episode_id != episode_id {
            c.flag(
                pos,
                ev,
                format!("episode id {} inside episode {episode_id}", ev.episode_id),
            );
        }
        if ev.timestamp != pos as u64 {
            c.flag(pos, ev, format!("timestamp {} at position {pos}", ev.timestamp));
        }
        if terminal && !matches!(ev.body, EventBody::Fallback { .. }) {
            c.flag(pos, ev, "event after the terminal record");
        }
        let mut step = || -> Result<()> {
            match &ev.body {
                EventBody::Proposal {
                    action,
                    utility,
                    risk,
                    shaped,
                    lambda: used,
                } => {
                    let Some(i) = c.agent_index(ev) else {
                        c.flag(pos, ev, "proposal without a roster agent");
                        return Ok(());
                    };
                    let agent = &p.agents[i];
                    let expected_lambda = match kind {
                        CoordinatorKind::Camco => lambda,
                        CoordinatorKind::B4LagrangianPerAgent => agent_lambda[i],
                        _ => 0.0,
                    };
                    if !eq(*used, expected_lambda) {
                        c.flag(pos, ev, format!("multiplier {used}, expected {expected_lambda}"));
                    }
                    if !agent.action_space.contains(action) {
                        c.flag(pos, ev, format!("`{action}` is outside the action space"));
                        return Ok(());
                    }
                    let u = agent.utility(p.state, action);
                    let r = p.risk.agent_risk(&agent.agent_id, action, p.state)?;
                    if !eq(*utility, u) {
                        c.flag(pos, ev, format!("utility {utility}, recomputed {u}"));
                    }
                    if !eq(*risk, r) {
                        c.flag(pos, ev, format!("risk {risk}, recomputed {r}"));
                    }
                    let sh = shaped_utility(u, r, expected_lambda);
                    if !eq(*shaped, sh) {
                        c.flag(pos, ev, format!("shaped utility {shaped}, recomputed {sh}"));
                    }
                    let best = c.expected_proposal(i, expected_lambda)?;
                    if &best != action {
                        c.flag(pos, ev, format!("proposal `{action}`, best response is `{best}`"));
                    }
                    current[i] = Some(action.clone());
                    last_risk[i] = Some(r);
                }
                EventBody::Projection {
                    before,
                    after,
                    outcome,
                    distance,
                    candidates_examined,
                } => {
                    let Some(i) = c.agent_index(ev) else {
                        c.flag(pos, ev, "projection without a roster agent");
                        return Ok(());
                    };
                    if current[i].as_ref() != Some(before) {
                        c.flag(pos, ev, "projected action differs from the proposal");
                    }
                    let r = project(&p.agents[i], p.state, p.bundle, before)?;
                    if r.action.as_ref() != after.as_ref()
                        || r.outcome != *outcome
                        || !eq(r.distance, *distance)
                        || r.candidates_examined != *candidates_examined
                    {
                        c.flag(
                            pos,
                            ev,
                            format!("projection recomputes to {:?} at distance {}", r.action, r.distance),
                        );
                    }
                    if let Some(a) = after {
                        current[i] = Some(a.clone());
                    }
                }
                EventBody::RejectToSafeDefault { rejected, safe_default } => {
                    let Some(i) = c.agent_index(ev) else {
                        c.flag(pos, ev, "substitution without a roster agent");
                        return Ok(());
                    };
                    if safe_default != &p.agents[i].safe_default {
                        c.flag(pos, ev, "substituted action is not the safe default");
                    }
                    let _ = rejected;
                    current[i] = Some(safe_default.clone());
                }
                EventBody::RiskEval {
                    per_agent,
                    total,
                    threshold,
                    ..
                } => {
                    let Some(joint) = joint_of(p, &current) else {
                        c.flag(pos, ev, "risk evaluated before every agent acted");
                        return Ok(());
                    };
                    let report = p.joint_risk(&joint, cfg.tau)?;
                    if !eq(*threshold, cfg.tau) {
                        c.flag(pos, ev, format!("threshold {threshold}, configured {}", cfg.tau));
                    }
                    let same_parts = per_agent.len() == report.per_agent.len()
                        && per_agent
                            .iter()
                            .zip(&report.per_agent)
                            .all(|(a, b)| a.agent_id == b.agent_id && eq(a.risk, b.risk));
                    if !same_parts || !eq(*total, report.total) {
                        c.flag(pos, ev, format!("total risk {total}, recomputed {}", report.total));
                    }
                    last_total = Some(report.total);
                }
                EventBody::PhiVerdict {
                    phi,
                    feasible,
                    verdicts,
                } => {
                    let Some(joint) = joint_of(p, &current) else {
                        c.flag(pos, ev, "policy evaluated before every agent acted");
                        return Ok(());
                    };
                    let v = p.phi(&joint)?;
                    let f = p.execution_feasible(&joint);
                    if v.phi != *phi || f != *feasible || &v.verdicts != verdicts {
                        c.flag(
                            pos,
                            ev,
                            format!(
                                "verdict Φ={phi} feasible={feasible}, recomputed Φ={} feasible={f}",
                                v.phi
                            ),
                        );
                    }
                }
                EventBody::LambdaUpdate {
                    rule,
                    before,
                    after,
                    observed,
                    threshold,
                } => match c.agent_index(ev) {
                    None => {
                        if kind != CoordinatorKind::Camco {
                            c.flag(pos, ev, "shared multiplier update outside the negotiation loop");
                        }
                        if *rule != cfg.dual_update_rule {
                            c.flag(pos, ev, format!("rule {rule:?}, configured {:?}", cfg.dual_update_rule));
                        }
                        if !eq(*before, lambda) {
                            c.flag(pos, ev, format!("multiplier before {before}, expected {lambda}"));
                        }
                        let obs = last_total.unwrap_or(f64::NAN);
                        if !eq(*observed, obs) || !eq(*threshold, cfg.tau) {
                            c.flag(pos, ev, format!("observed {observed}, last evaluated {obs}"));
                        }
                        let next = lambda + lambda_increment(cfg.dual_update_rule, obs, cfg.tau, ev.iteration, cfg);
                        if !eq(*after, next) {
                            c.flag(pos, ev, format!("multiplier after {after}, recomputed {next}"));
                        }
                        lambda = next;
                    }
                    Some(i) => {
                        let budget = cfg.tau / n.max(1) as f64;
                        if kind != CoordinatorKind::B4LagrangianPerAgent || *rule != DualUpdateRule::HingeAscent {
                            c.flag(pos, ev, "per-agent multiplier update outside per-agent ascent");
                        }
                        let obs = last_risk[i].unwrap_or(f64::NAN);
                        if !eq(*before, agent_lambda[i]) || !eq(*observed, obs) || !eq(*threshold, budget) {
                            c.flag(pos, ev, "per-agent update inputs differ from the replayed values");
                        }
                        let next = agent_lambda[i] + cfg.alpha * (obs - budget).max(0.0);
                        if !eq(*after, next) {
                            c.flag(pos, ev, format!("multiplier after {after}, recomputed {next}"));
                        }
                        agent_lambda[i] = next;
                    }
                },
                EventBody::Accept { joint, total_risk } => {
                    terminal = true;
                    if joint_of(p, &current).as_ref() != Some(joint) {
                        c.flag(pos, ev, "accepted tuple differs from the evaluated one");
                    }
                    let r = p.joint_risk(joint, cfg.tau)?;
                    if !eq(*total_risk, r.total) {
                        c.flag(pos, ev, format!("accepted risk {total_risk}, recomputed {}", r.total));
                    }
                    let violating = policy_violation(p, joint)?;
                    violation_flagged = violating;
                    if guarantees_compliance(kind) && (violating || (kind == CoordinatorKind::Camco && !r.within_bound))
                    {
                        c.flag(pos, ev, "accepted tuple is not compliant");
                    }
                }
                EventBody::Fail { iterations, .. } => {
                    terminal = true;
                    let expected = if kind == CoordinatorKind::Camco { cfg.k_max } else { 1 };
                    if *iterations != expected {
                        c.flag(
                            pos,
                            ev,
                            format!("{iterations} iterations recorded, expected {expected}"),
                        );
                    }
                }
                EventBody::Fallback { joint, source } => {
                    match FallbackOperator::new().resolve(p, cfg.tau) {
                        Ok((fb, src)) if &fb == joint && src == *source => {}
                        Ok(_) => c.flag(pos, ev, "fallback differs from the resolved fallback"),
                        Err(_) => c.flag(pos, ev, "fallback recorded for an instance without one"),
                    }
                    if !p.is_compliant(joint, cfg.tau)? {
                        c.flag(pos, ev, "fallback is not compliant");
                    }
                }
            }
            Ok(())
        };
        if let Err(e) = step() {
            c.flag(pos, ev, format!("record cannot be re-derived: {e}"));
        }
    }
    if !terminal {
        if let Some(last) = events.last() {
            c.flag(events.len() - 1, last, "episode has no terminal record");
        }
    }

    // whole-stream comparison against a fresh run
    let fresh = coordinate(kind, p, cfg, &FallbackOperator::new(), episode_id)?;
    let mismatch = fresh
        .audit
        .iter()
        .zip(events)
        .position(|(a, b)| a != b)
        .or_else(|| (fresh.audit.len() != events.len()).then(|| fresh.audit.len().min(events.len())));
    if let Some(pos) = mismatch {
        let ev = events.get(pos).or(events.last());
        let already = c.out.iter().any(|d| d.record_index == first_index + pos);
        if let (Some(ev), false) = (ev, already) {
            let detail = match fresh.audit.get(pos) {
                Some(expected) => format!("replay produces a different {} record", expected.body.kind()),
                None => "record not produced by replay".to_string(),
            };
            c.flag(pos.min(events.len().saturating_sub(1)), ev, detail);
        }
    }

    let mut divergences = c.out;
    divergences.sort_by_key(|d| d.record_index);
    Ok(EpisodeVerification {
        episode_id,
        divergences,
        violation_flagged,
    })
}

fn joint_of(p: &Problem<'_>, current: &[Option<ActionValue>]) -> Option<JointAction> {
    let actions: Option<Vec<ActionValue>> = current.iter().cloned().collect();
    actions.map(|a| JointAction::from_roster(p.agents, a))
}

/// Rebuilds the metric record of one episode from its audit events alone.
pub fn record_from_audit(
    p: &Problem<'_>,
    kind: CoordinatorKind,
    episode: u64,
    events: &[AuditEvent],
    tau: f64,
) -> Result<Option<EpisodeRecord>> {
    let mut status = None;
    let mut iterations_used = 0;
    let mut accepted = None;
    let mut fallback = None;
    let mut proposals = 0;
    let mut proposal_violations = 0;
    for ev in events {
        match &ev.body {
            EventBody::PhiVerdict { phi, feasible, .. } => {
                proposals += 1;
                if !(*phi && *feasible) {
                    proposal_violations += 1;
                }
            }
            EventBody::Accept { joint, .. } => {
                status = Some(Status::Accepted);
                iterations_used = if kind == CoordinatorKind::Camco {
                    ev.iteration
                } else {
                    1
                };
                accepted = Some(joint.clone());
            }
            EventBody::Fail { iterations, .. } => {
                status = Some(Status::Failed);
                iterations_used = *iterations;
            }
            EventBody::Fallback { joint, .. } => fallback = Some(joint.clone()),
            _ => {}
        }
    }
    let Some(status) = status else {
        return Ok(None);
    };
    let executed = match status {
        Status::Accepted => accepted.as_ref(),
        Status::Failed => fallback.as_ref(),
    };
    let (accepted_risk, violation) = match &accepted {
        Some(j) => (Some(p.joint_risk(j, tau)?.total), policy_violation(p, j)?),
        None => (None, false),
    };
    Ok(Some(EpisodeRecord {
        episode,
        status,
        iterations_used,
        executed_utility: executed.map(|j| p.total_utility(j)).unwrap_or(0.0),
        optimum_utility: unconstrained_optimum(p),
        accepted_risk,
        violation,
        proposals,
        proposal_violations,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScenarioId;
    use crate::metrics::{run_episode, scenario_config};
    use crate::scenarios::{build_scenario, sample_episode_states};

    #[test]
    fn fresh_streams_verify_and_rebuild_their_records() {
        for id in ScenarioId::EVALUATED {
            let def = build_scenario(id, 11).unwrap();
            let cfg = scenario_config(&def, &CoordinationConfig::default());
            for kind in CoordinatorKind::ALL {
                for e in 0..40 {
                    let (record, outcome) = run_episode(&def, kind, &cfg, e).unwrap();
                    let s = sample_episode_states(&def, e);
                    let p = def.problem(&s);
                    let v = verify_episode(&p, kind, &cfg, &outcome.audit, 0).unwrap();
                    assert!(v.is_clean(), "{id} {kind} ep {e}: {:?}", v.divergences);
                    assert_eq!(v.violation_flagged, record.violation);
                    let rebuilt = record_from_audit(&p, kind, e, &outcome.audit, cfg.tau).unwrap();
                    assert_eq!(rebuilt.as_ref(), Some(&record));
                }
            }
        }
    }

    #[test]
    fn tampered_risk_is_flagged_at_its_record() {
        let def = build_scenario(ScenarioId::S1, 3).unwrap();
        let cfg = scenario_config(&def, &CoordinationConfig::default());
        let (_, outcome) = run_episode(&def, CoordinatorKind::Camco, &cfg, 0).unwrap();
        let s = sample_episode_states(&def, 0);
        let p = def.problem(&s);
        let mut events = outcome.audit.clone();
        let at = events
            .iter()
            .position(|e| matches!(e.body, EventBody::RiskEval { .. }))
            .unwrap();
        if let EventBody::RiskEval { total, .. } = &mut events[at].body {
            *total += 0.01;
        }
        let v = verify_episode(&p, CoordinatorKind::Camco, &cfg, &events, 100).unwrap();
        assert_eq!(v.divergences[0].record_index, 100 + at);
        assert!(v.divergences.iter().all(|d| d.record_index == 100 + at));
    }

    #[test]
    fn tampered_multiplier_and_dropped_record_are_flagged() {
        let def = build_scenario(ScenarioId::S2, 5).unwrap();
        let cfg = scenario_config(&def, &CoordinationConfig::default());
        let (_, outcome) = (0..50)
            .map(|e| run_episode(&def, CoordinatorKind::Camco, &cfg, e).unwrap())
            .find(|(r, _)| r.iterations_used > 1)
            .expect("some episode needs a second round");
        let e = outcome.audit[0].episode_id;
        let s = sample_episode_states(&def, e);
        let p = def.problem(&s);

        let mut events = outcome.audit.clone();
        let at = events
            .iter()
            .position(|e| matches!(e.body, EventBody::LambdaUpdate { .. }))
            .unwrap();
        if let EventBody::LambdaUpdate { after, .. } = &mut events[at].body {
            *after *= 2.0;
        }
        let v = verify_episode(&p, CoordinatorKind::Camco, &cfg, &events, 0).unwrap();
        assert_eq!(v.divergences[0].record_index, at);

        let mut events = outcome.audit.clone();
        events.pop();
        let v = verify_episode(&p, CoordinatorKind::Camco, &cfg, &events, 0).unwrap();
        assert!(!v.is_clean());
    }
}
