//! Comparison coordinators sharing the domain, policy and risk modules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditTrail, EventBody, FailReason};
use crate::domain::{ActionValue, AgentSpec, CoordinationConfig, DualUpdateRule, JointAction};
use crate::error::{Error, Result};
use crate::negotiation::{
    negotiate_episode, record_fallback, FallbackOperator, NegotiationOutcome, Problem, RoundSummary, Status,
};
use crate::policy::{compliant_actions, feasible_set, is_execution_feasible, satisfies_unary, FeasibleSet};
use crate::projection::tie_break_order;
use crate::shaping::{best_response_scored, shaped_utility, Scored};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinatorKind {
    Camco,
    /// Selfish raw-utility argmax with no enforcement.
    B1Unconstrained,
    /// Utility-maximising tuple over per-agent feasible sets, no risk bound.
    B2CentralizedGreedy,
    /// Rule check with safe-default substitution, no negotiation.
    B3StaticRules,
    /// Independent per-agent multipliers without joint projection.
    B4LagrangianPerAgent,
}

impl CoordinatorKind {
    pub const ALL: [CoordinatorKind; 5] = [
        CoordinatorKind::Camco,
        CoordinatorKind::B1Unconstrained,
        CoordinatorKind::B2CentralizedGreedy,
        CoordinatorKind::B3StaticRules,
        CoordinatorKind::B4LagrangianPerAgent,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            CoordinatorKind::Camco => "camco",
            CoordinatorKind::B1Unconstrained => "b1",
            CoordinatorKind::B2CentralizedGreedy => "b2",
            CoordinatorKind::B3StaticRules => "b3",
            CoordinatorKind::B4LagrangianPerAgent => "b4",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CoordinatorKind::Camco => "CAMCO",
            CoordinatorKind::B1Unconstrained => "B1 (Uncons. MARL)",
            CoordinatorKind::B2CentralizedGreedy => "B2 (Cent. Greedy)",
            CoordinatorKind::B3StaticRules => "B3 (Static Rules)",
            CoordinatorKind::B4LagrangianPerAgent => "B4 (Lag. MARL)",
        }
    }
}

impl fmt::Display for CoordinatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for CoordinatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "camco" => Ok(CoordinatorKind::Camco),
            "b1" | "b1_unconstrained" => Ok(CoordinatorKind::B1Unconstrained),
            "b2" | "b2_centralized_greedy" => Ok(CoordinatorKind::B2CentralizedGreedy),
            "b3" | "b3_static_rules" => Ok(CoordinatorKind::B3StaticRules),
            "b4" | "b4_lagrangian_per_agent" => Ok(CoordinatorKind::B4LagrangianPerAgent),
            other => Err(Error::ConfigInvalid(format!("unknown coordinator `{other}`"))),
        }
    }
}

/// Dispatches to the selected coordinator.
pub fn coordinate(
    kind: CoordinatorKind,
    p: &Problem<'_>,
    cfg: &CoordinationConfig,
    fallback: &FallbackOperator,
    episode_id: u64,
) -> Result<NegotiationOutcome> {
    match kind {
        CoordinatorKind::Camco => negotiate_episode(p, cfg, fallback, episode_id),
        CoordinatorKind::B1Unconstrained => b1_unconstrained(p, cfg, episode_id),
        CoordinatorKind::B2CentralizedGreedy => b2_centralized_greedy(p, cfg, episode_id),
        CoordinatorKind::B3StaticRules => b3_static_rules(p, cfg, fallback, episode_id),
        CoordinatorKind::B4LagrangianPerAgent => b4_lagrangian_per_agent(p, cfg, fallback, episode_id),
    }
}

fn push_proposal(trail: &mut AuditTrail, iteration: u32, agent: &AgentSpec, s: &Scored, lambda: f64) {
    trail.push(
        iteration,
        Some(&agent.agent_id),
        EventBody::Proposal {
            action: s.action.clone(),
            utility: s.utility,
            risk: s.risk,
            shaped: s.shaped,
            lambda,
        },
    );
}

/// Scores `candidates` and returns the best, lexicographic on ties.
fn argmax_over(p: &Problem<'_>, agent: &AgentSpec, candidates: &[ActionValue], lambda: f64) -> Result<Option<Scored>> {
    let mut best: Option<Scored> = None;
    for a in candidates {
        let utility = agent.utility(p.state, a);
        let risk = p.risk.agent_risk(&agent.agent_id, a, p.state)?;
        let s = Scored {
            action: a.clone(),
            utility,
            risk,
            shaped: shaped_utility(utility, risk, lambda),
        };
        let take = match &best {
            None => true,
            Some(b) => s.shaped > b.shaped || (s.shaped == b.shaped && tie_break_order(&s.action, &b.action).is_lt()),
        };
        if take {
            best = Some(s);
        }
    }
    Ok(best)
}

/// Best response restricted to `F_i(s)`.
pub(crate) fn feasible_response(p: &Problem<'_>, agent: &AgentSpec, lambda: f64) -> Result<Scored> {
    match feasible_set(p.bundle, p.state, agent) {
        FeasibleSet::Discrete(actions) => match argmax_over(p, agent, &actions, lambda)? {
            Some(s) => Ok(s),
            None => argmax_over(p, agent, std::slice::from_ref(&agent.safe_default), lambda)
                .map(|s| s.expect("one candidate")),
        },
        FeasibleSet::Point(a) => {
            argmax_over(p, agent, std::slice::from_ref(&a), lambda).map(|s| s.expect("one candidate"))
        }
        FeasibleSet::Region { .. } => {
            // continuous: grid best response, then a feasibility check falling back to the default
            let s = best_response_scored(agent, p.state, lambda, p.risk)?;
            if is_execution_feasible(p.bundle, p.state, agent, &s.action) {
                Ok(s)
            } else {
                argmax_over(p, agent, std::slice::from_ref(&agent.safe_default), lambda)
                    .map(|s| s.expect("one candidate"))
            }
        }
    }
}

/// Final evaluation shared by the single-shot baselines.
fn finish(
    p: &Problem<'_>,
    cfg: &CoordinationConfig,
    mut trail: AuditTrail,
    iteration: u32,
    joint: JointAction,
    gate_on_phi: Option<&FallbackOperator>,
) -> Result<NegotiationOutcome> {
    let report = p.joint_risk(&joint, cfg.tau)?;
    trail.push(
        iteration,
        None,
        EventBody::RiskEval {
            per_agent: report.per_agent.clone(),
            total: report.total,
            threshold: cfg.tau,
            r_prev: None,
        },
    );
    let phi = p.phi(&joint)?;
    let feasible = p.execution_feasible(&joint);
    trail.push(
        iteration,
        None,
        EventBody::PhiVerdict {
            phi: phi.phi,
            feasible,
            verdicts: phi.verdicts,
        },
    );
    let rounds = vec![RoundSummary {
        iteration: 1,
        lambda: 0.0,
        r_tot: report.total,
        phi: phi.phi,
        feasible,
    }];
    if let Some(op) = gate_on_phi.filter(|_| !(phi.phi && feasible)) {
        return fail(p, cfg, trail, iteration, FailReason::PolicyCheck, op, report, rounds);
    }
    trail.push(
        iteration,
        None,
        EventBody::Accept {
            joint: joint.clone(),
            total_risk: report.total,
        },
    );
    Ok(NegotiationOutcome {
        status: Status::Accepted,
        joint: Some(joint),
        iterations_used: 1,
        lambda_trajectory: Vec::new(),
        final_risk: report,
        rounds,
        fallback: None,
        audit: trail.into_events(),
    })
}

#[allow(clippy::too_many_arguments)]
fn fail(
    p: &Problem<'_>,
    cfg: &CoordinationConfig,
    mut trail: AuditTrail,
    iteration: u32,
    reason: FailReason,
    op: &FallbackOperator,
    report: crate::risk::RiskReport,
    rounds: Vec<RoundSummary>,
) -> Result<NegotiationOutcome> {
    trail.push(iteration, None, EventBody::Fail { reason, iterations: 1 });
    let fb = record_fallback(p, cfg.tau, op, &mut trail, iteration)?;
    Ok(NegotiationOutcome {
        status: Status::Failed,
        joint: None,
        iterations_used: 1,
        lambda_trajectory: Vec::new(),
        final_risk: report,
        rounds,
        fallback: fb,
        audit: trail.into_events(),
    })
}

/// Raw-utility argmax per agent over the full action space; always accepted.
pub fn b1_unconstrained(p: &Problem<'_>, cfg: &CoordinationConfig, episode_id: u64) -> Result<NegotiationOutcome> {
    let mut trail = AuditTrail::new(episode_id);
    let mut actions = Vec::with_capacity(p.agents.len());
    for agent in p.agents {
        let s = best_response_scored(agent, p.state, 0.0, p.risk)?;
        push_proposal(&mut trail, 1, agent, &s, 0.0);
        actions.push(s.action);
    }
    finish(p, cfg, trail, 1, JointAction::from_roster(p.agents, actions), None)
}

/// Exact maximiser of `Σ U_i` over `∏ F_i(s)`. The objective is separable, so
/// the per-agent argmax is the joint argmax. Ignores `τ` and joint predicates.
pub fn b2_centralized_greedy(p: &Problem<'_>, cfg: &CoordinationConfig, episode_id: u64) -> Result<NegotiationOutcome> {
    let mut trail = AuditTrail::new(episode_id);
    let mut actions = Vec::with_capacity(p.agents.len());
    for agent in p.agents {
        let s = feasible_response(p, agent, 0.0)?;
        push_proposal(&mut trail, 1, agent, &s, 0.0);
        actions.push(s.action);
    }
    finish(p, cfg, trail, 1, JointAction::from_roster(p.agents, actions), None)
}

/// Raw argmax checked against `F_i(s)`, unary slices and a static
/// per-role authority limit of `τ/n` on the agent's own risk; anything
/// non-compliant becomes the safe default. One joint check, failure is a
/// deadlock.
pub fn b3_static_rules(
    p: &Problem<'_>,
    cfg: &CoordinationConfig,
    fallback: &FallbackOperator,
    episode_id: u64,
) -> Result<NegotiationOutcome> {
    let authority_limit = cfg.tau / p.agents.len().max(1) as f64;
    let mut trail = AuditTrail::new(episode_id);
    let mut actions = Vec::with_capacity(p.agents.len());
    for agent in p.agents {
        let s = best_response_scored(agent, p.state, 0.0, p.risk)?;
        push_proposal(&mut trail, 1, agent, &s, 0.0);
        let ok = is_execution_feasible(p.bundle, p.state, agent, &s.action)
            && satisfies_unary(p.bundle, p.state, &agent.agent_id, &s.action)
            && s.risk <= authority_limit;
        if ok {
            actions.push(s.action);
        } else {
            trail.push(
                1,
                Some(&agent.agent_id),
                EventBody::RejectToSafeDefault {
                    rejected: s.action,
                    safe_default: agent.safe_default.clone(),
                },
            );
            actions.push(agent.safe_default.clone());
        }
    }
    finish(
        p,
        cfg,
        trail,
        1,
        JointAction::from_roster(p.agents, actions),
        Some(fallback),
    )
}

/// Each agent runs hinge ascent on its own multiplier against a budget of
/// `τ/n`, restricted to its own `F_i(s)`. No joint projection and no joint
/// predicate gate: the final tuple executes if every agent settled within
/// `K_max` rounds.
pub fn b4_lagrangian_per_agent(
    p: &Problem<'_>,
    cfg: &CoordinationConfig,
    fallback: &FallbackOperator,
    episode_id: u64,
) -> Result<NegotiationOutcome> {
    cfg.validate()?;
    let n = p.agents.len().max(1) as f64;
    let budget = cfg.tau / n;
    let mut trail = AuditTrail::new(episode_id);
    let mut lambdas = vec![cfg.lambda0; p.agents.len()];
    let mut current: Vec<Option<Scored>> = vec![None; p.agents.len()];
    let mut settled = vec![false; p.agents.len()];
    let mut rounds_run = 0;
    for k in 1..=cfg.k_max {
        rounds_run = k;
        for (i, agent) in p.agents.iter().enumerate() {
            if settled[i] {
                continue;
            }
            let s = feasible_response(p, agent, lambdas[i])?;
            push_proposal(&mut trail, k, agent, &s, lambdas[i]);
            if s.risk <= budget {
                settled[i] = true;
            } else {
                let before = lambdas[i];
                lambdas[i] += cfg.alpha * (s.risk - budget).max(0.0);
                trail.push(
                    k,
                    Some(&agent.agent_id),
                    EventBody::LambdaUpdate {
                        rule: DualUpdateRule::HingeAscent,
                        before,
                        after: lambdas[i],
                        observed: s.risk,
                        threshold: budget,
                    },
                );
            }
            current[i] = Some(s);
        }
        if settled.iter().all(|s| *s) {
            break;
        }
    }
    let actions: Vec<ActionValue> = current
        .into_iter()
        .map(|s| s.expect("every agent proposed").action)
        .collect();
    let joint = JointAction::from_roster(p.agents, actions);
    if settled.iter().all(|s| *s) {
        return finish(p, cfg, trail, rounds_run, joint, None);
    }
    let report = p.joint_risk(&joint, cfg.tau)?;
    trail.push(
        rounds_run,
        None,
        EventBody::RiskEval {
            per_agent: report.per_agent.clone(),
            total: report.total,
            threshold: cfg.tau,
            r_prev: None,
        },
    );
    let phi = p.phi(&joint)?;
    let feasible = p.execution_feasible(&joint);
    trail.push(
        rounds_run,
        None,
        EventBody::PhiVerdict {
            phi: phi.phi,
            feasible,
            verdicts: phi.verdicts,
        },
    );
    let rounds = vec![RoundSummary {
        iteration: 1,
        lambda: 0.0,
        r_tot: report.total,
        phi: phi.phi,
        feasible,
    }];
    fail(
        p,
        cfg,
        trail,
        rounds_run,
        FailReason::Unsettled,
        fallback,
        report,
        rounds,
    )
}

/// Discrete compliant sets for every agent, used by oracles and tests.
pub fn compliant_sets(p: &Problem<'_>) -> Vec<Vec<ActionValue>> {
    p.agents
        .iter()
        .map(|a| compliant_actions(p.bundle, p.state, a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ActionSpace, EnterpriseState, ScenarioId};
    use crate::expr::Expr;
    use crate::policy::{FeasibilityRule, PermGrant, PolicyBundle, PolicyPredicate, PredicateKind};
    use crate::projection::EditDistance;
    use crate::risk::{Indicator, RiskProfile};

    fn agent(id: &str, table: &[(&str, f64, f64)]) -> AgentSpec {
        AgentSpec {
            agent_id: id.into(),
            role: id.into(),
            action_space: ActionSpace::Discrete(table.iter().map(|(l, _, _)| ActionValue::label_only(l)).collect()),
            utility_fn: Expr::label_table(&table.iter().map(|(l, u, _)| (*l, *u)).collect::<Vec<_>>(), 0.0),
            safe_default: ActionValue::label_only(table[0].0),
            edit_distance: EditDistance::default(),
        }
    }

    fn profile(entries: &[(&str, &[(&str, f64, f64)])]) -> RiskProfile {
        let mut p = RiskProfile::new(&[("operational", 1.0)]);
        for (id, table) in entries {
            let t: Vec<(&str, f64)> = table.iter().map(|(l, _, r)| (*l, *r)).collect();
            p.register(id, "operational", Indicator::new(Expr::label_table(&t, 0.0), 1.0));
        }
        p
    }

    const REQ: &[(&str, f64, f64)] = &[("wait", 0.1, 0.0), ("submit", 0.6, 0.1), ("self_approve", 1.0, 0.3)];
    const MGR: &[(&str, f64, f64)] = &[("hold", 0.1, 0.0), ("review", 0.5, 0.1), ("approve", 0.9, 0.6)];

    /// requester may not self-approve (perm); if the manager approves, the
    /// requester must have submitted (joint).
    fn setup() -> (Vec<AgentSpec>, PolicyBundle, RiskProfile, EnterpriseState) {
        let agents = vec![agent("req", REQ), agent("mgr", MGR)];
        let mut bundle = PolicyBundle::permissive(&agents);
        bundle.feasibility[0] =
            FeasibilityRule::permissive("req").with_perm(vec![PermGrant::labels(&["wait", "submit"])]);
        bundle.predicates.push(PolicyPredicate::new(
            "approval_needs_submission",
            PredicateKind::Custom {
                expr: Expr::implies(Expr::acts("mgr", &["approve"]), Expr::acts("req", &["submit"])),
            },
        ));
        let risk = profile(&[("req", REQ), ("mgr", MGR)]);
        (agents, bundle, risk, EnterpriseState::new(ScenarioId::Synthetic, 0))
    }

    #[test]
    fn b1_takes_raw_argmax_and_is_flagged() {
        let (agents, bundle, risk, s) = setup();
        let p = Problem::new(&agents, &s, &bundle, &risk);
        let cfg = CoordinationConfig::default();
        let out = b1_unconstrained(&p, &cfg, 0).unwrap();
        assert_eq!(out.status, Status::Accepted);
        assert_eq!(out.iterations_used, 1);
        let j = out.joint.unwrap();
        assert_eq!(j.get("req").unwrap().label(), Some("self_approve"));
        assert!(out.rounds[0].violates_policy());
        // invariant to dual-rule settings
        let other = CoordinationConfig {
            dual_update_rule: DualUpdateRule::DiminishingHinge,
            delta: 3.0,
            ..Default::default()
        };
        assert_eq!(b1_unconstrained(&p, &other, 0).unwrap().joint, Some(j));
    }

    #[test]
    fn b2_filters_per_agent_but_not_joint() {
        let (agents, bundle, risk, s) = setup();
        let p = Problem::new(&agents, &s, &bundle, &risk);
        let out = b2_centralized_greedy(&p, &CoordinationConfig::default(), 0).unwrap();
        let j = out.joint.unwrap();
        assert_eq!(j.get("req").unwrap().label(), Some("submit"));
        assert_eq!(j.get("mgr").unwrap().label(), Some("approve"));
        assert!(!out.rounds[0].violates_policy());
        // with the manager gated on "self_approve" instead the joint check would fail
    }

    #[test]
    fn b3_substitutes_safe_default_and_deadlocks_on_joint_failure() {
        let (agents, bundle, risk, s) = setup();
        let p = Problem::new(&agents, &s, &bundle, &risk);
        // authority limit τ/n = 1.0 leaves the manager's approval alone
        let cfg = CoordinationConfig::default().with_tau(2.0);
        let out = b3_static_rules(&p, &cfg, &FallbackOperator::new(), 0).unwrap();
        // req → wait (substituted); mgr approve; approval without submission fails Φ
        assert_eq!(out.status, Status::Failed);
        assert_eq!(out.fallback, Some(JointAction::safe_defaults(&agents)));
        let pre = REQ[2].1 + MGR[2].1;
        let post = REQ[0].1 + MGR[2].1;
        assert!(post < pre);
        assert!(out
            .audit
            .iter()
            .any(|e| matches!(e.body, EventBody::RejectToSafeDefault { .. })));
    }

    #[test]
    fn b3_authority_limit_caps_own_risk() {
        let (agents, bundle, risk, s) = setup();
        let p = Problem::new(&agents, &s, &bundle, &risk);
        // limit 0.5: approve (0.6) is over it, self_approve is not permitted
        let out = b3_static_rules(&p, &CoordinationConfig::default(), &FallbackOperator::new(), 0).unwrap();
        assert_eq!(out.status, Status::Accepted);
        assert_eq!(out.joint, Some(JointAction::safe_defaults(&agents)));
        let substituted = out
            .audit
            .iter()
            .filter(|e| matches!(e.body, EventBody::RejectToSafeDefault { .. }))
            .count();
        assert_eq!(substituted, 2);
    }

    #[test]
    fn b3_all_compliant_matches_b2() {
        let agents = vec![agent("a", MGR)];
        let bundle = PolicyBundle::permissive(&agents);
        let risk = profile(&[("a", MGR)]);
        let s = EnterpriseState::new(ScenarioId::Synthetic, 0);
        let p = Problem::new(&agents, &s, &bundle, &risk);
        let cfg = CoordinationConfig::default();
        let b2 = b2_centralized_greedy(&p, &cfg, 0).unwrap();
        let b3 = b3_static_rules(&p, &cfg, &FallbackOperator::new(), 0).unwrap();
        assert_eq!(b2.joint, b3.joint);
    }

    #[test]
    fn b4_jointly_infeasible_pair_within_budget_is_accepted_and_flagged() {
        // each agent's pick is individually low-risk but the pair breaks a joint predicate
        let a: &[(&str, f64, f64)] = &[("hold", 0.0, 0.0), ("x", 1.0, 0.2)];
        let agents = vec![agent("a", a), agent("b", a)];
        let mut bundle = PolicyBundle::permissive(&agents);
        bundle.predicates.push(PolicyPredicate::new(
            "not_both",
            PredicateKind::Custom {
                expr: Expr::negate(Expr::And(vec![Expr::acts("a", &["x"]), Expr::acts("b", &["x"])])),
            },
        ));
        let risk = profile(&[("a", a), ("b", a)]);
        let s = EnterpriseState::new(ScenarioId::Synthetic, 0);
        let p = Problem::new(&agents, &s, &bundle, &risk);
        let out = b4_lagrangian_per_agent(&p, &CoordinationConfig::default(), &FallbackOperator::new(), 0).unwrap();
        assert_eq!(out.status, Status::Accepted);
        assert!(out.rounds[0].violates_policy());
    }

    #[test]
    fn b4_zero_risk_matches_b1_and_keeps_separate_multipliers() {
        let z: &[(&str, f64, f64)] = &[("a", 0.2, 0.0), ("b", 0.7, 0.0)];
        let agents = vec![agent("p", z), agent("q", z)];
        let bundle = PolicyBundle::permissive(&agents);
        let risk = profile(&[("p", z), ("q", z)]);
        let s = EnterpriseState::new(ScenarioId::Synthetic, 0);
        let p = Problem::new(&agents, &s, &bundle, &risk);
        let cfg = CoordinationConfig::default();
        let b4 = b4_lagrangian_per_agent(&p, &cfg, &FallbackOperator::new(), 0).unwrap();
        assert_eq!(b4.joint, b1_unconstrained(&p, &cfg, 0).unwrap().joint);

        let r: &[(&str, f64, f64)] = &[("a", 0.2, 0.0), ("b", 0.7, 0.9)];
        let agents = vec![agent("p", r), agent("q", z)];
        let bundle = PolicyBundle::permissive(&agents);
        let risk = profile(&[("p", r), ("q", z)]);
        let p = Problem::new(&agents, &s, &bundle, &risk);
        let out = b4_lagrangian_per_agent(&p, &cfg, &FallbackOperator::new(), 0).unwrap();
        let updated: Vec<_> = out
            .audit
            .iter()
            .filter(|e| matches!(e.body, EventBody::LambdaUpdate { .. }))
            .map(|e| e.agent_id.clone().unwrap())
            .collect();
        assert!(!updated.is_empty());
        assert!(updated.iter().all(|id| id == "p"));
    }

    #[test]
    fn coordinator_names_parse() {
        for k in CoordinatorKind::ALL {
            assert_eq!(k.short_name().parse::<CoordinatorKind>().unwrap(), k);
        }
        assert!("b9".parse::<CoordinatorKind>().is_err());
    }
}
