//! The propose, project, evaluate and tighten loop, with the safe fallback.

use serde::{Deserialize, Serialize};

use crate::audit::{AuditEvent, AuditTrail, EventBody, FailReason, FallbackSource};
use crate::domain::{ActionValue, AgentSpec, CoordinationConfig, EnterpriseState, JointAction};
use crate::error::{Error, Result};
use crate::policy::{eval_phi, is_execution_feasible, joint_feasible_region, PhiVerdict, PolicyBundle};
use crate::projection::{project, ProjectionOutcome};
use crate::risk::{joint_risk, RiskProfile, RiskReport};
use crate::shaping::{best_response_scored, lambda_probe_points, response_breakpoints, update_lambda, LambdaState};

/// Everything a coordinator needs to decide one step.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub agents: &'a [AgentSpec],
    pub state: &'a EnterpriseState,
    pub bundle: &'a PolicyBundle,
    pub risk: &'a RiskProfile,
}

impl<'a> Problem<'a> {
    pub fn new(
        agents: &'a [AgentSpec],
        state: &'a EnterpriseState,
        bundle: &'a PolicyBundle,
        risk: &'a RiskProfile,
    ) -> Self {
        Problem {
            agents,
            state,
            bundle,
            risk,
        }
    }

    pub fn joint_risk(&self, joint: &JointAction, tau: f64) -> Result<RiskReport> {
        joint_risk(self.risk, self.agents, joint, self.state, tau)
    }

    pub fn phi(&self, joint: &JointAction) -> Result<PhiVerdict> {
        eval_phi(self.bundle, self.state, joint)
    }

    /// Every `a_i ∈ F_i(s)`.
    pub fn execution_feasible(&self, joint: &JointAction) -> bool {
        joint.check_roster(self.agents).is_ok()
            && self
                .agents
                .iter()
                .zip(joint.actions())
                .all(|(a, act)| is_execution_feasible(self.bundle, self.state, a, act))
    }

    /// `Φ = 1`, per-agent feasibility and `R_tot ≤ τ`.
    pub fn is_compliant(&self, joint: &JointAction, tau: f64) -> Result<bool> {
        Ok(joint_feasible_region(self.bundle, self.state, self.agents, joint)
            && self.joint_risk(joint, tau)?.within_bound)
    }

    /// Sum of raw utilities of a joint action, in roster order.
    pub fn total_utility(&self, joint: &JointAction) -> f64 {
        self.agents
            .iter()
            .zip(joint.actions())
            .fold(0.0, |acc, (a, act)| acc + a.utility(self.state, act))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Accepted,
    Failed,
}

/// Summary of one evaluated joint proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub iteration: u32,
    pub lambda: f64,
    pub r_tot: f64,
    pub phi: bool,
    pub feasible: bool,
}

impl RoundSummary {
    /// Policy-infeasible: `Φ = 0` or some action outside `F_i(s)`.
    pub fn violates_policy(&self) -> bool {
        !(self.phi && self.feasible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationOutcome {
    pub status: Status,
    /// Present for accepted outcomes only.
    pub joint: Option<JointAction>,
    pub iterations_used: u32,
    /// Multiplier used in each round.
    pub lambda_trajectory: Vec<f64>,
    /// Risk of the last evaluated proposal.
    pub final_risk: RiskReport,
    pub rounds: Vec<RoundSummary>,
    /// Joint action the system reverts to on failure.
    pub fallback: Option<JointAction>,
    pub audit: Vec<AuditEvent>,
}

impl NegotiationOutcome {
    pub fn is_accepted(&self) -> bool {
        self.status == Status::Accepted
    }

    /// The joint action that actually executes.
    pub fn executed(&self) -> Option<&JointAction> {
        match self.status {
            Status::Accepted => self.joint.as_ref(),
            Status::Failed => self.fallback.as_ref(),
        }
    }
}

/// `SafeDefault(g_i, s)`.
pub fn safe_default_action(agent: &AgentSpec, _state: &EnterpriseState) -> ActionValue {
    agent.safe_default.clone()
}

/// Tracks the last compliant joint action within an episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FallbackOperator {
    pub last_compliant: Option<JointAction>,
}

impl FallbackOperator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, joint: &JointAction) {
        self.last_compliant = Some(joint.clone());
    }

    /// Checks that the all-safe-defaults tuple is compliant in this state.
    pub fn verify(p: &Problem<'_>, tau: f64) -> Result<()> {
        let defaults = JointAction::safe_defaults(p.agents);
        if !p.execution_feasible(&defaults) {
            return Err(Error::FallbackInfeasible(
                "safe default outside its feasible set".into(),
            ));
        }
        let phi = p.phi(&defaults)?;
        if !phi.phi {
            return Err(Error::FallbackInfeasible(format!(
                "safe defaults fail {}",
                phi.failing().join(", ")
            )));
        }
        let r = p.joint_risk(&defaults, tau)?;
        if !r.within_bound {
            return Err(Error::FallbackInfeasible(format!(
                "safe-default risk {} exceeds {}",
                r.total, tau
            )));
        }
        Ok(())
    }

    /// The last compliant tuple if it is still compliant here, else safe defaults.
    pub fn resolve(&self, p: &Problem<'_>, tau: f64) -> Result<(JointAction, FallbackSource)> {
        if let Some(last) = &self.last_compliant {
            if last.check_roster(p.agents).is_ok() && p.is_compliant(last, tau)? {
                return Ok((last.clone(), FallbackSource::LastCompliant));
            }
        }
        Self::verify(p, tau)?;
        Ok((JointAction::safe_defaults(p.agents), FallbackSource::SafeDefaults))
    }
}

/// Resolves the fallback for this state.
pub fn apply_fallback(p: &Problem<'_>, tau: f64, operator: &FallbackOperator) -> Result<JointAction> {
    operator.resolve(p, tau).map(|(j, _)| j)
}

/// Resolves and logs the fallback after a failure. An instance whose safe
/// defaults are not compliant has no fallback; that is reported as `None`
/// rather than an error so the failure itself stays an outcome.
pub(crate) fn record_fallback(
    p: &Problem<'_>,
    tau: f64,
    operator: &FallbackOperator,
    trail: &mut AuditTrail,
    iteration: u32,
) -> Result<Option<JointAction>> {
    match operator.resolve(p, tau) {
        Ok((joint, source)) => {
            trail.push(
                iteration,
                None,
                EventBody::Fallback {
                    joint: joint.clone(),
                    source,
                },
            );
            Ok(Some(joint))
        }
        Err(Error::FallbackInfeasible(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the coordination loop with no episode history.
pub fn negotiate(
    agents: &[AgentSpec],
    state: &EnterpriseState,
    bundle: &PolicyBundle,
    risk_profile: &RiskProfile,
    cfg: &CoordinationConfig,
) -> Result<NegotiationOutcome> {
    let p = Problem::new(agents, state, bundle, risk_profile);
    negotiate_episode(&p, cfg, &FallbackOperator::new(), 0)
}

/// Shared-multiplier negotiation for one step of an episode.
pub fn negotiate_episode(
    p: &Problem<'_>,
    cfg: &CoordinationConfig,
    fallback: &FallbackOperator,
    episode_id: u64,
) -> Result<NegotiationOutcome> {
    cfg.validate()?;
    let mut trail = AuditTrail::new(episode_id);
    let mut ls = LambdaState::new(cfg);
    let mut rounds = Vec::new();
    let mut r_prev = None;
    let mut last_report = None;

    for k in 1..=cfg.k_max {
        let mut actions = Vec::with_capacity(p.agents.len());
        for agent in p.agents {
            let id = Some(agent.agent_id.as_str());
            let s = best_response_scored(agent, p.state, ls.lambda, p.risk)?;
            trail.push(
                k,
                id,
                EventBody::Proposal {
                    action: s.action.clone(),
                    utility: s.utility,
                    risk: s.risk,
                    shaped: s.shaped,
                    lambda: ls.lambda,
                },
            );
            let proj = project(agent, p.state, p.bundle, &s.action)?;
            trail.push(
                k,
                id,
                EventBody::Projection {
                    before: s.action.clone(),
                    after: proj.action.clone(),
                    outcome: proj.outcome,
                    distance: proj.distance,
                    candidates_examined: proj.candidates_examined,
                },
            );
            let chosen = match (proj.outcome, proj.action) {
                (ProjectionOutcome::Reject, _) | (_, None) => {
                    let safe = safe_default_action(agent, p.state);
                    trail.push(
                        k,
                        id,
                        EventBody::RejectToSafeDefault {
                            rejected: s.action,
                            safe_default: safe.clone(),
                        },
                    );
                    safe
                }
                (_, Some(a)) => a,
            };
            actions.push(chosen);
        }
        let joint = JointAction::from_roster(p.agents, actions);
        let report = p.joint_risk(&joint, cfg.tau)?;
        trail.push(
            k,
            None,
            EventBody::RiskEval {
                per_agent: report.per_agent.clone(),
                total: report.total,
                threshold: cfg.tau,
                r_prev,
            },
        );
        let phi = p.phi(&joint)?;
        let feasible = p.execution_feasible(&joint);
        trail.push(
            k,
            None,
            EventBody::PhiVerdict {
                phi: phi.phi,
                feasible,
                verdicts: phi.verdicts.clone(),
            },
        );
        rounds.push(RoundSummary {
            iteration: k,
            lambda: ls.lambda,
            r_tot: report.total,
            phi: phi.phi,
            feasible,
        });
        if phi.phi && feasible && report.within_bound {
            trail.push(
                k,
                None,
                EventBody::Accept {
                    joint: joint.clone(),
                    total_risk: report.total,
                },
            );
            return Ok(NegotiationOutcome {
                status: Status::Accepted,
                joint: Some(joint),
                iterations_used: k,
                lambda_trajectory: rounds.iter().map(|r| r.lambda).collect(),
                final_risk: report,
                rounds,
                fallback: None,
                audit: trail.into_events(),
            });
        }
        let next = update_lambda(&ls, report.total, cfg.tau, cfg);
        trail.push(
            k,
            None,
            EventBody::LambdaUpdate {
                rule: ls.rule,
                before: ls.lambda,
                after: next.lambda,
                observed: report.total,
                threshold: cfg.tau,
            },
        );
        ls = next;
        r_prev = Some(report.total);
        last_report = Some(report);
    }

    trail.push(
        cfg.k_max,
        None,
        EventBody::Fail {
            reason: FailReason::IterationBudget,
            iterations: cfg.k_max,
        },
    );
    let fb = record_fallback(p, cfg.tau, fallback, &mut trail, cfg.k_max)?;
    Ok(NegotiationOutcome {
        status: Status::Failed,
        joint: None,
        iterations_used: cfg.k_max,
        lambda_trajectory: rounds.iter().map(|r| r.lambda).collect(),
        final_risk: last_report.expect("k_max >= 1"),
        rounds,
        fallback: fb,
        audit: trail.into_events(),
    })
}

/// Risk of the post-projection response of one agent at multiplier `lambda`.
pub fn projected_response_risk(p: &Problem<'_>, agent: &AgentSpec, lambda: f64) -> Result<f64> {
    let s = best_response_scored(agent, p.state, lambda, p.risk)?;
    let proj = project(agent, p.state, p.bundle, &s.action)?;
    let action = match (proj.outcome, proj.action) {
        (ProjectionOutcome::Reject, _) | (_, None) => agent.safe_default.clone(),
        (_, Some(a)) => a,
    };
    p.risk.agent_risk(&agent.agent_id, &action, p.state)
}

/// Checks that every agent's post-projection response risk is non-increasing
/// in the multiplier. The probe set covers every piece of the discrete
/// best-response map plus `extra` multipliers. Continuous agents are not
/// certified and make the check return `false`.
pub fn monotone_response_hypothesis(p: &Problem<'_>, extra: &[f64]) -> Result<bool> {
    for agent in p.agents {
        if agent.discrete_actions().is_none() {
            return Ok(false);
        }
        let mut probes = lambda_probe_points(&response_breakpoints(agent, p.state, p.risk)?);
        probes.extend(extra.iter().copied().filter(|l| l.is_finite() && *l >= 0.0));
        probes.sort_by(f64::total_cmp);
        probes.dedup();
        let mut prev = f64::INFINITY;
        for l in probes {
            let r = projected_response_risk(p, agent, l)?;
            if r > prev {
                return Ok(false);
            }
            prev = r;
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ActionSpace, ScenarioId};
    use crate::expr::Expr;
    use crate::policy::{DutyRef, PolicyPredicate, PredicateKind};
    use crate::projection::EditDistance;
    use crate::risk::Indicator;

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

    fn state() -> EnterpriseState {
        EnterpriseState::new(ScenarioId::Synthetic, 1)
    }

    const A: &[(&str, f64, f64)] = &[("hold", 0.1, 0.0), ("low", 0.6, 0.2), ("high", 1.0, 0.8)];
    const B: &[(&str, f64, f64)] = &[("hold", 0.1, 0.0), ("low", 0.5, 0.3), ("high", 0.9, 0.7)];

    #[test]
    fn first_pass_accept() {
        let agents = vec![agent("a", A), agent("b", B)];
        let risk = profile(&[("a", A), ("b", B)]);
        let bundle = PolicyBundle::permissive(&agents);
        let cfg = CoordinationConfig::default().with_tau(2.0);
        let out = negotiate(&agents, &state(), &bundle, &risk, &cfg).unwrap();
        assert_eq!(out.status, Status::Accepted);
        assert_eq!(out.iterations_used, 1);
        let j = out.joint.unwrap();
        assert_eq!(j.get("a").unwrap().label(), Some("high"));
    }

    #[test]
    fn reachable_low_risk_combo_matches_oracle() {
        // λ = 0 and λ = 0.375 both give (high, high) at 1.5; λ = 0.75 gives (low, high) at 0.9
        let agents = vec![agent("a", A), agent("b", B)];
        let risk = profile(&[("a", A), ("b", B)]);
        let bundle = PolicyBundle::permissive(&agents);
        let cfg = CoordinationConfig::default();
        let s = state();
        let out = negotiate(&agents, &s, &bundle, &risk, &cfg).unwrap();
        assert_eq!(out.status, Status::Accepted);
        assert!(out.iterations_used <= 3, "{}", out.iterations_used);
        let p = Problem::new(&agents, &s, &bundle, &risk);
        let j = out.joint.unwrap();
        assert!(p.is_compliant(&j, cfg.tau).unwrap());
        // trajectory: 0, then 0 + 0.25 * 1.5
        assert_eq!(out.lambda_trajectory[0], 0.0);
        assert_eq!(out.lambda_trajectory[1], 0.375);
    }

    #[test]
    fn infeasible_risk_floor_fails_at_budget() {
        // defaults carry no risk but Φ forbids them; every non-default tuple exceeds τ
        let t: &[(&str, f64, f64)] = &[("hold", 0.1, 0.0), ("go", 1.0, 0.9)];
        let agents = vec![agent("a", t), agent("b", t)];
        let risk = profile(&[("a", t), ("b", t)]);
        let bundle = PolicyBundle::permissive(&agents);
        let cfg = CoordinationConfig::default().with_tau(0.5);
        let out = negotiate(&agents, &state(), &bundle, &risk, &cfg).unwrap();
        // safe defaults are compliant here so λ eventually drives to hold
        assert_eq!(out.status, Status::Accepted);

        let mut strict = bundle.clone();
        strict.predicates.push(PolicyPredicate::new(
            "someone_acts",
            PredicateKind::Custom {
                expr: Expr::Or(vec![Expr::acts("a", &["go"]), Expr::acts("b", &["go"])]),
            },
        ));
        // defaults now violate Φ and every acting tuple exceeds τ: no feasible point
        let s = state();
        let p = Problem::new(&agents, &s, &strict, &risk);
        assert!(matches!(
            FallbackOperator::verify(&p, cfg.tau),
            Err(Error::FallbackInfeasible(_))
        ));
        let out = negotiate(&agents, &state(), &strict, &risk, &cfg).unwrap();
        assert_eq!(out.status, Status::Failed);
        assert_eq!(out.iterations_used, cfg.k_max);
        assert_eq!(out.fallback, None);
        assert!(!out.audit.iter().any(|e| matches!(e.body, EventBody::Fallback { .. })));
    }

    #[test]
    fn joint_phi_deadlock_returns_failed_with_fallback() {
        // chain: if a goes, b must also go; b going alone is fine. Risks make (go, go) exceed τ.
        let t: &[(&str, f64, f64)] = &[("hold", 0.0, 0.0), ("go", 1.0, 0.6)];
        let u: &[(&str, f64, f64)] = &[("hold", 0.5, 0.0), ("go", 0.1, 0.6)];
        let agents = vec![agent("a", t), agent("b", u)];
        let risk = profile(&[("a", t), ("b", u)]);
        let mut bundle = PolicyBundle::permissive(&agents);
        bundle.predicates.push(PolicyPredicate::new(
            "chain",
            PredicateKind::ApprovalChain {
                when: Expr::acts("a", &["go"]),
                steps: vec![DutyRef::new("a", &["go"]), DutyRef::new("b", &["go"])],
            },
        ));
        let cfg = CoordinationConfig {
            tau: 1.0,
            delta: 0.01,
            k_max: 3,
            ..Default::default()
        };
        let out = negotiate(&agents, &state(), &bundle, &risk, &cfg).unwrap();
        assert_eq!(out.status, Status::Failed);
        assert_eq!(out.iterations_used, 3);
        assert_eq!(out.fallback, Some(JointAction::safe_defaults(&agents)));
        let kinds: Vec<_> = out.audit.iter().map(|e| e.body.kind()).collect();
        assert_eq!(kinds[kinds.len() - 2..], ["Fail", "Fallback"]);
        assert!(out.lambda_trajectory.windows(2).all(|w| w[1] - w[0] >= cfg.delta));
    }

    #[test]
    fn safe_default_is_zero_risk_and_projection_fixed_point() {
        let agents = vec![agent("a", A)];
        let risk = profile(&[("a", A)]);
        let bundle = PolicyBundle::permissive(&agents);
        let s = state();
        let d = safe_default_action(&agents[0], &s);
        assert_eq!(d, agents[0].safe_default);
        assert_eq!(risk.agent_risk("a", &d, &s).unwrap(), 0.0);
        let r = project(&agents[0], &s, &bundle, &d).unwrap();
        assert_eq!(r.outcome, ProjectionOutcome::Unchanged);
    }

    #[test]
    fn fallback_reverts_to_last_accepted_step() {
        let agents = vec![agent("a", A), agent("b", B)];
        let risk = profile(&[("a", A), ("b", B)]);
        let bundle = PolicyBundle::permissive(&agents);
        let cfg = CoordinationConfig::default();
        let s0 = state();
        let p0 = Problem::new(&agents, &s0, &bundle, &risk);
        let mut op = FallbackOperator::new();
        let first = negotiate_episode(&p0, &cfg, &op, 9).unwrap();
        let accepted = first.joint.clone().unwrap();
        op.record(&accepted);

        // step two: a single round cannot get below τ
        let s1 = s0.next_step();
        let tight = CoordinationConfig {
            k_max: 1,
            ..cfg.clone()
        };
        let p1 = Problem::new(&agents, &s1, &bundle, &risk);
        let second = negotiate_episode(&p1, &tight, &op, 9).unwrap();
        assert_eq!(second.status, Status::Failed);
        assert_eq!(second.fallback.as_ref(), Some(&accepted));
        assert_eq!(apply_fallback(&p1, cfg.tau, &op).unwrap(), accepted);
        assert_eq!(
            apply_fallback(&p1, cfg.tau, &FallbackOperator::new()).unwrap(),
            JointAction::safe_defaults(&agents)
        );
    }

    #[test]
    fn hypothesis_holds_without_projection_effects() {
        let agents = vec![agent("a", A), agent("b", B)];
        let risk = profile(&[("a", A), ("b", B)]);
        let bundle = PolicyBundle::permissive(&agents);
        let s = state();
        let p = Problem::new(&agents, &s, &bundle, &risk);
        assert!(monotone_response_hypothesis(&p, &[0.25, 0.5]).unwrap());
    }

    #[test]
    fn config_errors_surface() {
        let agents = vec![agent("a", A)];
        let risk = profile(&[("a", A)]);
        let bundle = PolicyBundle::permissive(&agents);
        let cfg = CoordinationConfig {
            k_max: 0,
            ..Default::default()
        };
        assert!(matches!(
            negotiate(&agents, &state(), &bundle, &risk, &cfg),
            Err(Error::ConfigInvalid(_))
        ));
    }
}
