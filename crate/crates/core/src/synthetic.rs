//! Random synthetic instances for property checks and oracle comparisons.

use crate::domain::{
    ActionSpace, ActionValue, AgentSpec, CoordinationConfig, DualUpdateRule, EnterpriseState, ScenarioId,
};
use crate::expr::{Expr, Value};
use crate::policy::{DutyRef, FeasibilityRule, PermGrant, PolicyBundle, PolicyPredicate, PredicateKind, Window};
use crate::projection::EditDistance;
use crate::risk::{Indicator, RiskProfile};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct Instance {
    pub agents: Vec<AgentSpec>,
    pub bundle: PolicyBundle,
    pub risk: RiskProfile,
    pub state: EnterpriseState,
    pub cfg: CoordinationConfig,
}

pub fn labels_of(agent: &AgentSpec) -> Vec<String> {
    agent
        .discrete_actions()
        .unwrap()
        .iter()
        .map(|a| a.label().unwrap().to_string())
        .collect()
}

/// Discrete agent with `m` actions `a0..`, a numeric `tier` and a
/// categorical `kind` attribute. `a0` is the safe default.
pub fn random_agent(r: &mut impl Rng, id: &str, m: usize) -> AgentSpec {
    let actions: Vec<ActionValue> = (0..m)
        .map(|k| {
            let kind = if r.gen_bool(0.5) { "p" } else { "q" };
            ActionValue::discrete(
                &format!("a{k}"),
                [("tier", Value::Num(k as f64)), ("kind", Value::from(kind))],
            )
        })
        .collect();
    let table: Vec<(String, f64)> = (0..m).map(|k| (format!("a{k}"), r.gen_range(0.0..1.0))).collect();
    let table_ref: Vec<(&str, f64)> = table.iter().map(|(l, u)| (l.as_str(), *u)).collect();
    AgentSpec {
        agent_id: id.to_string(),
        role: id.to_string(),
        safe_default: actions[0].clone(),
        action_space: ActionSpace::Discrete(actions),
        utility_fn: Expr::label_table(&table_ref, 0.0),
        edit_distance: EditDistance {
            label_cost: r.gen_range(0.5..1.5),
            ..Default::default()
        }
        .with_range("tier", (m.max(2) - 1) as f64),
    }
}

fn random_labels(r: &mut impl Rng, m: usize, include_default: bool) -> Vec<String> {
    let from = if include_default { 0 } else { 1 };
    let mut out: Vec<String> = (from..m).filter(|_| r.gen_bool(0.5)).map(|k| format!("a{k}")).collect();
    if out.is_empty() && m > from {
        out.push(format!("a{}", r.gen_range(from..m)));
    }
    out
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// Feasibility rule with a random permission subset (always containing the
/// safe default), an optional state-gated grant and an optional window.
pub fn random_rule(r: &mut impl Rng, agent: &AgentSpec) -> FeasibilityRule {
    let m = agent.discrete_actions().unwrap().len();
    let mut rule = FeasibilityRule::permissive(&agent.agent_id);
    if r.gen_bool(0.4) {
        let mut allowed = random_labels(r, m, false);
        allowed.push("a0".into());
        let mut grants = vec![PermGrant::labels(&refs(&allowed))];
        if r.gen_bool(0.5) {
            let extra = random_labels(r, m, false);
            grants.push(PermGrant::labels(&refs(&extra)).when(Expr::state("flag")));
        }
        rule = rule.with_perm(grants);
    }
    if r.gen_bool(0.1) {
        rule = rule.with_window(Window::Flag("open".into()));
    }
    rule
}

/// Random predicate over one or two agents. With `allow_infeasible` some
/// predicates forbid the all-defaults tuple.
pub fn random_predicate(r: &mut impl Rng, agents: &[AgentSpec], idx: usize, allow_infeasible: bool) -> PolicyPredicate {
    let i = r.gen_range(0..agents.len());
    let j = r.gen_range(0..agents.len());
    let (ai, aj) = (&agents[i], &agents[j]);
    let mi = labels_of(ai).len();
    let mj = labels_of(aj).len();
    let li = random_labels(r, mi, false);
    let lj = random_labels(r, mj, false);
    let id = format!("p{idx}");
    let kind = match r.gen_range(0..if allow_infeasible { 6 } else { 5 }) {
        0 => PredicateKind::Custom {
            expr: Expr::negate(Expr::And(vec![
                Expr::acts(&ai.agent_id, &refs(&li)),
                Expr::acts(&aj.agent_id, &refs(&lj)),
            ])),
        },
        1 => PredicateKind::Custom {
            expr: Expr::implies(
                Expr::acts(&ai.agent_id, &refs(&li)),
                Expr::acts(&aj.agent_id, &refs(&lj)),
            ),
        },
        2 => PredicateKind::ApprovalChain {
            when: Expr::acts(&aj.agent_id, &refs(&lj)),
            steps: vec![
                DutyRef::new(&ai.agent_id, &refs(&li)),
                DutyRef::new(&aj.agent_id, &refs(&lj)),
            ],
        },
        3 => PredicateKind::ThresholdGate {
            subject: DutyRef::new(&ai.agent_id, &refs(&li)),
            value: Expr::state("x"),
            threshold: r.gen_range(0.0..1.0),
            escalation: DutyRef::new(&aj.agent_id, &refs(&lj)),
        },
        4 => PredicateKind::TemporalOrder {
            before: DutyRef::new(&ai.agent_id, &refs(&li)),
            after: DutyRef::new(&aj.agent_id, &refs(&lj)),
        },
        _ => PredicateKind::Custom {
            expr: Expr::acts(&ai.agent_id, &refs(&li)),
        },
    };
    PolicyPredicate::new(&id, kind)
}

pub fn random_state(r: &mut impl Rng) -> EnterpriseState {
    EnterpriseState::new(ScenarioId::Synthetic, r.gen())
        .with("x", r.gen_range(0.0..1.0))
        .with("flag", r.gen_bool(0.5))
        .with("open", r.gen_bool(0.7))
}

pub fn random_config(r: &mut impl Rng) -> CoordinationConfig {
    let rule = *[
        DualUpdateRule::RatioStep,
        DualUpdateRule::HingeAscent,
        DualUpdateRule::DiminishingHinge,
    ]
    .choose(r)
    .unwrap();
    CoordinationConfig {
        tau: r.gen_range(0.1..1.5),
        lambda0: if r.gen_bool(0.2) { r.gen_range(0.0..1.0) } else { 0.0 },
        delta: r.gen_range(0.05..1.0),
        k_max: r.gen_range(1..=12),
        dual_update_rule: rule,
        eta0: r.gen_range(0.5..4.0),
        alpha: r.gen_range(0.5..6.0),
    }
}

/// Random multi-agent instance; the safe default always has zero risk.
pub fn random_instance(r: &mut impl Rng, max_agents: usize, max_actions: usize, allow_infeasible: bool) -> Instance {
    let n = r.gen_range(1..=max_agents);
    let agents: Vec<AgentSpec> = (0..n)
        .map(|i| {
            let m = r.gen_range(1..=max_actions);
            random_agent(r, &format!("g{i}"), m)
        })
        .collect();
    let two_dims = r.gen_bool(0.5);
    let mut risk = if two_dims {
        let w = r.gen_range(0.1..0.9);
        RiskProfile::new(&[("d0", w), ("d1", 1.0 - w)])
    } else {
        RiskProfile::new(&[("d0", 1.0)])
    };
    let dims: Vec<String> = risk.dimensions.clone();
    for a in &agents {
        for d in &dims {
            let table: Vec<(String, f64)> = labels_of(a)
                .into_iter()
                .enumerate()
                .map(|(k, l)| (l, if k == 0 { 0.0 } else { r.gen_range(0.0..0.8) }))
                .collect();
            let max = table.iter().map(|(_, v)| *v).fold(0.0, f64::max);
            let t: Vec<(&str, f64)> = table.iter().map(|(l, v)| (l.as_str(), *v)).collect();
            let (expr, bound) = if r.gen_bool(0.3) {
                (
                    Expr::Mul(vec![
                        Expr::label_table(&t, 0.0),
                        Expr::Add(vec![Expr::num(0.5), Expr::state("x")]),
                    ]),
                    max * 1.5,
                )
            } else {
                (Expr::label_table(&t, 0.0), max)
            };
            risk.register(&a.agent_id, d, Indicator::new(expr, bound));
        }
    }
    let feasibility = agents.iter().map(|a| random_rule(r, a)).collect();
    let k = r.gen_range(0..=3);
    let predicates = (0..k)
        .map(|i| random_predicate(r, &agents, i, allow_infeasible))
        .collect();
    let bundle = PolicyBundle {
        predicates,
        feasibility,
        bundle_version: "random".into(),
    };
    Instance {
        agents,
        bundle,
        risk,
        state: random_state(r),
        cfg: random_config(r),
    }
}
