//! Cloud deployment: developer, devops, security, change manager, SRE.

use crate::domain::{ActionSpace, ActionValue, AgentSpec, ScenarioId};
use crate::expr::{CmpOp, Expr, Value};
use crate::policy::{DutyRef, FeasibilityRule, PermGrant, PolicyBundle, PolicyPredicate, PredicateKind, Window};
use crate::risk::RiskProfile;

use super::{labels, ladder_agent, register_ladder_risk, rung, Distribution, Rung, ScenarioDefinition, StateSampler};

// base risk per rung: [disruption, rto_deviation]
const DEVELOPER: &[Rung] = &[
    rung("hold", 0.0, 0.20, &[0.0, 0.0]),
    rung("commit", 1.0, 0.55, &[0.011, 0.0055]),
    rung("merge", 2.0, 0.80, &[0.044, 0.022]),
    rung("merge_hotfix", 3.0, 0.95, &[0.088, 0.044]),
    rung("push_prod_direct", 4.0, 1.00, &[0.165, 0.088]),
];

const DEVOPS: &[Rung] = &[
    rung("hold", 0.0, 0.20, &[0.0, 0.0]),
    rung("stage", 1.0, 0.50, &[0.044, 0.033]),
    rung("deploy_canary", 2.0, 0.82, &[0.165, 0.11]),
    rung("deploy_full", 3.0, 0.96, &[0.385, 0.275]),
    rung("deploy_global", 4.0, 1.00, &[0.66, 0.44]),
];

const SECURITY: &[Rung] = &[
    rung("hold", 0.0, 0.20, &[0.0, 0.0]),
    rung("scan", 1.0, 0.60, &[0.0055, 0.0055]),
    rung("review", 2.0, 0.82, &[0.022, 0.011]),
    rung("approve", 3.0, 0.95, &[0.055, 0.0275]),
    rung("approve_waiver", 4.0, 1.00, &[0.11, 0.055]),
];

const CHANGE_MGR: &[Rung] = &[
    rung("hold", 0.0, 0.20, &[0.0, 0.0]),
    rung("log", 1.0, 0.55, &[0.0055, 0.0055]),
    rung("approve_standard", 2.0, 0.84, &[0.022, 0.0165]),
    rung("approve_normal", 3.0, 0.95, &[0.055, 0.033]),
    rung("approve_emergency", 4.0, 1.00, &[0.11, 0.066]),
];

const SRE: &[Rung] = &[
    rung("hold", 0.0, 0.20, &[0.0, 0.0]),
    rung("monitor", 1.0, 0.60, &[0.022, 0.055]),
    rung("prepare_rollback", 2.0, 0.84, &[0.055, 0.2]),
    rung("verify", 3.0, 0.95, &[0.132, 0.33]),
    rung("skip_rollback_prep", 4.0, 1.00, &[0.33, 0.66]),
];

/// Labels of devops actions that touch production.
const DEPLOYS: [&str; 3] = ["deploy_canary", "deploy_full", "deploy_global"];

/// Devops ladder with the deployment target attached to each action.
fn devops_agent() -> AgentSpec {
    let mut agent = ladder_agent("devops", "devops engineer", DEVOPS);
    if let ActionSpace::Discrete(actions) = &mut agent.action_space {
        for a in actions.iter_mut().skip(1) {
            if let ActionValue::Discrete { label, attributes } = a {
                let target = if label == "deploy_global" { "global" } else { "regional" };
                attributes.insert("target".into(), Value::from(target));
            }
        }
    }
    agent
}

pub(super) fn build() -> ScenarioDefinition {
    let roster = vec![
        ladder_agent("developer", "developer", DEVELOPER),
        devops_agent(),
        ladder_agent("security", "security engineer", SECURITY),
        ladder_agent("change_mgr", "change manager", CHANGE_MGR),
        ladder_agent("sre", "SRE", SRE),
    ];

    let criticality = Expr::Table {
        key: Box::new(Expr::state("service_tier")),
        entries: [("1", 1.3), ("2", 1.0), ("3", 0.8)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        default: 1.3,
    };
    let disruption = Expr::Mul(vec![
        Expr::Add(vec![
            Expr::num(0.4),
            Expr::Mul(vec![Expr::state("change_size"), Expr::num(0.04)]),
        ]),
        criticality,
    ]);
    let rto = Expr::if_else(Expr::state("rollback_tested"), Expr::num(1.0), Expr::num(1.5));
    let mut risk = RiskProfile::new(&[("disruption", 0.6), ("rto_deviation", 0.4)]);
    // restoring an untested rollback falls on the on-call SRE
    let sre_rto = Expr::if_else(
        Expr::state("rollback_tested"),
        Expr::num(1.0),
        Expr::Add(vec![Expr::num(1.2), Expr::state("pager_load")]),
    );
    let exposure = [(disruption.clone(), 2.0 * 1.3), (rto, 1.5)];
    for (agent, rungs) in [
        ("developer", DEVELOPER),
        ("devops", DEVOPS),
        ("security", SECURITY),
        ("change_mgr", CHANGE_MGR),
    ] {
        register_ladder_risk(&mut risk, agent, rungs, &exposure);
    }
    register_ladder_risk(&mut risk, "sre", SRE, &[(disruption, 2.0 * 1.3), (sre_rto, 2.4)]);

    let developer_rule = FeasibilityRule::permissive("developer").with_perm(vec![
        PermGrant::labels(&labels(DEVELOPER, 0.0)[..4]),
        PermGrant::labels(&["push_prod_direct"]).when(Expr::state("dev_has_prod_role")),
    ]);
    let change_rule = FeasibilityRule::permissive("change_mgr").with_perm(vec![
        PermGrant::labels(&labels(CHANGE_MGR, 0.0)[..4]),
        PermGrant::labels(&["approve_emergency"]).when(Expr::state("cab_quorum")),
    ]);
    let devops_rule = FeasibilityRule::permissive("devops").with_window(Window::Flag("in_change_window".into()));

    let predicates = vec![
        PolicyPredicate::new(
            "data_sovereignty",
            PredicateKind::Custom {
                expr: Expr::negate(Expr::And(vec![
                    Expr::state("eu_data"),
                    Expr::cmp(
                        CmpOp::Eq,
                        Expr::attr_of("devops", "target"),
                        Expr::Lit(Value::from("global")),
                    ),
                ])),
            },
        ),
        PolicyPredicate::new(
            "rollback_readiness",
            PredicateKind::Custom {
                expr: Expr::implies(
                    Expr::And(vec![
                        Expr::negate(Expr::state("rollback_tested")),
                        Expr::acts("devops", &DEPLOYS),
                    ]),
                    Expr::acts("sre", &["prepare_rollback", "verify"]),
                ),
            },
        ),
        PolicyPredicate::new(
            "release_chain",
            PredicateKind::ApprovalChain {
                when: Expr::acts("devops", &DEPLOYS),
                steps: vec![
                    DutyRef::new("developer", &labels(DEVELOPER, 2.0)),
                    DutyRef::new("security", &labels(SECURITY, 2.0)),
                    DutyRef::new("change_mgr", &labels(CHANGE_MGR, 2.0)),
                    DutyRef::new("devops", &DEPLOYS),
                ],
            },
        ),
    ];

    let bundle = PolicyBundle {
        predicates,
        feasibility: vec![
            developer_rule,
            devops_rule,
            FeasibilityRule::permissive("security"),
            change_rule,
            FeasibilityRule::permissive("sre"),
        ],
        bundle_version: "s3-1".into(),
    };

    let sampler = StateSampler::default()
        .var("change_size", Distribution::LogUniform { lo: 1.0, hi: 40.0 })
        .var(
            "service_tier",
            Distribution::Choice {
                options: vec![Value::from("1"), Value::from("2"), Value::from("3")],
                weights: vec![0.25, 0.45, 0.30],
            },
        )
        .var("in_change_window", Distribution::Bernoulli { p: 0.93 })
        .var("eu_data", Distribution::Bernoulli { p: 0.06 })
        .var("rollback_tested", Distribution::Bernoulli { p: 0.92 })
        .var("dev_has_prod_role", Distribution::Bernoulli { p: 0.92 })
        .var("cab_quorum", Distribution::Bernoulli { p: 0.92 })
        .var("pager_load", Distribution::Uniform { lo: 0.0, hi: 1.2 });

    ScenarioDefinition {
        id: ScenarioId::S3,
        version: super::SCENARIO_VERSION.into(),
        seed: 0,
        roster,
        bundle,
        risk_profile: risk,
        state_sampler: sampler,
        tau_default: 1.0,
    }
}
