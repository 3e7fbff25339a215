//! Financial approval workflow: requester, manager, compliance officer, CFO.

use crate::domain::ScenarioId;
use crate::expr::{CmpOp, Expr, Value};
use crate::policy::{DutyRef, FeasibilityRule, PermGrant, PolicyBundle, PolicyPredicate, PredicateKind};
use crate::risk::RiskProfile;

use super::{labels, ladder_agent, register_ladder_risk, rung, Distribution, Rung, ScenarioDefinition, StateSampler};

// base risk per rung: [financial, compliance]
const REQUESTER: &[Rung] = &[
    rung("hold", 0.0, 0.20, &[0.0, 0.0]),
    rung("submit_docs", 1.0, 0.55, &[0.028, 0.028]),
    rung("submit", 2.0, 0.79, &[0.084, 0.056]),
    rung("submit_expedited", 3.0, 0.95, &[0.168, 0.098]),
    rung("submit_split", 4.0, 1.00, &[0.28, 0.168]),
];

const MANAGER: &[Rung] = &[
    rung("defer", 0.0, 0.20, &[0.0, 0.0]),
    rung("request_info", 1.0, 0.50, &[0.014, 0.028]),
    rung("approve", 2.0, 0.81, &[0.07, 0.084]),
    rung("approve_fast", 3.0, 0.96, &[0.168, 0.14]),
    rung("approve_delegated", 4.0, 1.00, &[0.28, 0.252]),
];

const COMPLIANCE: &[Rung] = &[
    rung("hold", 0.0, 0.20, &[0.0, 0.0]),
    rung("screen", 1.0, 0.60, &[0.014, 0.07]),
    rung("clear", 2.0, 0.82, &[0.042, 0.224]),
    rung("clear_fast", 3.0, 0.95, &[0.084, 0.3]),
    rung("waive_kyc", 4.0, 1.00, &[0.14, 0.45]),
];

const CFO: &[Rung] = &[
    rung("abstain", 0.0, 0.20, &[0.0, 0.0]),
    rung("co_sign", 1.0, 0.70, &[0.056, 0.014]),
    rung("release", 2.0, 0.86, &[0.182, 0.042]),
    rung("release_priority", 3.0, 1.00, &[0.392, 0.084]),
];

/// Amount above which the CFO must take part.
pub const ESCALATION_THRESHOLD: f64 = 100_000.0;
/// Amount above which split submissions are not permitted.
pub const SPLIT_LIMIT: f64 = 200_000.0;

pub(super) fn build() -> ScenarioDefinition {
    let roster = vec![
        ladder_agent("requester", "requester", REQUESTER),
        ladder_agent("manager", "manager", MANAGER),
        ladder_agent("compliance", "compliance officer", COMPLIANCE),
        ladder_agent("cfo", "CFO", CFO),
    ];

    let rating_factor = Expr::Table {
        key: Box::new(Expr::state("counterparty_rating")),
        entries: [("A", 0.8), ("B", 1.0), ("C", 1.3)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        default: 1.3,
    };
    let financial = Expr::Mul(vec![Expr::state("amount"), Expr::num(1.0 / 100_000.0), rating_factor]);
    let compliance = Expr::if_else(Expr::state("new_vendor"), Expr::num(1.5), Expr::num(1.0));
    let mut risk = RiskProfile::new(&[("financial", 0.6), ("compliance", 0.4)]);
    let exposure = [(financial, 2.5 * 1.3), (compliance, 1.5)];
    for (agent, rungs) in [
        ("requester", REQUESTER),
        ("manager", MANAGER),
        ("compliance", COMPLIANCE),
        ("cfo", CFO),
    ] {
        register_ladder_risk(&mut risk, agent, rungs, &exposure);
    }

    let submits = labels(REQUESTER, 2.0);
    let approvals = labels(MANAGER, 2.0);
    let cfo_acts = labels(CFO, 1.0);
    let amount_over = |limit: f64| Expr::cmp(CmpOp::Gt, Expr::state("amount"), Expr::num(limit));

    let requester_rule = FeasibilityRule::permissive("requester").with_perm(vec![
        PermGrant::labels(&labels(REQUESTER, 0.0)[..4]),
        PermGrant::labels(&["submit_split"]).when(Expr::negate(amount_over(SPLIT_LIMIT))),
    ]);
    let compliance_rule = FeasibilityRule::permissive("compliance").with_perm(vec![
        PermGrant::labels(&labels(COMPLIANCE, 0.0)[..4]),
        PermGrant::labels(&["waive_kyc"]).when(Expr::negate(Expr::state("new_vendor"))),
    ]);

    let predicates = vec![
        PolicyPredicate::new(
            "escalation_above_threshold",
            PredicateKind::ThresholdGate {
                subject: DutyRef::new("requester", &submits),
                value: Expr::state("amount"),
                threshold: ESCALATION_THRESHOLD,
                escalation: DutyRef::new("cfo", &cfo_acts),
            },
        ),
        PolicyPredicate::new(
            "requester_not_approver",
            PredicateKind::Custom {
                expr: Expr::negate(Expr::And(vec![
                    Expr::state("requester_holds_delegation"),
                    Expr::acts("requester", &submits),
                    Expr::acts("manager", &["approve_delegated"]),
                ])),
            },
        ),
        PolicyPredicate::new(
            "approval_chain",
            PredicateKind::ApprovalChain {
                when: Expr::acts("requester", &submits),
                steps: vec![DutyRef::new("requester", &submits), DutyRef::new("manager", &approvals)],
            },
        ),
        PolicyPredicate::new(
            "sanctions_screening",
            PredicateKind::Custom {
                expr: Expr::implies(
                    Expr::And(vec![Expr::state("sanctions_hit"), Expr::acts("requester", &submits)]),
                    Expr::acts("compliance", &["screen"]),
                ),
            },
        ),
        PolicyPredicate::new(
            "no_priority_release_low_rating",
            PredicateKind::Custom {
                expr: Expr::negate(Expr::And(vec![
                    Expr::cmp(
                        CmpOp::Eq,
                        Expr::state("counterparty_rating"),
                        Expr::Lit(Value::from("C")),
                    ),
                    Expr::acts("cfo", &["release_priority"]),
                ])),
            },
        ),
    ];

    let bundle = PolicyBundle {
        predicates,
        feasibility: vec![
            requester_rule,
            FeasibilityRule::permissive("manager"),
            compliance_rule,
            FeasibilityRule::permissive("cfo"),
        ],
        bundle_version: "s1-1".into(),
    };

    let sampler = StateSampler::default()
        .var(
            "amount",
            Distribution::LogUniform {
                lo: 20_000.0,
                hi: 250_000.0,
            },
        )
        .var(
            "counterparty_rating",
            Distribution::Choice {
                options: vec![Value::from("A"), Value::from("B"), Value::from("C")],
                weights: vec![0.55, 0.37, 0.08],
            },
        )
        .var("new_vendor", Distribution::Bernoulli { p: 0.08 })
        .var("requester_holds_delegation", Distribution::Bernoulli { p: 0.05 })
        .var("sanctions_hit", Distribution::Bernoulli { p: 0.015 });

    ScenarioDefinition {
        id: ScenarioId::S1,
        version: super::SCENARIO_VERSION.into(),
        seed: 0,
        roster,
        bundle,
        risk_profile: risk,
        state_sampler: sampler,
        tau_default: 1.0,
    }
}
