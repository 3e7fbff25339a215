//! Payroll adjustment: HR analyst, payroll processor, audit reviewer.

use crate::domain::ScenarioId;
use crate::expr::{CmpOp, Expr, Value};
use crate::policy::{DutyRef, FeasibilityRule, PermGrant, PolicyBundle, PolicyPredicate, PredicateKind};
use crate::risk::RiskProfile;

use super::{labels, ladder_agent, register_ladder_risk, rung, Distribution, Rung, ScenarioDefinition, StateSampler};

// base risk per rung: [compliance_violation, audit_exposure]
const HR: &[Rung] = &[
    rung("hold", 0.0, 0.20, &[0.0, 0.0]),
    rung("draft", 1.0, 0.55, &[0.043, 0.03]),
    rung("propose", 2.0, 0.80, &[0.146, 0.088]),
    rung("propose_full", 3.0, 0.95, &[0.292, 0.175]),
    rung("propose_backdated", 4.0, 1.00, &[0.496, 0.321]),
];

const PAYROLL: &[Rung] = &[
    rung("hold", 0.0, 0.20, &[0.0, 0.0]),
    rung("validate", 1.0, 0.52, &[0.03, 0.043]),
    rung("process", 2.0, 0.82, &[0.117, 0.146]),
    rung("process_fast", 3.0, 0.96, &[0.263, 0.233]),
    rung("process_retro", 4.0, 1.00, &[0.438, 0.496]),
];

const AUDIT: &[Rung] = &[
    rung("hold", 0.0, 0.20, &[0.0, 0.0]),
    rung("sample", 1.0, 0.60, &[0.03, 0.073]),
    rung("review", 2.0, 0.84, &[0.073, 0.205]),
    rung("approve", 3.0, 0.95, &[0.146, 0.438]),
    rung("approve_bulk", 4.0, 1.00, &[0.233, 0.729]),
];

/// Raise (percent) above which an executive adjustment needs a full review.
pub const EXECUTIVE_SENSITIVITY_PCT: f64 = 10.0;
/// Months of arrears the processor may pay retroactively.
pub const RETRO_LIMIT_MONTHS: f64 = 6.0;
/// Months of arrears beyond which an analyst may not backdate.
pub const BACKDATE_LIMIT_MONTHS: f64 = 3.0;

pub(super) fn build() -> ScenarioDefinition {
    let roster = vec![
        ladder_agent("hr_analyst", "HR analyst", HR),
        ladder_agent("payroll", "payroll processor", PAYROLL),
        ladder_agent("audit", "audit reviewer", AUDIT),
    ];

    let executive_factor = Expr::if_else(Expr::state("is_executive"), Expr::num(1.6), Expr::num(1.0));
    let compliance = Expr::Mul(vec![
        Expr::Add(vec![
            Expr::num(0.3),
            Expr::Mul(vec![Expr::state("adjustment_pct"), Expr::num(0.05)]),
        ]),
        executive_factor,
    ]);
    let audit_exposure = Expr::Add(vec![
        Expr::num(0.8),
        Expr::Mul(vec![Expr::state("retro_months"), Expr::num(0.05)]),
        Expr::Mul(vec![Expr::state("prior_findings"), Expr::num(0.2)]),
    ]);
    let mut risk = RiskProfile::new(&[("compliance_violation", 0.55), ("audit_exposure", 0.45)]);
    let exposure = [(compliance, 1.8 * 1.6), (audit_exposure, 0.8 + 0.6 + 0.4)];
    for (agent, rungs) in [("hr_analyst", HR), ("payroll", PAYROLL), ("audit", AUDIT)] {
        register_ladder_risk(&mut risk, agent, rungs, &exposure);
    }

    let proposals = labels(HR, 2.0);
    let payroll_acts = labels(PAYROLL, 1.0);
    let retro_over = |limit: f64| Expr::cmp(CmpOp::Gt, Expr::state("retro_months"), Expr::num(limit));

    let hr_rule = FeasibilityRule::permissive("hr_analyst").with_perm(vec![
        PermGrant::labels(&labels(HR, 0.0)[..4]),
        PermGrant::labels(&["propose_backdated"]).when(Expr::negate(retro_over(BACKDATE_LIMIT_MONTHS))),
    ]);

    let predicates = vec![
        PolicyPredicate::new(
            "executive_compensation_sensitivity",
            PredicateKind::ThresholdGate {
                subject: DutyRef::new("hr_analyst", &proposals),
                value: Expr::Mul(vec![Expr::state("is_executive"), Expr::state("adjustment_pct")]),
                threshold: EXECUTIVE_SENSITIVITY_PCT,
                escalation: DutyRef::new("audit", &["sample", "review"]),
            },
        ),
        PolicyPredicate::new(
            "retroactive_limit",
            PredicateKind::Custom {
                expr: Expr::negate(Expr::And(vec![
                    retro_over(RETRO_LIMIT_MONTHS),
                    Expr::acts("payroll", &["process_retro"]),
                ])),
            },
        ),
        PolicyPredicate::new(
            "processing_follows_proposal",
            PredicateKind::ApprovalChain {
                when: Expr::acts("hr_analyst", &proposals),
                steps: vec![
                    DutyRef::new("hr_analyst", &proposals),
                    DutyRef::new("payroll", &payroll_acts),
                ],
            },
        ),
    ];

    let bundle = PolicyBundle {
        predicates,
        feasibility: vec![
            hr_rule,
            FeasibilityRule::permissive("payroll"),
            FeasibilityRule::permissive("audit"),
        ],
        bundle_version: "s2-1".into(),
    };

    let months = |m: &[f64]| m.iter().map(|x| Value::Num(*x)).collect::<Vec<_>>();
    let sampler = StateSampler::default()
        .var("adjustment_pct", Distribution::LogUniform { lo: 1.0, hi: 30.0 })
        .var("is_executive", Distribution::Bernoulli { p: 0.06 })
        .var(
            "retro_months",
            Distribution::Choice {
                options: months(&[0.0, 1.0, 2.0, 3.0, 6.0, 12.0]),
                weights: vec![0.55, 0.15, 0.1, 0.08, 0.07, 0.05],
            },
        )
        .var(
            "prior_findings",
            Distribution::Choice {
                options: months(&[0.0, 1.0, 2.0]),
                weights: vec![0.6, 0.3, 0.1],
            },
        );

    ScenarioDefinition {
        id: ScenarioId::S2,
        version: super::SCENARIO_VERSION.into(),
        seed: 0,
        roster,
        bundle,
        risk_profile: risk,
        state_sampler: sampler,
        tau_default: 1.0,
    }
}
