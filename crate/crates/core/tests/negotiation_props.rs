use concord_core::domain::{enumerate_joint_actions, ORACLE_CAP};
use concord_core::negotiation::{monotone_response_hypothesis, negotiate, Problem, Status};
use concord_core::oracle::constrained_optimum;
use concord_core::policy::{eval_phi, is_execution_feasible};
use concord_core::synthetic::{random_instance, rng};

#[test]
fn negotiation_terminates_within_budget_and_accepts_only_compliant_tuples() {
    let mut r = rng(0xC0FFEE);
    let mut accepted = 0;
    for case in 0..10_000 {
        let inst = random_instance(&mut r, 4, 6, true);
        let p = Problem::new(&inst.agents, &inst.state, &inst.bundle, &inst.risk);
        let out = negotiate(&inst.agents, &inst.state, &inst.bundle, &inst.risk, &inst.cfg).unwrap();
        assert!(
            out.iterations_used >= 1 && out.iterations_used <= inst.cfg.k_max,
            "case {case}"
        );
        assert_eq!(out.rounds.len() as u32, out.iterations_used, "case {case}");
        assert!(out.lambda_trajectory.windows(2).all(|w| w[0] <= w[1]), "case {case}");
        match out.status {
            Status::Accepted => {
                accepted += 1;
                let j = out.joint.as_ref().unwrap();
                assert!(p.is_compliant(j, inst.cfg.tau).unwrap(), "case {case}");
            }
            Status::Failed => assert_eq!(out.iterations_used, inst.cfg.k_max, "case {case}"),
        }
    }
    assert!(accepted > 1000);
}

#[test]
fn total_risk_is_non_increasing_across_rejected_rounds_under_the_monotone_hypothesis() {
    let mut r = rng(0x5EED);
    let mut certified = 0;
    let mut checked_pairs = 0;
    for case in 0..10_000 {
        let inst = random_instance(&mut r, 4, 6, false);
        let p = Problem::new(&inst.agents, &inst.state, &inst.bundle, &inst.risk);
        let out = negotiate(&inst.agents, &inst.state, &inst.bundle, &inst.risk, &inst.cfg).unwrap();
        if !monotone_response_hypothesis(&p, &out.lambda_trajectory).unwrap() {
            continue;
        }
        certified += 1;
        for w in out.rounds.windows(2) {
            if w[0].r_tot > inst.cfg.tau {
                checked_pairs += 1;
                assert!(
                    w[1].r_tot <= w[0].r_tot,
                    "case {case}: R went {} -> {} at λ {} -> {}",
                    w[0].r_tot,
                    w[1].r_tot,
                    w[0].lambda,
                    w[1].lambda
                );
            }
        }
    }
    assert!(certified > 1000, "only {certified} instances satisfy the hypothesis");
    assert!(checked_pairs > 100);
}

#[test]
fn accepted_outputs_are_oracle_feasible_and_infeasible_instances_fail() {
    let mut r = rng(0x0AC1E);
    let mut infeasible = 0;
    for case in 0..1_000 {
        let inst = random_instance(&mut r, 3, 6, true);
        let p = Problem::new(&inst.agents, &inst.state, &inst.bundle, &inst.risk);
        let optimum = constrained_optimum(&p, inst.cfg.tau, ORACLE_CAP).unwrap();
        let out = negotiate(&inst.agents, &inst.state, &inst.bundle, &inst.risk, &inst.cfg).unwrap();
        if let (Status::Accepted, Some(j)) = (out.status, &out.joint) {
            // independent membership: the tuple is one of the enumerated ones,
            // every predicate holds, every action is permitted and the risk fits
            assert!(enumerate_joint_actions(&inst.agents, ORACLE_CAP)
                .unwrap()
                .any(|x| &x == j));
            assert!(eval_phi(&inst.bundle, &inst.state, j).unwrap().phi, "case {case}");
            for (a, act) in inst.agents.iter().zip(j.actions()) {
                assert!(is_execution_feasible(&inst.bundle, &inst.state, a, act), "case {case}");
            }
            let total: f64 = inst
                .agents
                .iter()
                .zip(j.actions())
                .map(|(a, act)| inst.risk.agent_risk(&a.agent_id, act, &inst.state).unwrap())
                .sum();
            assert!(total <= inst.cfg.tau + 1e-12, "case {case}");
            let o = optimum.as_ref().expect("accepted implies a feasible point");
            assert!(p.total_utility(j) <= o.utility + 1e-12);
        }
        if optimum.is_none() {
            infeasible += 1;
            assert_eq!(out.status, Status::Failed, "case {case}");
        }
    }
    assert!(
        infeasible > 10,
        "generator produced only {infeasible} infeasible instances"
    );
}

#[test]
fn negotiation_is_deterministic() {
    let mut r = rng(7);
    for _ in 0..500 {
        let inst = random_instance(&mut r, 4, 6, true);
        let a = negotiate(&inst.agents, &inst.state, &inst.bundle, &inst.risk, &inst.cfg).unwrap();
        let b = negotiate(&inst.agents, &inst.state, &inst.bundle, &inst.risk, &inst.cfg).unwrap();
        assert_eq!(a, b);
    }
}
