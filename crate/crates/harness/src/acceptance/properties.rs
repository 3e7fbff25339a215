//! Randomised criteria: termination, conditional monotonicity, projection
//! against brute force, and oracle agreement.

use concord_core::domain::{enumerate_joint_actions, ActionValue, ORACLE_CAP};
use concord_core::expr::Value;
use concord_core::negotiation::{monotone_response_hypothesis, negotiate, Problem, Status};
use concord_core::oracle::constrained_optimum;
use concord_core::policy::{eval_phi, is_execution_feasible, satisfies_unary, Halfspace, PolicyBundle};
use concord_core::projection::{project, project_continuous, ProjectionOutcome};
use concord_core::synthetic::{random_agent, random_instance, random_predicate, random_rule, random_state, rng};
use rand::Rng;
use rayon::prelude::*;

use super::CriterionResult;

/// Instance `k` of a family is generated from its own stream so the
/// criteria can fan out across threads and still be reproducible.
fn instance_rng(family: u64, k: u64) -> impl Rng {
    rng(family.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ k)
}

pub fn termination(instances: u64) -> CriterionResult {
    let bad: Vec<String> = (0..instances)
        .into_par_iter()
        .filter_map(|k| {
            let inst = random_instance(&mut instance_rng(8, k), 4, 6, true);
            let p = Problem::new(&inst.agents, &inst.state, &inst.bundle, &inst.risk);
            let out = match negotiate(&inst.agents, &inst.state, &inst.bundle, &inst.risk, &inst.cfg) {
                Ok(o) => o,
                Err(e) => return Some(format!("instance {k}: {e}")),
            };
            let within = out.iterations_used >= 1
                && out.iterations_used <= inst.cfg.k_max
                && out.rounds.len() as u32 == out.iterations_used;
            let status_ok = match out.status {
                Status::Accepted => out
                    .joint
                    .as_ref()
                    .is_some_and(|j| p.is_compliant(j, inst.cfg.tau).unwrap_or(false)),
                Status::Failed => out.iterations_used == inst.cfg.k_max,
            };
            (!(within && status_ok))
                .then(|| format!("instance {k}: {} rounds of {}", out.iterations_used, inst.cfg.k_max))
        })
        .collect();
    CriterionResult::new(
        8,
        "termination within K_max",
        bad.is_empty(),
        format!(
            "{instances} instances, {} timeouts or unsound returns {}",
            bad.len(),
            first_failure(&bad)
        ),
    )
}

fn first_failure<T: std::fmt::Display>(bad: &[T]) -> String {
    bad.first().map_or(String::new(), |b| format!("(first: {b})"))
}

pub fn conditional_monotonicity(instances: u64) -> CriterionResult {
    let results: Vec<(bool, usize, Vec<String>)> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let inst = random_instance(&mut instance_rng(9, k), 4, 6, false);
            let p = Problem::new(&inst.agents, &inst.state, &inst.bundle, &inst.risk);
            let Ok(out) = negotiate(&inst.agents, &inst.state, &inst.bundle, &inst.risk, &inst.cfg) else {
                return (false, 0, vec![format!("instance {k}: negotiation error")]);
            };
            if !monotone_response_hypothesis(&p, &out.lambda_trajectory).unwrap_or(false) {
                return (false, 0, Vec::new());
            }
            let mut pairs = 0;
            let mut bad = Vec::new();
            for w in out.rounds.windows(2) {
                if w[0].r_tot > inst.cfg.tau {
                    pairs += 1;
                    if w[1].r_tot > w[0].r_tot {
                        bad.push(format!("instance {k}: R {} -> {}", w[0].r_tot, w[1].r_tot));
                    }
                }
            }
            (true, pairs, bad)
        })
        .collect();
    let certified = results.iter().filter(|r| r.0).count();
    let pairs: usize = results.iter().map(|r| r.1).sum();
    let bad: Vec<&String> = results.iter().flat_map(|r| &r.2).collect();
    CriterionResult::new(
        9,
        "conditional monotonicity of total risk",
        bad.is_empty() && certified > 0 && pairs > 0,
        format!(
            "{certified} of {instances} instances certified, {pairs} rejected-round pairs, {} counterexamples {}",
            bad.len(),
            first_failure(&bad)
        ),
    )
}

/// Edit distance written out from its definition.
fn edit_distance(a: &ActionValue, b: &ActionValue, label_cost: f64, tier_range: f64) -> f64 {
    let (
        ActionValue::Discrete {
            label: la,
            attributes: xa,
        },
        ActionValue::Discrete {
            label: lb,
            attributes: xb,
        },
    ) = (a, b)
    else {
        return f64::INFINITY;
    };
    let mut d = if la == lb { 0.0 } else { label_cost };
    let mut keys: Vec<&String> = xa.keys().chain(xb.keys()).collect();
    keys.sort();
    keys.dedup();
    for k in keys {
        d += match (xa.get(k), xb.get(k)) {
            (Some(Value::Num(x)), Some(Value::Num(y))) => {
                let range = if k == "tier" { tier_range } else { 1.0 };
                (x - y).abs() / range
            }
            (Some(x), Some(y)) if x == y => 0.0,
            _ => 1.0,
        };
    }
    d
}

fn discrete_case(k: u64) -> Result<(), String> {
    let r = &mut instance_rng(10, k);
    let n = r.gen_range(1..=3);
    let agents: Vec<_> = (0..n)
        .map(|i| {
            let m = r.gen_range(1..=8);
            random_agent(r, &format!("g{i}"), m)
        })
        .collect();
    let mut bundle = PolicyBundle {
        predicates: Vec::new(),
        feasibility: agents.iter().map(|a| random_rule(r, a)).collect(),
        bundle_version: "random".into(),
    };
    for i in 0..r.gen_range(0..=3) {
        bundle.predicates.push(random_predicate(r, &agents, i, true));
    }
    let state = random_state(r);
    let agent = &agents[0];
    let actions = agent.discrete_actions().unwrap_or(&[]);
    let proposal = &actions[r.gen_range(0..actions.len())];
    let feasible: Vec<&ActionValue> = actions
        .iter()
        .filter(|a| {
            is_execution_feasible(&bundle, &state, agent, a) && satisfies_unary(&bundle, &state, &agent.agent_id, a)
        })
        .collect();
    let label_cost = agent.edit_distance.label_cost;
    let range = agent.edit_distance.numeric_ranges.get("tier").copied().unwrap_or(1.0);
    let best = feasible
        .iter()
        .map(|a| edit_distance(proposal, a, label_cost, range))
        .fold(f64::INFINITY, f64::min);
    let res = project(agent, &state, &bundle, proposal).map_err(|e| e.to_string())?;
    let fail = |m: &str| Err(format!("instance {k}: {m}"));
    match (&res.outcome, &res.action) {
        (ProjectionOutcome::Reject, None) if feasible.is_empty() => {}
        (ProjectionOutcome::Unchanged, Some(a)) if a == proposal && feasible.contains(&a) && res.distance == 0.0 => {}
        (ProjectionOutcome::Projected, Some(a))
            if feasible.contains(&a)
                && res.distance == best
                && edit_distance(proposal, a, label_cost, range) == best => {}
        _ => return fail("projection disagrees with brute force"),
    }
    if let Some(a) = &res.action {
        let again = project(agent, &state, &bundle, a).map_err(|e| e.to_string())?;
        if again.outcome != ProjectionOutcome::Unchanged || again.action.as_ref() != Some(a) {
            return fail("projection is not idempotent");
        }
    }
    Ok(())
}

fn box_case(k: u64) -> Result<(), String> {
    let r = &mut instance_rng(101, k);
    let d = r.gen_range(1..=5);
    let lower: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + r.gen_range(0.0..3.0)).collect();
    let x: Vec<f64> = (0..d).map(|_| r.gen_range(-5.0..5.0)).collect();
    let res = project_continuous(&x, &lower, &upper, &[]).map_err(|e| e.to_string())?;
    let Some(ActionValue::Continuous { values }) = &res.action else {
        return Err(format!("box {k}: rejected"));
    };
    if (0..d).any(|j| values[j] != x[j].max(lower[j]).min(upper[j])) {
        return Err(format!("box {k}: not a clamp"));
    }
    let again = project_continuous(values, &lower, &upper, &[]).map_err(|e| e.to_string())?;
    if again.outcome != ProjectionOutcome::Unchanged {
        return Err(format!("box {k}: not idempotent"));
    }
    Ok(())
}

/// Nearest feasible point by grid search over the box, zooming with square
/// windows that shrink by a quarter per level around the incumbent.
fn grid_oracle(x: &[f64; 2], lower: &[f64; 2], upper: &[f64; 2], hs: &[Halfspace]) -> Option<[f64; 2]> {
    const N: usize = 200;
    let feasible = |p: &[f64; 2]| hs.iter().all(|h| h.value(p) <= h.offset);
    let dist2 = |p: &[f64; 2]| (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
    let (mut lo, mut hi) = (*lower, *upper);
    let mut best: Option<[f64; 2]> = None;
    let mut width = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    while width > 1e-10 {
        for i in 0..=N {
            for j in 0..=N {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / N as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / N as f64,
                ];
                if feasible(&p) && best.is_none_or(|b| dist2(&p) < dist2(&b)) {
                    best = Some(p);
                }
            }
        }
        let b = best?;
        width *= 0.75;
        for k in 0..2 {
            lo[k] = (b[k] - width / 2.0).max(lower[k]);
            hi[k] = (b[k] + width / 2.0).min(upper[k]);
        }
    }
    best
}

fn halfspace_case(r: &mut impl Rng, k: usize) -> Result<(), String> {
    let lower = [r.gen_range(-1.0..0.0), r.gen_range(-1.0..0.0)];
    let upper = [lower[0] + r.gen_range(0.5..2.0), lower[1] + r.gen_range(0.5..2.0)];
    let anchor = [r.gen_range(lower[0]..upper[0]), r.gen_range(lower[1]..upper[1])];
    let hs: Vec<Halfspace> = (0..r.gen_range(1..=3))
        .map(|_| {
            let a: f64 = r.gen_range(0.0..std::f64::consts::TAU);
            let normal = vec![a.cos(), a.sin()];
            let offset = normal[0] * anchor[0] + normal[1] * anchor[1] + r.gen_range(0.0..0.3);
            Halfspace::new(normal, offset)
        })
        .collect();
    let x = [r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0)];
    let res = project_continuous(&x, &lower, &upper, &hs).map_err(|e| e.to_string())?;
    let Some(ActionValue::Continuous { values }) = &res.action else {
        return Err(format!("halfspace {k}: non-empty set rejected"));
    };
    let grid = grid_oracle(&x, &lower, &upper, &hs).ok_or(format!("halfspace {k}: grid found nothing"))?;
    let gd = ((grid[0] - x[0]).powi(2) + (grid[1] - x[1]).powi(2)).sqrt();
    if (res.distance - gd).abs() > 1e-6 || !hs.iter().all(|h| h.contains(values, 1e-9)) {
        return Err(format!("halfspace {k}: distance {} vs grid {gd}", res.distance));
    }
    Ok(())
}

pub fn projection(discrete: u64, boxes: u64, halfspaces: usize) -> CriterionResult {
    let mut errors: Vec<String> = (0..discrete)
        .into_par_iter()
        .filter_map(|k| discrete_case(k).err())
        .collect();
    errors.extend(
        (0..boxes)
            .into_par_iter()
            .filter_map(|k| box_case(k).err())
            .collect::<Vec<_>>(),
    );
    let mut r = instance_rng(102, 0);
    let seeds: Vec<u64> = (0..halfspaces).map(|_| r.gen()).collect();
    errors.extend(
        seeds
            .par_iter()
            .enumerate()
            .filter_map(|(k, s)| halfspace_case(&mut rng(*s), k).err())
            .collect::<Vec<_>>(),
    );
    CriterionResult::new(
        10,
        "projection feasibility, proximity and idempotency",
        errors.is_empty(),
        format!(
            "{discrete} discrete, {boxes} box, {halfspaces} halfspace instances; {} failures {}",
            errors.len(),
            first_failure(&errors)
        ),
    )
}

pub fn oracle_soundness(instances: u64) -> CriterionResult {
    let results: Vec<(bool, Option<String>)> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let inst = random_instance(&mut instance_rng(11, k), 3, 6, true);
            let p = Problem::new(&inst.agents, &inst.state, &inst.bundle, &inst.risk);
            let check = || -> concord_core::Result<(bool, Option<String>)> {
                let optimum = constrained_optimum(&p, inst.cfg.tau, ORACLE_CAP)?;
                let out = negotiate(&inst.agents, &inst.state, &inst.bundle, &inst.risk, &inst.cfg)?;
                if let (Status::Accepted, Some(j)) = (out.status, &out.joint) {
                    let member = enumerate_joint_actions(&inst.agents, ORACLE_CAP)?.any(|x| &x == j);
                    let phi = eval_phi(&inst.bundle, &inst.state, j)?.phi;
                    let feasible = inst
                        .agents
                        .iter()
                        .zip(j.actions())
                        .all(|(a, act)| is_execution_feasible(&inst.bundle, &inst.state, a, act));
                    let mut total = 0.0;
                    for (a, act) in inst.agents.iter().zip(j.actions()) {
                        total += inst.risk.agent_risk(&a.agent_id, act, &inst.state)?;
                    }
                    let bounded = optimum
                        .as_ref()
                        .is_some_and(|o| p.total_utility(j) <= o.utility + 1e-12);
                    if !(member && phi && feasible && total <= inst.cfg.tau && bounded) {
                        return Ok((
                            optimum.is_none(),
                            Some(format!("instance {k}: accepted tuple fails the oracle")),
                        ));
                    }
                }
                if optimum.is_none() && out.status != Status::Failed {
                    return Ok((true, Some(format!("instance {k}: infeasible instance accepted"))));
                }
                Ok((optimum.is_none(), None))
            };
            check().unwrap_or_else(|e| (false, Some(format!("instance {k}: {e}"))))
        })
        .collect();
    let infeasible = results.iter().filter(|r| r.0).count();
    let bad: Vec<&String> = results.iter().filter_map(|r| r.1.as_ref()).collect();
    CriterionResult::new(
        11,
        "oracle soundness and fail-correctness",
        bad.is_empty() && infeasible > 0,
        format!(
            "{instances} instances, {infeasible} oracle-infeasible, {} disagreements {}",
            bad.len(),
            first_failure(&bad)
        ),
    )
}
