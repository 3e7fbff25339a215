use concord_core::domain::ActionValue;
use concord_core::expr::Value;
use concord_core::policy::{is_execution_feasible, satisfies_unary, Halfspace, PolicyBundle};
use concord_core::projection::{project, project_continuous, ProjectionOutcome};
use concord_core::synthetic::{random_agent, random_predicate, random_rule, random_state, rng};
use rand::Rng;

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
        unreachable!()
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

#[test]
fn discrete_projection_matches_brute_force_and_is_idempotent() {
    let mut r = rng(0xD15C);
    let mut moved = 0;
    let mut rejected = 0;
    for case in 0..10_000 {
        let n = r.gen_range(1..=3);
        let agents: Vec<_> = (0..n)
            .map(|i| {
                let m = r.gen_range(1..=8);
                random_agent(&mut r, &format!("g{i}"), m)
            })
            .collect();
        let mut bundle = PolicyBundle {
            predicates: Vec::new(),
            feasibility: agents.iter().map(|a| random_rule(&mut r, a)).collect(),
            bundle_version: "random".into(),
        };
        for i in 0..r.gen_range(0..=3) {
            bundle.predicates.push(random_predicate(&mut r, &agents, i, true));
        }
        let state = random_state(&mut r);
        let agent = &agents[0];
        let actions = agent.discrete_actions().unwrap();
        let proposal = &actions[r.gen_range(0..actions.len())];

        // oracle: filter each action on its own, then scan for the nearest
        let feasible: Vec<&ActionValue> = actions
            .iter()
            .filter(|a| {
                is_execution_feasible(&bundle, &state, agent, a) && satisfies_unary(&bundle, &state, &agent.agent_id, a)
            })
            .collect();
        let label_cost = agent.edit_distance.label_cost;
        let range = agent.edit_distance.numeric_ranges["tier"];
        let best = feasible
            .iter()
            .map(|a| edit_distance(proposal, a, label_cost, range))
            .fold(f64::INFINITY, f64::min);

        let res = project(agent, &state, &bundle, proposal).unwrap();
        match res.outcome {
            ProjectionOutcome::Reject => {
                rejected += 1;
                assert!(feasible.is_empty(), "case {case}");
            }
            ProjectionOutcome::Unchanged => {
                assert!(feasible.contains(&proposal), "case {case}");
                assert_eq!(res.distance, 0.0);
            }
            ProjectionOutcome::Projected => {
                moved += 1;
                let chosen = res.action.clone().unwrap();
                assert!(feasible.contains(&&chosen), "case {case}");
                assert_eq!(res.distance, best, "case {case}");
                assert_eq!(edit_distance(proposal, &chosen, label_cost, range), best, "case {case}");
            }
        }
        if let Some(a) = &res.action {
            let again = project(agent, &state, &bundle, a).unwrap();
            assert_eq!(again.outcome, ProjectionOutcome::Unchanged, "case {case}");
            assert_eq!(again.action.as_ref(), Some(a));
        }
    }
    assert!(moved > 1000 && rejected > 0, "moved {moved}, rejected {rejected}");
}

#[test]
fn box_projection_is_an_exact_clamp() {
    let mut r = rng(0xB0C5);
    for _ in 0..10_000 {
        let d = r.gen_range(1..=5);
        let lower: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..0.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + r.gen_range(0.0..3.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| r.gen_range(-5.0..5.0)).collect();
        let res = project_continuous(&x, &lower, &upper, &[]).unwrap();
        let Some(ActionValue::Continuous { values }) = res.action else {
            panic!("box projection never rejects")
        };
        for j in 0..d {
            assert_eq!(values[j], x[j].max(lower[j]).min(upper[j]));
        }
        // idempotent
        let again = project_continuous(&values, &lower, &upper, &[]).unwrap();
        assert_eq!(again.outcome, ProjectionOutcome::Unchanged);
    }
}

/// Nearest feasible point by grid search over the box. Each level zooms to a
/// square window three quarters the size of the last, centred on the
/// incumbent. The slow shrink lets the incumbent travel along directions where
/// the distance is nearly flat.
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

/// Exact nearest point in 2D: the minimiser is `x`, the foot on one
/// constraint line, or a vertex where two lines meet. Box faces are treated
/// as halfspaces.
fn vertex_oracle(x: &[f64; 2], lower: &[f64; 2], upper: &[f64; 2], hs: &[Halfspace]) -> Option<[f64; 2]> {
    let mut lines: Vec<([f64; 2], f64)> = vec![
        ([1.0, 0.0], upper[0]),
        ([-1.0, 0.0], -lower[0]),
        ([0.0, 1.0], upper[1]),
        ([0.0, -1.0], -lower[1]),
    ];
    lines.extend(hs.iter().map(|h| ([h.normal[0], h.normal[1]], h.offset)));
    let feasible = |p: &[f64; 2]| lines.iter().all(|(n, b)| n[0] * p[0] + n[1] * p[1] <= b + 1e-9);
    let mut candidates = vec![*x];
    for (n, b) in &lines {
        let t = (n[0] * x[0] + n[1] * x[1] - b) / (n[0] * n[0] + n[1] * n[1]);
        candidates.push([x[0] - t * n[0], x[1] - t * n[1]]);
    }
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let ((a, e), (c, f)) = (lines[i], lines[j]);
            let det = a[0] * c[1] - a[1] * c[0];
            if det.abs() > 1e-12 {
                candidates.push([(e * c[1] - a[1] * f) / det, (a[0] * f - e * c[0]) / det]);
            }
        }
    }
    let dist2 = |p: &[f64; 2]| (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
    candidates
        .into_iter()
        .filter(|p| feasible(p))
        .min_by(|p, q| dist2(p).total_cmp(&dist2(q)))
}

#[test]
fn halfspace_projection_matches_vertex_enumeration_and_dense_grid() {
    let mut r = rng(0x6A1D);
    let mut cases = 0;
    while cases < 100 {
        let lower = [r.gen_range(-1.0..0.0), r.gen_range(-1.0..0.0)];
        let upper = [lower[0] + r.gen_range(0.5..2.0), lower[1] + r.gen_range(0.5..2.0)];
        // every halfspace keeps a common interior point so the set is non-empty
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
        let res = project_continuous(&x, &lower, &upper, &hs).unwrap();
        let Some(ActionValue::Continuous { values }) = res.action else {
            panic!("non-empty set rejected")
        };
        let oracle = vertex_oracle(&x, &lower, &upper, &hs).unwrap();
        let od = ((oracle[0] - x[0]).powi(2) + (oracle[1] - x[1]).powi(2)).sqrt();
        assert!(
            (res.distance - od).abs() <= 1e-9,
            "case {cases}: {} vs {od}",
            res.distance
        );
        let grid = grid_oracle(&x, &lower, &upper, &hs).unwrap();
        let gd = ((grid[0] - x[0]).powi(2) + (grid[1] - x[1]).powi(2)).sqrt();
        assert!(
            (res.distance - gd).abs() <= 1e-6,
            "case {cases}: grid {gd} vs {}",
            res.distance
        );
        assert!(
            (values[0] - oracle[0]).abs() <= 1e-6 && (values[1] - oracle[1]).abs() <= 1e-6,
            "case {cases}: {values:?} vs {oracle:?}, x {x:?} box {lower:?} {upper:?} {hs:?}"
        );
        assert!(hs.iter().all(|h| h.contains(&values, 1e-9)));
        cases += 1;
    }
}
