//! Risk-weighted utility shaping and the dual multiplier update rules.

use serde::{Deserialize, Serialize};

use crate::domain::{ActionSpace, ActionValue, AgentSpec, CoordinationConfig, DualUpdateRule, EnterpriseState};
use crate::error::Result;
use crate::projection::tie_break_order;
use crate::risk::RiskProfile;

/// Grid points per dimension for continuous best responses.
pub const GRID_POINTS: usize = 33;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRecord {
    pub iteration: u32,
    pub lambda: f64,
    pub r_tot: f64,
}

/// Shared multiplier state. `iteration` is the negotiation round in which
/// the current `lambda` is used (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaState {
    pub lambda: f64,
    pub iteration: u32,
    pub rule: DualUpdateRule,
    pub history: Vec<LambdaRecord>,
}

impl LambdaState {
    pub fn new(cfg: &CoordinationConfig) -> Self {
        LambdaState {
            lambda: cfg.lambda0,
            iteration: 1,
            rule: cfg.dual_update_rule,
            history: Vec::new(),
        }
    }
}

/// `Ũ = U − λ·R`.
pub fn shaped_utility(utility: f64, risk: f64, lambda: f64) -> f64 {
    utility - lambda * risk
}

/// Increment produced by `rule` for one round.
pub fn lambda_increment(rule: DualUpdateRule, r_tot: f64, tau: f64, round: u32, cfg: &CoordinationConfig) -> f64 {
    let excess = (r_tot - tau).max(0.0);
    match rule {
        DualUpdateRule::RatioStep => cfg.delta * (r_tot / tau).max(1.0),
        DualUpdateRule::HingeAscent => cfg.alpha * excess,
        DualUpdateRule::DiminishingHinge => cfg.eta0 / f64::from(round.max(1)).sqrt() * excess,
    }
}

/// Applies the configured rule and appends to the history.
pub fn update_lambda(ls: &LambdaState, r_tot: f64, tau: f64, cfg: &CoordinationConfig) -> LambdaState {
    let lambda = ls.lambda + lambda_increment(ls.rule, r_tot, tau, ls.iteration, cfg);
    let mut history = ls.history.clone();
    history.push(LambdaRecord {
        iteration: ls.iteration,
        lambda,
        r_tot,
    });
    LambdaState {
        lambda,
        iteration: ls.iteration + 1,
        rule: ls.rule,
        history,
    }
}

/// A scored candidate action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub action: ActionValue,
    pub utility: f64,
    pub risk: f64,
    pub shaped: f64,
}

fn score(
    agent: &AgentSpec,
    state: &EnterpriseState,
    lambda: f64,
    profile: &RiskProfile,
    action: &ActionValue,
) -> Result<Scored> {
    let utility = agent.utility(state, action);
    let risk = profile.agent_risk(&agent.agent_id, action, state)?;
    Ok(Scored {
        action: action.clone(),
        utility,
        risk,
        shaped: shaped_utility(utility, risk, lambda),
    })
}

fn better(a: &Scored, b: &Scored) -> bool {
    a.shaped > b.shaped || (a.shaped == b.shaped && tie_break_order(&a.action, &b.action).is_lt())
}

fn grid(lower: f64, upper: f64) -> Vec<f64> {
    if upper <= lower {
        return vec![lower];
    }
    let step = (upper - lower) / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .map(|k| {
            if k == GRID_POINTS - 1 {
                upper
            } else {
                lower + step * k as f64
            }
        })
        .collect()
}

fn best_on_grid(
    agent: &AgentSpec,
    state: &EnterpriseState,
    lambda: f64,
    profile: &RiskProfile,
    axes: &[Vec<f64>],
) -> Result<Scored> {
    let mut idx = vec![0usize; axes.len()];
    let mut best: Option<Scored> = None;
    loop {
        let point: Vec<f64> = idx.iter().zip(axes).map(|(&i, ax)| ax[i]).collect();
        let s = score(
            agent,
            state,
            lambda,
            profile,
            &ActionValue::Continuous { values: point },
        )?;
        if best.as_ref().map(|b| better(&s, b)).unwrap_or(true) {
            best = Some(s);
        }
        let mut pos = idx.len();
        loop {
            if pos == 0 {
                return Ok(best.expect("grid is non-empty"));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < axes[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Best response with scores. Discrete: exact argmax with lexicographic
/// tie-break. Continuous: 33-point grid per axis, refined once around the
/// incumbent.
pub fn best_response_scored(
    agent: &AgentSpec,
    state: &EnterpriseState,
    lambda: f64,
    profile: &RiskProfile,
) -> Result<Scored> {
    match &agent.action_space {
        ActionSpace::Discrete(actions) => {
            let mut best: Option<Scored> = None;
            for a in actions {
                let s = score(agent, state, lambda, profile, a)?;
                if best.as_ref().map(|b| better(&s, b)).unwrap_or(true) {
                    best = Some(s);
                }
            }
            match best {
                Some(b) => Ok(b),
                None => score(agent, state, lambda, profile, &agent.safe_default),
            }
        }
        ActionSpace::Continuous { lower, upper } => {
            let coarse: Vec<Vec<f64>> = lower.iter().zip(upper).map(|(lo, hi)| grid(*lo, *hi)).collect();
            let incumbent = best_on_grid(agent, state, lambda, profile, &coarse)?;
            let ActionValue::Continuous { values } = &incumbent.action else {
                unreachable!("grid points are continuous")
            };
            let fine: Vec<Vec<f64>> = values
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(x, (lo, hi))| {
                    let cell = (hi - lo) / (GRID_POINTS - 1) as f64;
                    grid((x - cell).max(*lo), (x + cell).min(*hi))
                })
                .collect();
            let refined = best_on_grid(agent, state, lambda, profile, &fine)?;
            Ok(if better(&refined, &incumbent) {
                refined
            } else {
                incumbent
            })
        }
    }
}

/// `argmax_{a ∈ A_i} Ũ_i(s, a; λ)`.
pub fn best_response(
    agent: &AgentSpec,
    state: &EnterpriseState,
    lambda: f64,
    profile: &RiskProfile,
) -> Result<ActionValue> {
    best_response_scored(agent, state, lambda, profile).map(|s| s.action)
}

/// Multiplier values at which a discrete best response can change, sorted.
pub fn response_breakpoints(agent: &AgentSpec, state: &EnterpriseState, profile: &RiskProfile) -> Result<Vec<f64>> {
    let Some(actions) = agent.discrete_actions() else {
        return Ok(Vec::new());
    };
    let scored = actions
        .iter()
        .map(|a| score(agent, state, 0.0, profile, a))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for (i, a) in scored.iter().enumerate() {
        for b in &scored[i + 1..] {
            let dr = a.risk - b.risk;
            if dr != 0.0 {
                let l = (a.utility - b.utility) / dr;
                if l.is_finite() && l >= 0.0 {
                    points.push(l);
                }
            }
        }
    }
    points.sort_by(f64::total_cmp);
    points.dedup();
    Ok(points)
}

/// Multipliers covering every piece of the piecewise-constant best response
/// on `[0, ∞)`: zero, every breakpoint, midpoints and one point beyond.
pub fn lambda_probe_points(breakpoints: &[f64]) -> Vec<f64> {
    let mut probes = vec![0.0];
    let mut prev = 0.0;
    for &b in breakpoints {
        if b > prev {
            probes.push((prev + b) / 2.0);
        }
        probes.push(b);
        prev = b;
    }
    probes.push(prev * 2.0 + 1.0);
    probes.sort_by(f64::total_cmp);
    probes.dedup();
    probes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScenarioId;
    use crate::expr::Expr;
    use crate::projection::EditDistance;
    use crate::risk::Indicator;

    fn toy(table: &[(&str, f64, f64)]) -> (AgentSpec, RiskProfile) {
        let agent = AgentSpec {
            agent_id: "a".into(),
            role: String::new(),
            action_space: ActionSpace::Discrete(table.iter().map(|(l, _, _)| ActionValue::label_only(l)).collect()),
            utility_fn: Expr::label_table(&table.iter().map(|(l, u, _)| (*l, *u)).collect::<Vec<_>>(), 0.0),
            safe_default: ActionValue::label_only(table[0].0),
            edit_distance: EditDistance::default(),
        };
        let mut profile = RiskProfile::new(&[("operational", 1.0)]);
        profile.register(
            "a",
            "operational",
            Indicator::new(
                Expr::label_table(&table.iter().map(|(l, _, r)| (*l, *r)).collect::<Vec<_>>(), 0.0),
                1.0,
            ),
        );
        (agent, profile)
    }

    fn state() -> EnterpriseState {
        EnterpriseState::new(ScenarioId::Synthetic, 0)
    }

    #[test]
    fn shaped_utility_arithmetic() {
        assert_eq!(shaped_utility(7.5, 3.0, 0.0), 7.5);
        assert_eq!(shaped_utility(10.0, 3.0, 2.0), 4.0);
    }

    #[test]
    fn ratio_step_update() {
        let cfg = CoordinationConfig {
            delta: 0.5,
            ..Default::default()
        };
        let ls = LambdaState::new(&cfg);
        let next = update_lambda(&ls, 1.4, 1.0, &cfg);
        assert!((next.lambda - 0.7).abs() < 1e-15);
        assert_eq!(next.history.len(), 1);
        assert_eq!(next.iteration, 2);
        // below threshold still adds delta
        assert_eq!(update_lambda(&ls, 0.2, 1.0, &cfg).lambda, 0.5);
    }

    #[test]
    fn hinge_inactive_below_threshold() {
        let cfg = CoordinationConfig {
            dual_update_rule: DualUpdateRule::HingeAscent,
            alpha: 0.2,
            ..Default::default()
        };
        let ls = LambdaState {
            lambda: 1.0,
            ..LambdaState::new(&cfg)
        };
        assert_eq!(update_lambda(&ls, 0.8, 1.0, &cfg).lambda, 1.0);
    }

    #[test]
    fn diminishing_hinge_step() {
        let cfg = CoordinationConfig {
            dual_update_rule: DualUpdateRule::DiminishingHinge,
            eta0: 1.0,
            ..Default::default()
        };
        let ls = LambdaState {
            lambda: 0.0,
            iteration: 4,
            ..LambdaState::new(&cfg)
        };
        assert_eq!(update_lambda(&ls, 1.5, 1.0, &cfg).lambda, 0.25);
    }

    #[test]
    fn large_lambda_flips_to_zero_risk() {
        let (agent, profile) = toy(&[("safe", 0.2, 0.0), ("mid", 0.6, 0.3), ("bold", 1.0, 1.0)]);
        let s = state();
        let pick = |l: f64| best_response(&agent, &s, l, &profile).unwrap();
        // brute-force argmax at each multiplier
        for &l in &[0.0, 10.0, 100.0] {
            let table: [(&str, f64, f64); 3] = [("safe", 0.2, 0.0), ("mid", 0.6, 0.3), ("bold", 1.0, 1.0)];
            let best = table
                .iter()
                .max_by(|a, b| (a.1 - l * a.2).total_cmp(&(b.1 - l * b.2)))
                .unwrap();
            assert_eq!(pick(l).label(), Some(best.0));
        }
        assert_eq!(pick(0.0).label(), Some("bold"));
        assert_eq!(pick(10.0).label(), Some("safe"));
        assert!(shaped_utility(1.0, 1.0, 100.0) < 0.2);
    }

    #[test]
    fn five_action_toy_matches_enumeration() {
        let table = [
            ("a1", 0.5, 0.0),
            ("a2", 0.9, 0.2),
            ("a3", 1.3, 0.5),
            ("a4", 1.35, 0.6),
            ("a5", 2.0, 1.4),
        ];
        let (agent, profile) = toy(&table);
        // at λ = 1: 0.5, 0.7, 0.8, 0.75, 0.6 → a3
        let got = best_response(&agent, &state(), 1.0, &profile).unwrap();
        assert_eq!(got.label(), Some("a3"));
    }

    #[test]
    fn single_action_and_tie_break() {
        let (agent, profile) = toy(&[("only", 1.0, 0.5)]);
        assert_eq!(
            best_response(&agent, &state(), 3.0, &profile).unwrap().label(),
            Some("only")
        );
        let (agent, profile) = toy(&[("zeta", 1.0, 0.0), ("alpha", 1.0, 0.0)]);
        assert_eq!(
            best_response(&agent, &state(), 0.0, &profile).unwrap().label(),
            Some("alpha")
        );
    }

    #[test]
    fn continuous_grid_response() {
        // U = x0 (maximised at the upper bound), R = x0^2
        let agent = AgentSpec {
            agent_id: "c".into(),
            role: String::new(),
            action_space: ActionSpace::Continuous {
                lower: vec![0.0],
                upper: vec![1.0],
            },
            utility_fn: Expr::Coord { agent: None, index: 0 },
            safe_default: ActionValue::Continuous { values: vec![0.0] },
            edit_distance: EditDistance::default(),
        };
        let mut profile = RiskProfile::new(&[("operational", 1.0)]);
        let x = Expr::Coord { agent: None, index: 0 };
        profile.register("c", "operational", Indicator::new(Expr::Mul(vec![x.clone(), x]), 1.0));
        let s = state();
        let ActionValue::Continuous { values } = best_response(&agent, &s, 0.0, &profile).unwrap() else {
            panic!()
        };
        assert_eq!(values, vec![1.0]);
        // λ = 2: maximise x − 2x² → x = 0.25 (on the coarse grid)
        let ActionValue::Continuous { values } = best_response(&agent, &s, 2.0, &profile).unwrap() else {
            panic!()
        };
        assert!((values[0] - 0.25).abs() < 1e-3, "{values:?}");
    }

    #[test]
    fn breakpoints_cover_switches() {
        let (agent, profile) = toy(&[("safe", 0.2, 0.0), ("mid", 0.6, 0.3), ("bold", 1.0, 1.0)]);
        let bps = response_breakpoints(&agent, &profile_state(), &profile).unwrap();
        assert!(bps.contains(&(0.4 / 0.7)));
        let probes = lambda_probe_points(&bps);
        assert_eq!(probes[0], 0.0);
        assert!(probes.windows(2).all(|w| w[0] < w[1]));
        fn profile_state() -> EnterpriseState {
            EnterpriseState::new(ScenarioId::Synthetic, 0)
        }
    }
}
