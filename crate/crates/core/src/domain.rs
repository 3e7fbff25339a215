//! Core data model: states, actions, agents, joint actions and configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Scope, Value};
use crate::policy::PolicyBundle;
use crate::projection::EditDistance;
use crate::risk::RiskProfile;

/// Default bound on the joint action space size accepted by brute-force
/// enumeration.
pub const ORACLE_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    Synthetic,
}

impl ScenarioId {
    pub const EVALUATED: [ScenarioId; 3] = [ScenarioId::S1, ScenarioId::S2, ScenarioId::S3];
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::Synthetic => "Synthetic",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(ScenarioId::S1),
            "s2" => Ok(ScenarioId::S2),
            "s3" => Ok(ScenarioId::S3),
            "synthetic" => Ok(ScenarioId::Synthetic),
            _ => Err(Error::UnknownScenario(s.to_string())),
        }
    }
}

/// Shared world state observed by every agent at one episode step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnterpriseState {
    pub scenario_id: ScenarioId,
    pub variables: BTreeMap<String, Value>,
    pub step_index: u64,
    pub rng_seed: u64,
}

impl EnterpriseState {
    pub fn new(scenario_id: ScenarioId, rng_seed: u64) -> Self {
        EnterpriseState {
            scenario_id,
            variables: BTreeMap::new(),
            step_index: 0,
            rng_seed,
        }
    }

    pub fn with(mut self, name: &str, value: impl Into<Value>) -> Self {
        self.variables.insert(name.to_string(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.variables.get(name)
    }

    pub fn num(&self, name: &str) -> f64 {
        self.get(name).map(Value::as_f64).unwrap_or(0.0)
    }

    /// Successor state within the same episode.
    pub fn next_step(&self) -> Self {
        let mut next = self.clone();
        next.step_index += 1;
        next
    }
}

/// A single agent's action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ActionValue {
    Discrete {
        label: String,
        #[serde(default)]
        attributes: BTreeMap<String, Value>,
    },
    Continuous {
        values: Vec<f64>,
    },
}

impl ActionValue {
    pub fn discrete<K, I>(label: &str, attributes: I) -> Self
    where
        K: Into<String>,
        I: IntoIterator<Item = (K, Value)>,
    {
        ActionValue::Discrete {
            label: label.to_string(),
            attributes: attributes.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn label_only(label: &str) -> Self {
        ActionValue::Discrete {
            label: label.to_string(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn continuous(values: Vec<f64>) -> Result<Self> {
        if let Some(x) = values.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidAction(format!("non-finite coordinate {x}")));
        }
        Ok(ActionValue::Continuous { values })
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            ActionValue::Discrete { label, .. } => Some(label),
            ActionValue::Continuous { .. } => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionValue::Discrete { .. })
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ActionValue::Discrete { .. } => true,
            ActionValue::Continuous { values } => values.iter().all(|x| x.is_finite()),
        }
    }

    /// Canonical serialization: label, then attributes in key order. Used for
    /// deterministic tie-breaking.
    pub fn canonical_key(&self) -> String {
        match self {
            ActionValue::Discrete { label, attributes } => {
                let attrs: Vec<String> = attributes
                    .iter()
                    .map(|(k, v)| format!("{k}={}", v.canonical()))
                    .collect();
                format!("{label}({})", attrs.join(","))
            }
            ActionValue::Continuous { values } => {
                let xs: Vec<String> = values.iter().map(|x| format!("{x:?}")).collect();
                format!("[{}]", xs.join(","))
            }
        }
    }
}

impl fmt::Display for ActionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_key())
    }
}

/// Action space of an agent: an enumerated list or an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete(Vec<ActionValue>),
    Continuous { lower: Vec<f64>, upper: Vec<f64> },
}

impl ActionSpace {
    pub fn contains(&self, action: &ActionValue) -> bool {
        match (self, action) {
            (ActionSpace::Discrete(actions), a) => actions.contains(a),
            (ActionSpace::Continuous { lower, upper }, ActionValue::Continuous { values }) => {
                values.len() == lower.len()
                    && values
                        .iter()
                        .zip(lower.iter().zip(upper))
                        .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
            }
            _ => false,
        }
    }

    pub fn len(&self) -> Option<usize> {
        match self {
            ActionSpace::Discrete(a) => Some(a.len()),
            ActionSpace::Continuous { .. } => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, ActionSpace::Discrete(a) if a.is_empty())
    }
}

/// Static description of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: String,
    #[serde(default)]
    pub role: String,
    pub action_space: ActionSpace,
    /// Utility `U_i(s, a_i)`; evaluated with the agent as `self`.
    pub utility_fn: Expr,
    pub safe_default: ActionValue,
    #[serde(default)]
    pub edit_distance: EditDistance,
}

impl AgentSpec {
    pub fn utility(&self, state: &EnterpriseState, action: &ActionValue) -> f64 {
        self.utility_fn.eval_f64(&Scope::agent(state, &self.agent_id, action))
    }

    pub fn discrete_actions(&self) -> Option<&[ActionValue]> {
        match &self.action_space {
            ActionSpace::Discrete(a) => Some(a),
            ActionSpace::Continuous { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEntry {
    pub agent_id: String,
    pub action: ActionValue,
}

/// One action per agent, in roster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    pub entries: Vec<JointEntry>,
}

impl JointAction {
    pub fn new(entries: impl IntoIterator<Item = (String, ActionValue)>) -> Self {
        JointAction {
            entries: entries
                .into_iter()
                .map(|(agent_id, action)| JointEntry { agent_id, action })
                .collect(),
        }
    }

    pub fn from_roster(agents: &[AgentSpec], actions: Vec<ActionValue>) -> Self {
        JointAction::new(agents.iter().map(|a| a.agent_id.clone()).zip(actions))
    }

    pub fn safe_defaults(agents: &[AgentSpec]) -> Self {
        JointAction::from_roster(agents, agents.iter().map(|a| a.safe_default.clone()).collect())
    }

    pub fn get(&self, agent_id: &str) -> Option<&ActionValue> {
        self.entries.iter().find(|e| e.agent_id == agent_id).map(|e| &e.action)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = &ActionValue> {
        self.entries.iter().map(|e| &e.action)
    }

    /// Checks the roster invariant: one entry per agent, same order, unique ids.
    pub fn check_roster(&self, agents: &[AgentSpec]) -> Result<()> {
        if self.entries.len() != agents.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} entries for {} agents",
                self.entries.len(),
                agents.len()
            )));
        }
        for (entry, agent) in self.entries.iter().zip(agents) {
            if entry.agent_id != agent.agent_id {
                return Err(Error::SchemaMismatch(format!(
                    "entry `{}` where roster has `{}`",
                    entry.agent_id, agent.agent_id
                )));
            }
        }
        Ok(())
    }
}

/// Rule used to raise the shared risk multiplier after a rejected round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualUpdateRule {
    /// `λ + δ·max(1, R_tot/τ)`, applied after every rejected round.
    RatioStep,
    /// `λ + α·(R_tot − τ)⁺`.
    HingeAscent,
    /// `λ + (η₀/√t)·(R_tot − τ)⁺`.
    DiminishingHinge,
}

impl FromStr for DualUpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio_step" => Ok(DualUpdateRule::RatioStep),
            "hinge_ascent" => Ok(DualUpdateRule::HingeAscent),
            "diminishing_hinge" => Ok(DualUpdateRule::DiminishingHinge),
            other => Err(Error::ConfigInvalid(format!("unknown dual_update_rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinationConfig {
    pub tau: f64,
    pub lambda0: f64,
    pub delta: f64,
    pub k_max: u32,
    pub dual_update_rule: DualUpdateRule,
    pub eta0: f64,
    pub alpha: f64,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        CoordinationConfig {
            tau: 1.0,
            lambda0: 0.0,
            delta: 0.25,
            k_max: 10,
            dual_update_rule: DualUpdateRule::RatioStep,
            eta0: 2.0,
            alpha: 4.0,
        }
    }
}

impl CoordinationConfig {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau must be a positive finite number");
        }
        if !(self.lambda0.is_finite() && self.lambda0 >= 0.0) {
            return bad("lambda0 must be non-negative");
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if self.k_max < 1 {
            return bad("k_max must be at least 1");
        }
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return bad("eta0 must be positive");
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "finding")]
pub enum Finding {
    EmptyRoster,
    DuplicateAgentId {
        agent_id: String,
    },
    EmptyActionSpace {
        agent_id: String,
    },
    MissingStateVariable {
        variable: String,
        referenced_by: String,
    },
    UnresolvedReference {
        detail: String,
        referenced_by: String,
    },
    SafeDefaultOutsideActionSpace {
        agent_id: String,
    },
    UnsafeDefault {
        agent_id: String,
        risk: f64,
    },
    InvalidUtility {
        agent_id: String,
        action: String,
        utility: f64,
    },
    MissingFeasibilityRule {
        agent_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Checks roster well-formedness against a state, and optionally against a
/// risk profile (zero-risk defaults) and policy bundle (closure, rules).
pub fn validate_roster(
    agents: &[AgentSpec],
    state: &EnterpriseState,
    risk: Option<&RiskProfile>,
    bundle: Option<&PolicyBundle>,
) -> ValidationReport {
    let mut findings = Vec::new();
    if agents.is_empty() {
        findings.push(Finding::EmptyRoster);
        return ValidationReport { findings };
    }

    let mut seen = BTreeSet::new();
    for a in agents {
        if !seen.insert(a.agent_id.clone()) {
            findings.push(Finding::DuplicateAgentId {
                agent_id: a.agent_id.clone(),
            });
        }
    }
    let roster: BTreeSet<String> = agents.iter().map(|a| a.agent_id.clone()).collect();
    let state_vars: BTreeSet<String> = state.variables.keys().cloned().collect();

    let check_expr = |expr: &Expr, owner: String, allow_self: bool, findings: &mut Vec<Finding>| {
        for detail in expr.closure_findings(&roster, &state_vars, allow_self) {
            if let Some(var) = detail
                .strip_prefix("unknown state variable `")
                .and_then(|s| s.strip_suffix('`'))
            {
                findings.push(Finding::MissingStateVariable {
                    variable: var.to_string(),
                    referenced_by: owner.clone(),
                });
            } else {
                findings.push(Finding::UnresolvedReference {
                    detail,
                    referenced_by: owner.clone(),
                });
            }
        }
    };

    for a in agents {
        if a.action_space.is_empty() {
            findings.push(Finding::EmptyActionSpace {
                agent_id: a.agent_id.clone(),
            });
        }
        if !a.action_space.contains(&a.safe_default) {
            findings.push(Finding::SafeDefaultOutsideActionSpace {
                agent_id: a.agent_id.clone(),
            });
        }
        check_expr(&a.utility_fn, format!("utility:{}", a.agent_id), true, &mut findings);
        if let Some(actions) = a.discrete_actions() {
            for action in actions {
                let u = a.utility(state, action);
                if !(u.is_finite() && u >= 0.0) {
                    findings.push(Finding::InvalidUtility {
                        agent_id: a.agent_id.clone(),
                        action: action.canonical_key(),
                        utility: u,
                    });
                }
            }
        }
    }

    if let Some(profile) = risk {
        for (agent_id, dims) in &profile.indicators {
            for (dim, ind) in dims {
                check_expr(&ind.expr, format!("risk:{agent_id}:{dim}"), true, &mut findings);
            }
        }
        for a in agents {
            match profile.agent_risk(&a.agent_id, &a.safe_default, state) {
                Ok(0.0) => {}
                Ok(r) => findings.push(Finding::UnsafeDefault {
                    agent_id: a.agent_id.clone(),
                    risk: r,
                }),
                Err(_) => findings.push(Finding::UnresolvedReference {
                    detail: "no risk indicators registered".into(),
                    referenced_by: format!("risk:{}", a.agent_id),
                }),
            }
        }
    }

    if let Some(bundle) = bundle {
        for p in &bundle.predicates {
            for e in p.kind.expressions() {
                check_expr(e, format!("predicate:{}", p.predicate_id), false, &mut findings);
            }
            for id in p.kind.agents() {
                if !roster.contains(&id) {
                    findings.push(Finding::UnresolvedReference {
                        detail: format!("unknown agent `{id}`"),
                        referenced_by: format!("predicate:{}", p.predicate_id),
                    });
                }
            }
        }
        for rule in &bundle.feasibility {
            check_expr(&rule.avail, format!("avail:{}", rule.agent_id), false, &mut findings);
            for c in &rule.perm {
                check_expr(&c.when, format!("perm:{}", rule.agent_id), false, &mut findings);
            }
        }
        for a in agents {
            if !bundle.feasibility.iter().any(|r| r.agent_id == a.agent_id) {
                findings.push(Finding::MissingFeasibilityRule {
                    agent_id: a.agent_id.clone(),
                });
            }
        }
    }

    ValidationReport { findings }
}

/// Lexicographic iterator over `A_1 × … × A_n` (last agent varies fastest).
#[derive(Debug, Clone)]
pub struct JointActionIter<'a> {
    agents: &'a [AgentSpec],
    spaces: Vec<&'a [ActionValue]>,
    cursor: Option<Vec<usize>>,
}

impl Iterator for JointActionIter<'_> {
    type Item = JointAction;

    fn next(&mut self) -> Option<JointAction> {
        let cursor = self.cursor.as_mut()?;
        let joint = JointAction::from_roster(
            self.agents,
            cursor
                .iter()
                .zip(&self.spaces)
                .map(|(&i, space)| space[i].clone())
                .collect(),
        );
        // advance odometer
        let mut pos = cursor.len();
        loop {
            if pos == 0 {
                self.cursor = None;
                break;
            }
            pos -= 1;
            cursor[pos] += 1;
            if cursor[pos] < self.spaces[pos].len() {
                break;
            }
            cursor[pos] = 0;
        }
        Some(joint)
    }
}

pub fn joint_space_size(agents: &[AgentSpec]) -> Option<u128> {
    agents.iter().try_fold(1u128, |acc, a| {
        a.action_space.len().map(|n| acc.saturating_mul(n as u128))
    })
}

pub fn enumerate_joint_actions(agents: &[AgentSpec], cap: u128) -> Result<JointActionIter<'_>> {
    let mut spaces = Vec::with_capacity(agents.len());
    for a in agents {
        match a.discrete_actions() {
            Some(actions) => spaces.push(actions),
            None => {
                return Err(Error::InvalidAction(format!(
                    "agent `{}` has a continuous action space",
                    a.agent_id
                )))
            }
        }
    }
    let size = joint_space_size(agents).unwrap_or(u128::MAX);
    if size > cap {
        return Err(Error::OracleCapExceeded { size, cap });
    }
    let cursor = if size == 0 || agents.is_empty() {
        None
    } else {
        Some(vec![0; agents.len()])
    };
    Ok(JointActionIter { agents, spaces, cursor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::{Indicator, RiskProfile};

    fn agent(id: &str, labels: &[&str]) -> AgentSpec {
        AgentSpec {
            agent_id: id.to_string(),
            role: id.to_string(),
            action_space: ActionSpace::Discrete(labels.iter().map(|l| ActionValue::label_only(l)).collect()),
            utility_fn: Expr::label_table(&[], 1.0),
            safe_default: ActionValue::label_only(labels[0]),
            edit_distance: EditDistance::default(),
        }
    }

    #[test]
    fn well_formed_roster_is_valid() {
        let agents = vec![agent("a", &["noop", "go"]), agent("b", &["noop"])];
        let state = EnterpriseState::new(ScenarioId::Synthetic, 1);
        let report = validate_roster(&agents, &state, None, None);
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn duplicate_ids_are_reported() {
        let agents = vec![agent("cfo", &["noop"]), agent("cfo", &["noop"])];
        let state = EnterpriseState::new(ScenarioId::S1, 1);
        let report = validate_roster(&agents, &state, None, None);
        assert_eq!(
            report.findings,
            vec![Finding::DuplicateAgentId { agent_id: "cfo".into() }]
        );
    }

    #[test]
    fn unsafe_default_is_reported() {
        let agents = vec![agent("a", &["noop", "go"])];
        let state = EnterpriseState::new(ScenarioId::Synthetic, 1);
        let mut profile = RiskProfile::new(&[("financial", 1.0)]);
        profile.register(
            "a",
            "financial",
            Indicator::new(Expr::label_table(&[("noop", 0.3)], 0.0), 1.0),
        );
        let report = validate_roster(&agents, &state, Some(&profile), None);
        assert!(matches!(
            report.findings.as_slice(),
            [Finding::UnsafeDefault { agent_id, risk }] if agent_id == "a" && *risk == 0.3
        ));
    }

    #[test]
    fn missing_state_variable_is_reported() {
        let mut a = agent("a", &["noop"]);
        a.utility_fn = Expr::state("amount");
        let state = EnterpriseState::new(ScenarioId::Synthetic, 1);
        let report = validate_roster(&[a], &state, None, None);
        assert!(matches!(
            report.findings.as_slice(),
            [Finding::MissingStateVariable { variable, .. }] if variable == "amount"
        ));
    }

    #[test]
    fn enumeration_counts() {
        let two = vec![agent("a", &["x", "y"]), agent("b", &["p", "q", "r"])];
        assert_eq!(enumerate_joint_actions(&two, ORACLE_CAP).unwrap().count(), 6);
        let one = vec![agent("a", &["x"])];
        assert_eq!(enumerate_joint_actions(&one, ORACLE_CAP).unwrap().count(), 1);

        let three: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|id| agent(id, &["w", "x", "y", "z"]))
            .collect();
        let all: Vec<String> = enumerate_joint_actions(&three, ORACLE_CAP)
            .unwrap()
            .map(|j| j.actions().map(|a| a.canonical_key()).collect::<Vec<_>>().join("|"))
            .collect();
        let unique: BTreeSet<_> = all.iter().cloned().collect();
        assert_eq!(all.len(), 64);
        assert_eq!(unique.len(), 64);
        // lexicographic: first and last
        assert_eq!(all[0], "w()|w()|w()");
        assert_eq!(all[1], "w()|w()|x()");
        assert_eq!(all[63], "z()|z()|z()");
    }

    #[test]
    fn enumeration_respects_cap() {
        let agents: Vec<_> = ["a", "b", "c"].iter().map(|id| agent(id, &["w", "x", "y"])).collect();
        assert!(matches!(
            enumerate_joint_actions(&agents, 26),
            Err(Error::OracleCapExceeded { size: 27, cap: 26 })
        ));
    }

    #[test]
    fn continuous_actions_must_be_finite() {
        assert!(ActionValue::continuous(vec![1.0, f64::NAN]).is_err());
        assert!(ActionValue::continuous(vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(CoordinationConfig::default().validate().is_ok());
        let bad = CoordinationConfig {
            delta: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::ConfigInvalid(_))));
        let bad = CoordinationConfig {
            k_max: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
