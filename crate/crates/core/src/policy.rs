//! Joint policy feasibility `Φ` and per-agent execution feasibility `F_i(s)`.
//!
//! Predicates are closed over the roster and state schema and evaluate
//! totally. A predicate that references exactly one agent is a *unary slice*
//! for that agent: projection can enforce it per agent, whereas truly joint
//! predicates are only checked on the full tuple.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{ActionSpace, ActionValue, AgentSpec, EnterpriseState, JointAction};
use crate::error::{Error, Result};
use crate::expr::{Expr, Scope};

/// "Agent performs one of these labels".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DutyRef {
    pub agent: String,
    pub labels: Vec<String>,
}

impl DutyRef {
    pub fn new(agent: &str, labels: &[&str]) -> Self {
        DutyRef {
            agent: agent.to_string(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn performed_by<'a>(&self, scope: &Scope<'a>) -> Option<&'a ActionValue> {
        let action = scope.action_of(&self.agent)?;
        let label = action.label()?;
        self.labels.iter().any(|l| l == label).then_some(action)
    }

    fn performed(&self, scope: &Scope<'_>) -> bool {
        self.performed_by(scope).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum PredicateKind {
    /// When `when` holds every step must be performed. Independently of
    /// `when`, a step may only be performed if all earlier steps are.
    ApprovalChain {
        when: Expr,
        steps: Vec<DutyRef>,
    },
    /// No two performed duties may share the same `principal_attr` value.
    SegregationOfDuties {
        duties: Vec<DutyRef>,
        principal_attr: String,
    },
    /// `after` may only be performed if `before` is performed.
    TemporalOrder {
        before: DutyRef,
        after: DutyRef,
    },
    /// If `subject` is performed and `value > threshold`, `escalation` must be performed.
    ThresholdGate {
        subject: DutyRef,
        value: Expr,
        threshold: f64,
        escalation: DutyRef,
    },
    Custom {
        expr: Expr,
    },
}

impl PredicateKind {
    pub fn holds(&self, scope: &Scope<'_>) -> bool {
        match self {
            PredicateKind::ApprovalChain { when, steps } => {
                let performed: Vec<bool> = steps.iter().map(|s| s.performed(scope)).collect();
                let ordered = performed.windows(2).all(|w| w[0] || !w[1]);
                ordered && (!when.eval_bool(scope) || performed.iter().all(|p| *p))
            }
            PredicateKind::SegregationOfDuties { duties, principal_attr } => {
                let principals: Vec<_> = duties
                    .iter()
                    .filter_map(|d| d.performed_by(scope))
                    .filter_map(|a| match a {
                        ActionValue::Discrete { attributes, .. } => attributes.get(principal_attr),
                        ActionValue::Continuous { .. } => None,
                    })
                    .filter(|v| !matches!(v, crate::expr::Value::Null))
                    .collect();
                principals
                    .iter()
                    .enumerate()
                    .all(|(i, p)| principals[i + 1..].iter().all(|q| p != q))
            }
            PredicateKind::TemporalOrder { before, after } => !after.performed(scope) || before.performed(scope),
            PredicateKind::ThresholdGate {
                subject,
                value,
                threshold,
                escalation,
            } => !(subject.performed(scope) && value.eval_f64(scope) > *threshold) || escalation.performed(scope),
            PredicateKind::Custom { expr } => expr.eval_bool(scope),
        }
    }

    /// Every agent the predicate can observe.
    pub fn agents(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        match self {
            PredicateKind::ApprovalChain { when, steps } => {
                when.named_agents(&mut out);
                out.extend(steps.iter().map(|s| s.agent.clone()));
            }
            PredicateKind::SegregationOfDuties { duties, .. } => {
                out.extend(duties.iter().map(|s| s.agent.clone()));
            }
            PredicateKind::TemporalOrder { before, after } => {
                out.insert(before.agent.clone());
                out.insert(after.agent.clone());
            }
            PredicateKind::ThresholdGate {
                subject,
                value,
                escalation,
                ..
            } => {
                value.named_agents(&mut out);
                out.insert(subject.agent.clone());
                out.insert(escalation.agent.clone());
            }
            PredicateKind::Custom { expr } => expr.named_agents(&mut out),
        }
        out
    }

    pub fn expressions(&self) -> Vec<&Expr> {
        match self {
            PredicateKind::ApprovalChain { when, .. } => vec![when],
            PredicateKind::ThresholdGate { value, .. } => vec![value],
            PredicateKind::Custom { expr } => vec![expr],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPredicate {
    pub predicate_id: String,
    #[serde(flatten)]
    pub kind: PredicateKind,
}

impl PolicyPredicate {
    pub fn new(id: &str, kind: PredicateKind) -> Self {
        PolicyPredicate {
            predicate_id: id.to_string(),
            kind,
        }
    }

    /// The single agent this predicate constrains, if it is unary.
    pub fn unary_agent(&self) -> Option<String> {
        let agents = self.kind.agents();
        if agents.len() == 1 {
            agents.into_iter().next()
        } else {
            None
        }
    }
}

/// Permission grant: labels allowed while `when` holds. `"*"` grants every label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermGrant {
    #[serde(default = "always")]
    pub when: Expr,
    pub labels: Vec<String>,
}

fn always() -> Expr {
    Expr::Lit(crate::expr::Value::Bool(true))
}

impl PermGrant {
    pub fn all() -> Self {
        PermGrant {
            when: always(),
            labels: vec!["*".into()],
        }
    }

    pub fn labels(labels: &[&str]) -> Self {
        PermGrant {
            when: always(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn when(mut self, cond: Expr) -> Self {
        self.when = cond;
        self
    }

    fn grants(&self, action: &ActionValue, scope: &Scope<'_>) -> bool {
        let label_ok = match action.label() {
            Some(label) => self.labels.iter().any(|l| l == "*" || l == label),
            None => self.labels.iter().any(|l| l == "*"),
        };
        label_ok && self.when.eval_bool(scope)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Open for `open <= step_index < close`.
    Steps { open: u64, close: u64 },
    /// Open while the named state flag is truthy.
    Flag(String),
}

impl Window {
    fn is_open(&self, state: &EnterpriseState) -> bool {
        match self {
            Window::Steps { open, close } => *open <= state.step_index && state.step_index < *close,
            Window::Flag(name) => state.get(name).map(|v| v.truthy()).unwrap_or(false),
        }
    }
}

/// Halfspace `normal · x <= offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Halfspace { normal, offset }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.value(x) <= self.offset + tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityRule {
    pub agent_id: String,
    #[serde(default)]
    pub perm: Vec<PermGrant>,
    #[serde(default = "always")]
    pub avail: Expr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub halfspaces: Vec<Halfspace>,
}

impl FeasibilityRule {
    pub fn permissive(agent_id: &str) -> Self {
        FeasibilityRule {
            agent_id: agent_id.to_string(),
            perm: vec![PermGrant::all()],
            avail: always(),
            window: None,
            halfspaces: Vec::new(),
        }
    }

    pub fn with_perm(mut self, perm: Vec<PermGrant>) -> Self {
        self.perm = perm;
        self
    }

    pub fn with_avail(mut self, avail: Expr) -> Self {
        self.avail = avail;
        self
    }

    pub fn with_window(mut self, window: Window) -> Self {
        self.window = Some(window);
        self
    }

    pub fn with_halfspaces(mut self, halfspaces: Vec<Halfspace>) -> Self {
        self.halfspaces = halfspaces;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBundle {
    pub predicates: Vec<PolicyPredicate>,
    pub feasibility: Vec<FeasibilityRule>,
    pub bundle_version: String,
}

impl PolicyBundle {
    pub fn empty() -> Self {
        PolicyBundle {
            predicates: Vec::new(),
            feasibility: Vec::new(),
            bundle_version: "0".into(),
        }
    }

    /// Bundle granting everything to every listed agent, with no predicates.
    pub fn permissive(agents: &[AgentSpec]) -> Self {
        PolicyBundle {
            predicates: Vec::new(),
            feasibility: agents
                .iter()
                .map(|a| FeasibilityRule::permissive(&a.agent_id))
                .collect(),
            bundle_version: "permissive".into(),
        }
    }

    pub fn rules_for<'a>(&'a self, agent_id: &'a str) -> impl Iterator<Item = &'a FeasibilityRule> + 'a {
        self.feasibility.iter().filter(move |r| r.agent_id == agent_id)
    }

    pub fn unary_predicates<'a>(&'a self, agent_id: &'a str) -> impl Iterator<Item = &'a PolicyPredicate> + 'a {
        self.predicates
            .iter()
            .filter(move |p| p.unary_agent().as_deref() == Some(agent_id))
    }

    pub fn halfspaces_for(&self, agent_id: &str) -> Vec<Halfspace> {
        self.rules_for(agent_id)
            .flat_map(|r| r.halfspaces.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateVerdict {
    pub predicate_id: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiVerdict {
    pub phi: bool,
    pub verdicts: Vec<PredicateVerdict>,
}

impl PhiVerdict {
    pub fn failing(&self) -> Vec<String> {
        self.verdicts
            .iter()
            .filter(|v| !v.holds)
            .map(|v| v.predicate_id.clone())
            .collect()
    }
}

/// `Φ(a) = ∏_k φ_k(a)` with one verdict per predicate.
pub fn eval_phi(bundle: &PolicyBundle, state: &EnterpriseState, joint: &JointAction) -> Result<PhiVerdict> {
    let mut ids = BTreeSet::new();
    for e in &joint.entries {
        if !ids.insert(e.agent_id.as_str()) {
            return Err(Error::SchemaMismatch(format!("duplicate agent `{}`", e.agent_id)));
        }
    }
    for p in &bundle.predicates {
        if let Some(missing) = p.kind.agents().into_iter().find(|a| !ids.contains(a.as_str())) {
            return Err(Error::SchemaMismatch(format!(
                "predicate `{}` references agent `{missing}` absent from the joint action",
                p.predicate_id
            )));
        }
    }
    let scope = Scope::joint(state, joint);
    let verdicts: Vec<PredicateVerdict> = bundle
        .predicates
        .iter()
        .map(|p| PredicateVerdict {
            predicate_id: p.predicate_id.clone(),
            holds: p.kind.holds(&scope),
        })
        .collect();
    Ok(PhiVerdict {
        phi: verdicts.iter().all(|v| v.holds),
        verdicts,
    })
}

/// `perm ∧ avail ∧ window` for one action. The safe default is always feasible.
pub fn is_execution_feasible(
    bundle: &PolicyBundle,
    state: &EnterpriseState,
    agent: &AgentSpec,
    action: &ActionValue,
) -> bool {
    if *action == agent.safe_default {
        return true;
    }
    if !agent.action_space.contains(action) {
        return false;
    }
    let scope = Scope::agent(state, &agent.agent_id, action);
    let mut any_rule = false;
    let mut permitted = false;
    for rule in bundle.rules_for(&agent.agent_id) {
        any_rule = true;
        if !rule.avail.eval_bool(&scope) {
            return false;
        }
        if let Some(w) = &rule.window {
            if !w.is_open(state) {
                return false;
            }
        }
        if let ActionValue::Continuous { values } = action {
            if !rule.halfspaces.iter().all(|h| h.contains(values, 1e-9)) {
                return false;
            }
        }
        permitted |= rule.perm.iter().any(|g| g.grants(action, &scope));
    }
    any_rule && permitted
}

/// Whether the action satisfies every unary predicate slice of the agent.
pub fn satisfies_unary(bundle: &PolicyBundle, state: &EnterpriseState, agent_id: &str, action: &ActionValue) -> bool {
    let scope = Scope::agent(state, agent_id, action);
    bundle.unary_predicates(agent_id).all(|p| p.kind.holds(&scope))
}

/// The result of `feasible_set`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibleSet {
    Discrete(Vec<ActionValue>),
    Region {
        lower: Vec<f64>,
        upper: Vec<f64>,
        halfspaces: Vec<Halfspace>,
    },
    /// Degenerate set containing only the safe default.
    Point(ActionValue),
}

impl FeasibleSet {
    pub fn contains(&self, action: &ActionValue) -> bool {
        match (self, action) {
            (FeasibleSet::Discrete(v), a) => v.contains(a),
            (FeasibleSet::Point(p), a) => p == a,
            (
                FeasibleSet::Region {
                    lower,
                    upper,
                    halfspaces,
                },
                ActionValue::Continuous { values },
            ) => {
                values.len() == lower.len()
                    && values
                        .iter()
                        .zip(lower.iter().zip(upper))
                        .all(|(x, (lo, hi))| lo <= x && x <= hi)
                    && halfspaces.iter().all(|h| h.contains(values, 1e-9))
            }
            _ => false,
        }
    }
}

/// `F_i(s)` for one agent.
pub fn feasible_set(bundle: &PolicyBundle, state: &EnterpriseState, agent: &AgentSpec) -> FeasibleSet {
    match &agent.action_space {
        ActionSpace::Discrete(actions) => FeasibleSet::Discrete(
            actions
                .iter()
                .filter(|a| is_execution_feasible(bundle, state, agent, a))
                .cloned()
                .collect(),
        ),
        ActionSpace::Continuous { lower, upper } => {
            let scope = Scope::state_only(state);
            let open = bundle
                .rules_for(&agent.agent_id)
                .all(|r| r.avail.eval_bool(&scope) && r.window.as_ref().map(|w| w.is_open(state)).unwrap_or(true))
                && bundle.rules_for(&agent.agent_id).next().is_some();
            if open {
                FeasibleSet::Region {
                    lower: lower.clone(),
                    upper: upper.clone(),
                    halfspaces: bundle.halfspaces_for(&agent.agent_id),
                }
            } else {
                FeasibleSet::Point(agent.safe_default.clone())
            }
        }
    }
}

/// Discrete `C_i(s)`: execution-feasible actions satisfying every unary slice.
pub fn compliant_actions(bundle: &PolicyBundle, state: &EnterpriseState, agent: &AgentSpec) -> Vec<ActionValue> {
    match feasible_set(bundle, state, agent) {
        FeasibleSet::Discrete(actions) => actions
            .into_iter()
            .filter(|a| satisfies_unary(bundle, state, &agent.agent_id, a))
            .collect(),
        FeasibleSet::Point(p) => vec![p],
        FeasibleSet::Region { .. } => Vec::new(),
    }
}

/// True iff every `a_i ∈ F_i(s)` and `Φ(a) = 1`.
pub fn joint_feasible_region(
    bundle: &PolicyBundle,
    state: &EnterpriseState,
    agents: &[AgentSpec],
    joint: &JointAction,
) -> bool {
    if joint.check_roster(agents).is_err() {
        return false;
    }
    let per_agent = agents
        .iter()
        .zip(joint.actions())
        .all(|(agent, a)| is_execution_feasible(bundle, state, agent, a));
    per_agent && eval_phi(bundle, state, joint).map(|v| v.phi).unwrap_or(false)
}
