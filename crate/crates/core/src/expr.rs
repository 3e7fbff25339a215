//! Closed expression language shared by utility functions, risk indicators,
//! availability gates and custom policy predicates.
//!
//! Evaluation is total: every expression yields a [`Value`] for any input.
//! Missing state variables, absent agents and unknown attributes evaluate to
//! [`Value::Null`]. Comparisons involving `Null` are false, arithmetic treats
//! `Null` and strings as `0.0`, and truthiness of a number is `x != 0`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{ActionValue, EnterpriseState, JointAction};

/// Scalar value carried by state variables, action attributes and
/// expression results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Num(f64),
    Str(String),
    Null,
}

impl Value {
    pub fn as_f64(&self) -> f64 {
        match self {
            Value::Num(x) => *x,
            Value::Bool(true) => 1.0,
            _ => 0.0,
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::Bool(b) => *b,
            Value::Num(x) => *x != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::Null => false,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Value::Num(_) | Value::Bool(_))
    }

    /// Canonical text used for ordering and tie-breaks.
    pub fn canonical(&self) -> String {
        match self {
            Value::Bool(b) => b.to_string(),
            Value::Num(x) => format!("{x:?}"),
            Value::Str(s) => format!("{s:?}"),
            Value::Null => "null".to_string(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Num(x) => write!(f, "{x}"),
            Value::Str(s) => write!(f, "{s}"),
            Value::Null => write!(f, "null"),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

/// Expression tree. Agent references of `None` denote the agent the
/// expression is attached to (utility functions and risk indicators).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Lit(Value),
    /// Named state variable.
    State(String),
    /// Action label of an agent (`Null` for continuous or absent actions).
    Label {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
    },
    /// Attribute of a discrete action.
    Attr {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
        name: String,
    },
    /// Coordinate of a continuous action.
    Coord {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
        index: usize,
    },
    /// True iff the agent's action label is one of `labels`.
    Acts {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<String>,
        labels: Vec<String>,
    },
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Min(Vec<Expr>),
    Max(Vec<Expr>),
    Clamp {
        value: Box<Expr>,
        lo: f64,
        hi: f64,
    },
    /// Lookup of a categorical key in a numeric table.
    Table {
        key: Box<Expr>,
        entries: BTreeMap<String, f64>,
        #[serde(default)]
        default: f64,
    },
    If {
        cond: Box<Expr>,
        then: Box<Expr>,
        otherwise: Box<Expr>,
    },
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Not(Box<Expr>),
    Cmp {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    In {
        value: Box<Expr>,
        set: Vec<Value>,
    },
}

/// Bindings visible to an expression: the state, an optional full joint
/// action and an optional "self" agent with its action.
#[derive(Clone, Copy)]
pub struct Scope<'a> {
    pub state: &'a EnterpriseState,
    pub joint: Option<&'a JointAction>,
    pub this: Option<(&'a str, &'a ActionValue)>,
}

impl<'a> Scope<'a> {
    pub fn state_only(state: &'a EnterpriseState) -> Self {
        Scope {
            state,
            joint: None,
            this: None,
        }
    }

    pub fn agent(state: &'a EnterpriseState, agent_id: &'a str, action: &'a ActionValue) -> Self {
        Scope {
            state,
            joint: None,
            this: Some((agent_id, action)),
        }
    }

    pub fn joint(state: &'a EnterpriseState, joint: &'a JointAction) -> Self {
        Scope {
            state,
            joint: Some(joint),
            this: None,
        }
    }

    pub fn action_of(&self, id: &str) -> Option<&'a ActionValue> {
        if let Some((this_id, a)) = self.this {
            if this_id == id {
                return Some(a);
            }
        }
        self.joint.and_then(|j| j.get(id))
    }

    fn action(&self, agent: &Option<String>) -> Option<&'a ActionValue> {
        match agent {
            None => self.this.map(|(_, a)| a),
            Some(id) => self.action_of(id),
        }
    }
}

fn fold_num(items: &[Expr], scope: &Scope<'_>, init: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    items.iter().fold(init, |acc, e| f(acc, e.eval(scope).as_f64()))
}

fn compare(op: CmpOp, lhs: &Value, rhs: &Value) -> bool {
    if matches!(lhs, Value::Null) || matches!(rhs, Value::Null) {
        return false;
    }
    if lhs.is_numeric() && rhs.is_numeric() {
        let (a, b) = (lhs.as_f64(), rhs.as_f64());
        return match op {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        };
    }
    match (lhs, rhs) {
        (Value::Str(a), Value::Str(b)) => match op {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        },
        // mixed string/number
        _ => op == CmpOp::Ne,
    }
}

fn same(a: &Value, b: &Value) -> bool {
    compare(CmpOp::Eq, a, b)
}

impl Expr {
    pub fn num(x: f64) -> Expr {
        Expr::Lit(Value::Num(x))
    }

    pub fn state(name: &str) -> Expr {
        Expr::State(name.to_string())
    }

    pub fn attr(name: &str) -> Expr {
        Expr::Attr {
            agent: None,
            name: name.to_string(),
        }
    }

    pub fn attr_of(agent: &str, name: &str) -> Expr {
        Expr::Attr {
            agent: Some(agent.to_string()),
            name: name.to_string(),
        }
    }

    pub fn acts(agent: &str, labels: &[&str]) -> Expr {
        Expr::Acts {
            agent: Some(agent.to_string()),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn self_acts(labels: &[&str]) -> Expr {
        Expr::Acts {
            agent: None,
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn cmp(op: CmpOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Cmp {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn negate(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    pub fn implies(a: Expr, b: Expr) -> Expr {
        Expr::Or(vec![Expr::negate(a), b])
    }

    pub fn if_else(cond: Expr, then: Expr, otherwise: Expr) -> Expr {
        Expr::If {
            cond: Box::new(cond),
            then: Box::new(then),
            otherwise: Box::new(otherwise),
        }
    }

    /// Lookup table keyed by the self agent's action label.
    pub fn label_table(entries: &[(&str, f64)], default: f64) -> Expr {
        Expr::Table {
            key: Box::new(Expr::Label { agent: None }),
            entries: entries.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            default,
        }
    }

    pub fn eval(&self, scope: &Scope<'_>) -> Value {
        match self {
            Expr::Lit(v) => v.clone(),
            Expr::State(name) => scope.state.get(name).cloned().unwrap_or(Value::Null),
            Expr::Label { agent } => match scope.action(agent) {
                Some(ActionValue::Discrete { label, .. }) => Value::Str(label.clone()),
                _ => Value::Null,
            },
            Expr::Attr { agent, name } => match scope.action(agent) {
                Some(ActionValue::Discrete { attributes, .. }) => attributes.get(name).cloned().unwrap_or(Value::Null),
                _ => Value::Null,
            },
            Expr::Coord { agent, index } => match scope.action(agent) {
                Some(ActionValue::Continuous { values }) => {
                    values.get(*index).map(|x| Value::Num(*x)).unwrap_or(Value::Null)
                }
                _ => Value::Null,
            },
            Expr::Acts { agent, labels } => {
                let hit = match scope.action(agent) {
                    Some(ActionValue::Discrete { label, .. }) => labels.iter().any(|l| l == label),
                    _ => false,
                };
                Value::Bool(hit)
            }
            Expr::Add(items) => Value::Num(fold_num(items, scope, 0.0, |a, b| a + b)),
            Expr::Mul(items) => Value::Num(fold_num(items, scope, 1.0, |a, b| a * b)),
            Expr::Sub(a, b) => Value::Num(a.eval(scope).as_f64() - b.eval(scope).as_f64()),
            Expr::Min(items) => {
                if items.is_empty() {
                    return Value::Null;
                }
                Value::Num(fold_num(items, scope, f64::INFINITY, f64::min))
            }
            Expr::Max(items) => {
                if items.is_empty() {
                    return Value::Null;
                }
                Value::Num(fold_num(items, scope, f64::NEG_INFINITY, f64::max))
            }
            Expr::Clamp { value, lo, hi } => Value::Num(value.eval(scope).as_f64().clamp(*lo, *hi)),
            Expr::Table { key, entries, default } => {
                let k = match key.eval(scope) {
                    Value::Str(s) => s,
                    Value::Null => return Value::Num(*default),
                    other => other.to_string(),
                };
                Value::Num(entries.get(&k).copied().unwrap_or(*default))
            }
            Expr::If { cond, then, otherwise } => {
                if cond.eval(scope).truthy() {
                    then.eval(scope)
                } else {
                    otherwise.eval(scope)
                }
            }
            Expr::And(items) => Value::Bool(items.iter().all(|e| e.eval(scope).truthy())),
            Expr::Or(items) => Value::Bool(items.iter().any(|e| e.eval(scope).truthy())),
            Expr::Not(e) => Value::Bool(!e.eval(scope).truthy()),
            Expr::Cmp { op, lhs, rhs } => Value::Bool(compare(*op, &lhs.eval(scope), &rhs.eval(scope))),
            Expr::In { value, set } => {
                let v = value.eval(scope);
                Value::Bool(set.iter().any(|s| same(&v, s)))
            }
        }
    }

    pub fn eval_bool(&self, scope: &Scope<'_>) -> bool {
        self.eval(scope).truthy()
    }

    pub fn eval_f64(&self, scope: &Scope<'_>) -> f64 {
        self.eval(scope).as_f64()
    }

    fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Lit(_)
            | Expr::State(_)
            | Expr::Label { .. }
            | Expr::Attr { .. }
            | Expr::Coord { .. }
            | Expr::Acts { .. } => Vec::new(),
            Expr::Add(v) | Expr::Mul(v) | Expr::Min(v) | Expr::Max(v) | Expr::And(v) | Expr::Or(v) => {
                v.iter().collect()
            }
            Expr::Sub(a, b) => vec![a, b],
            Expr::Clamp { value, .. } => vec![value],
            Expr::Table { key, .. } => vec![key],
            Expr::If { cond, then, otherwise } => vec![cond, then, otherwise],
            Expr::Not(e) => vec![e],
            Expr::Cmp { lhs, rhs, .. } => vec![lhs, rhs],
            Expr::In { value, .. } => vec![value],
        }
    }

    fn agent_ref(&self) -> Option<&Option<String>> {
        match self {
            Expr::Label { agent } | Expr::Attr { agent, .. } | Expr::Coord { agent, .. } | Expr::Acts { agent, .. } => {
                Some(agent)
            }
            _ => None,
        }
    }

    fn walk<'e>(&'e self, f: &mut impl FnMut(&'e Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Explicitly named agents referenced anywhere in the tree.
    pub fn named_agents(&self, out: &mut BTreeSet<String>) {
        self.walk(&mut |e| {
            if let Some(Some(id)) = e.agent_ref() {
                out.insert(id.clone());
            }
        });
    }

    pub fn references_self(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if let Some(None) = e.agent_ref() {
                found = true;
            }
        });
        found
    }

    pub fn state_vars(&self, out: &mut BTreeSet<String>) {
        self.walk(&mut |e| {
            if let Expr::State(name) = e {
                out.insert(name.clone());
            }
        });
    }

    /// Closure check against a roster and state schema. Returns one message
    /// per unresolved reference.
    pub fn closure_findings(
        &self,
        agents: &BTreeSet<String>,
        state_vars: &BTreeSet<String>,
        allow_self: bool,
    ) -> Vec<String> {
        let mut findings = Vec::new();
        self.walk(&mut |e| {
            if let Expr::State(name) = e {
                if !state_vars.contains(name) {
                    findings.push(format!("unknown state variable `{name}`"));
                }
            }
            match e.agent_ref() {
                Some(Some(id)) if !agents.contains(id) => {
                    findings.push(format!("unknown agent `{id}`"));
                }
                Some(None) if !allow_self => {
                    findings.push("implicit self reference outside an agent-scoped expression".into());
                }
                _ => {}
            }
        });
        findings
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ScenarioId;

    fn state() -> EnterpriseState {
        EnterpriseState::new(ScenarioId::Synthetic, 0)
            .with("amount", 40_000.0)
            .with("region", "eu")
            .with("window_open", false)
    }

    #[test]
    fn missing_values_are_total() {
        let s = state();
        let scope = Scope::state_only(&s);
        assert_eq!(Expr::state("nope").eval(&scope), Value::Null);
        assert!(!Expr::cmp(CmpOp::Gt, Expr::state("nope"), Expr::num(1.0)).eval_bool(&scope));
        assert_eq!(
            Expr::Add(vec![Expr::state("nope"), Expr::num(2.0)]).eval_f64(&scope),
            2.0
        );
        assert_eq!(Expr::attr("x").eval(&scope), Value::Null);
    }

    #[test]
    fn comparisons_and_membership() {
        let s = state();
        let scope = Scope::state_only(&s);
        let gt = Expr::cmp(CmpOp::Gt, Expr::state("amount"), Expr::num(25_000.0));
        assert!(gt.eval_bool(&scope));
        let member = Expr::In {
            value: Box::new(Expr::state("region")),
            set: vec!["us".into(), "eu".into()],
        };
        assert!(member.eval_bool(&scope));
        assert!(!Expr::state("window_open").eval_bool(&scope));
        assert!(Expr::implies(Expr::state("window_open"), Expr::Lit(Value::Bool(false))).eval_bool(&scope));
    }

    #[test]
    fn self_scope_reads_action() {
        let s = state();
        let a = ActionValue::discrete("approve", [("amount", Value::Num(10.0))]);
        let scope = Scope::agent(&s, "mgr", &a);
        assert!(Expr::self_acts(&["approve"]).eval_bool(&scope));
        assert!(Expr::acts("mgr", &["approve"]).eval_bool(&scope));
        assert_eq!(Expr::attr("amount").eval_f64(&scope), 10.0);
        let table = Expr::label_table(&[("approve", 0.7)], 0.1);
        assert_eq!(table.eval_f64(&scope), 0.7);
    }

    #[test]
    fn closure_reports_unknown_refs() {
        let e = Expr::And(vec![Expr::acts("ghost", &["x"]), Expr::state("missing")]);
        let agents: BTreeSet<String> = ["a".to_string()].into();
        let vars = BTreeSet::new();
        let f = e.closure_findings(&agents, &vars, false);
        assert_eq!(f.len(), 2);
        let mut named = BTreeSet::new();
        e.named_agents(&mut named);
        assert!(named.contains("ghost"));
    }
}
