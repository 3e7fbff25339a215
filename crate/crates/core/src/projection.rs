//! Constraint projection: map a proposed action to the nearest action in the
//! agent's compliant set `C_i(s)`.
//!
//! Discrete actions use a minimum edit distance search with a deterministic
//! tie-break. Continuous actions use the Euclidean projection onto a box,
//! optionally intersected with halfspaces, computed with Dykstra's alternating
//! projections and then polished on the detected active set.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{ActionValue, AgentSpec, EnterpriseState};
use crate::error::{Error, Result};
use crate::expr::Value;
use crate::policy::{compliant_actions, feasible_set, FeasibleSet, Halfspace, PolicyBundle};

pub const TOLERANCE: f64 = 1e-9;
pub const MAX_SWEEPS: usize = 10_000;
/// Largest dimension for which emptiness is certified by vertex enumeration.
pub const CERTIFY_MAX_DIM: usize = 8;

/// Edit distance between discrete actions: `label_cost` for a label change,
/// plus per attribute either `|x − y| / range` (numeric) or `1` (categorical
/// mismatch, or attribute present on one side only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditDistance {
    pub label_cost: f64,
    #[serde(default)]
    pub numeric_ranges: BTreeMap<String, f64>,
}

impl Default for EditDistance {
    fn default() -> Self {
        EditDistance {
            label_cost: 1.0,
            numeric_ranges: BTreeMap::new(),
        }
    }
}

impl EditDistance {
    pub fn with_range(mut self, attr: &str, range: f64) -> Self {
        self.numeric_ranges.insert(attr.to_string(), range);
        self
    }

    fn attribute_cost(&self, name: &str, a: Option<&Value>, b: Option<&Value>) -> f64 {
        match (a, b) {
            (Some(Value::Num(x)), Some(Value::Num(y))) => {
                let range = self.numeric_ranges.get(name).copied().unwrap_or(1.0);
                (x - y).abs() / range
            }
            (Some(x), Some(y)) if x == y => 0.0,
            _ => 1.0,
        }
    }

    pub fn distance(&self, a: &ActionValue, b: &ActionValue) -> f64 {
        match (a, b) {
            (
                ActionValue::Discrete {
                    label: la,
                    attributes: xa,
                },
                ActionValue::Discrete {
                    label: lb,
                    attributes: xb,
                },
            ) => {
                let mut total = if la == lb { 0.0 } else { self.label_cost };
                let keys: BTreeSet<&String> = xa.keys().chain(xb.keys()).collect();
                for k in keys {
                    total += self.attribute_cost(k, xa.get(k), xb.get(k));
                }
                total
            }
            (ActionValue::Continuous { values: x }, ActionValue::Continuous { values: y }) if x.len() == y.len() => {
                euclidean(x, y)
            }
            _ => f64::INFINITY,
        }
    }
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionOutcome {
    Unchanged,
    Projected,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub outcome: ProjectionOutcome,
    pub action: Option<ActionValue>,
    pub distance: f64,
    pub candidates_examined: usize,
}

impl ProjectionResult {
    fn unchanged(action: ActionValue, examined: usize) -> Self {
        ProjectionResult {
            outcome: ProjectionOutcome::Unchanged,
            action: Some(action),
            distance: 0.0,
            candidates_examined: examined,
        }
    }

    fn reject(examined: usize) -> Self {
        ProjectionResult {
            outcome: ProjectionOutcome::Reject,
            action: None,
            distance: 0.0,
            candidates_examined: examined,
        }
    }

    fn moved(action: ActionValue, distance: f64, examined: usize) -> Self {
        if distance == 0.0 {
            return ProjectionResult::unchanged(action, examined);
        }
        ProjectionResult {
            outcome: ProjectionOutcome::Projected,
            action: Some(action),
            distance,
            candidates_examined: examined,
        }
    }
}

/// Deterministic order used for discrete tie-breaks.
pub fn tie_break_order(a: &ActionValue, b: &ActionValue) -> Ordering {
    a.label()
        .cmp(&b.label())
        .then_with(|| a.canonical_key().cmp(&b.canonical_key()))
}

/// Nearest member of an explicit feasible set.
pub fn project_discrete(action: &ActionValue, feasible: &[ActionValue], metric: &EditDistance) -> ProjectionResult {
    if feasible.contains(action) {
        return ProjectionResult::unchanged(action.clone(), feasible.len());
    }
    let best = feasible
        .iter()
        .map(|c| (metric.distance(action, c), c))
        .min_by(|(da, a), (db, b)| da.total_cmp(db).then_with(|| tie_break_order(a, b)));
    match best {
        None => ProjectionResult::reject(0),
        Some((d, c)) => ProjectionResult::moved(c.clone(), d, feasible.len()),
    }
}

/// One linear inequality `row · x <= rhs`.
struct Constraint {
    row: Vec<f64>,
    rhs: f64,
}

fn box_constraints(lower: &[f64], upper: &[f64]) -> Vec<Constraint> {
    let d = lower.len();
    let mut out = Vec::with_capacity(2 * d);
    for j in 0..d {
        let mut up = vec![0.0; d];
        up[j] = 1.0;
        out.push(Constraint { row: up, rhs: upper[j] });
        let mut lo = vec![0.0; d];
        lo[j] = -1.0;
        out.push(Constraint {
            row: lo,
            rhs: -lower[j],
        });
    }
    out
}

fn all_constraints(lower: &[f64], upper: &[f64], halfspaces: &[Halfspace]) -> Vec<Constraint> {
    let mut c = box_constraints(lower, upper);
    c.extend(halfspaces.iter().map(|h| Constraint {
        row: h.normal.clone(),
        rhs: h.offset,
    }));
    c
}

fn satisfies(constraints: &[Constraint], x: &[f64], tol: f64) -> bool {
    constraints
        .iter()
        .all(|c| c.row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() <= c.rhs + tol)
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> bool) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if f(&idx) {
            return;
        }
        let mut i = k;
        while i > 0 && idx[i - 1] == i - 1 + n - k {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Emptiness check of `box ∩ halfspaces` by enumerating candidate vertices.
/// The box is bounded, so the polytope is non-empty iff it has a vertex.
pub fn polytope_is_empty(lower: &[f64], upper: &[f64], halfspaces: &[Halfspace]) -> bool {
    let d = lower.len();
    let cons = all_constraints(lower, upper, halfspaces);
    let mut found = false;
    combinations(cons.len(), d, |subset| {
        let a = DMatrix::from_fn(d, d, |r, c| cons[subset[r]].row[c]);
        let b = DVector::from_fn(d, |r, _| cons[subset[r]].rhs);
        if let Some(x) = a.lu().solve(&b) {
            if x.iter().all(|v| v.is_finite()) && satisfies(&cons, x.as_slice(), 1e-9) {
                found = true;
            }
        }
        found
    });
    !found
}

fn project_halfspace(x: &mut [f64], h: &Halfspace) {
    let norm2: f64 = h.normal.iter().map(|a| a * a).sum();
    if norm2 == 0.0 {
        return;
    }
    let excess = h.value(x) - h.offset;
    if excess > 0.0 {
        let t = excess / norm2;
        for (xi, ni) in x.iter_mut().zip(&h.normal) {
            *xi -= t * ni;
        }
    }
}

fn clamp_box(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(*lo, *hi);
    }
}

/// Dykstra's algorithm over the box and each halfspace.
fn dykstra(x0: &[f64], lower: &[f64], upper: &[f64], halfspaces: &[Halfspace]) -> Result<Vec<f64>> {
    let d = x0.len();
    let sets = halfspaces.len() + 1;
    let mut x = x0.to_vec();
    let mut incr = vec![vec![0.0; d]; sets];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let prev = x.clone();
        // a sweep can leave x in place while the increments still move, so
        // both must settle before stopping
        let mut incr_change = 0.0;
        for (k, p) in incr.iter_mut().enumerate() {
            let mut y: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a + b).collect();
            let shifted = y.clone();
            if k == 0 {
                clamp_box(&mut y, lower, upper);
            } else {
                project_halfspace(&mut y, &halfspaces[k - 1]);
            }
            for j in 0..d {
                let next = shifted[j] - y[j];
                incr_change += (next - p[j]) * (next - p[j]);
                p[j] = next;
            }
            x = y;
        }
        let change = euclidean(&x, &prev);
        let violation = halfspaces
            .iter()
            .map(|h| (h.value(&x) - h.offset).max(0.0))
            .fold(0.0, f64::max);
        residual = change.max(violation).max(incr_change.sqrt());
        if residual < TOLERANCE {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence {
        sweeps: MAX_SWEEPS,
        residual,
    })
}

/// Exact projection onto the constraints active at `approx`, accepted only if
/// it is feasible and satisfies the KKT sign conditions.
fn polish(x0: &[f64], approx: &[f64], cons: &[Constraint]) -> Option<Vec<f64>> {
    let d = x0.len();
    let active: Vec<&Constraint> = cons
        .iter()
        .filter(|c| {
            let norm = c.row.iter().map(|a| a * a).sum::<f64>().sqrt();
            norm > 0.0
                && (c.row.iter().zip(approx).map(|(a, b)| a * b).sum::<f64>() - c.rhs).abs() <= 1e-6 * norm.max(1.0)
        })
        .collect();
    if active.is_empty() {
        return None;
    }
    let m = active.len();
    let a = DMatrix::from_fn(m, d, |r, c| active[r].row[c]);
    let x = DVector::from_column_slice(x0);
    let b = DVector::from_fn(m, |r, _| active[r].rhs);
    let gram = &a * a.transpose();
    let rhs = &a * &x - b;
    let mu = gram.svd(true, true).solve(&rhs, 1e-12).ok()?;
    if mu.iter().any(|v| !v.is_finite() || *v < -1e-9) {
        return None;
    }
    let y = x - a.transpose() * mu;
    let y: Vec<f64> = y.iter().copied().collect();
    satisfies(cons, &y, 1e-9).then_some(y)
}

/// Euclidean projection of `action` onto `box ∩ halfspaces`.
pub fn project_continuous(
    action: &[f64],
    lower: &[f64],
    upper: &[f64],
    halfspaces: &[Halfspace],
) -> Result<ProjectionResult> {
    let d = lower.len();
    if action.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: action.len(),
        });
    }
    if upper.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: upper.len(),
        });
    }
    if let Some(h) = halfspaces.iter().find(|h| h.normal.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: h.normal.len(),
        });
    }
    if action.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidAction("non-finite coordinate".into()));
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(lo, hi)| lo.partial_cmp(hi).is_none_or(|o| o.is_gt()))
    {
        return Err(Error::InvalidAction("box lower bound exceeds upper bound".into()));
    }

    let wrap = |values: Vec<f64>| ActionValue::Continuous { values };
    let in_box = action
        .iter()
        .zip(lower.iter().zip(upper))
        .all(|(x, (lo, hi))| lo <= x && x <= hi);
    if in_box && halfspaces.iter().all(|h| h.value(action) <= h.offset) {
        return Ok(ProjectionResult::unchanged(wrap(action.to_vec()), 0));
    }

    if halfspaces.is_empty() {
        let mut y = action.to_vec();
        clamp_box(&mut y, lower, upper);
        let dist = euclidean(action, &y);
        return Ok(ProjectionResult::moved(wrap(y), dist, 0));
    }

    if d <= CERTIFY_MAX_DIM && polytope_is_empty(lower, upper, halfspaces) {
        return Ok(ProjectionResult::reject(0));
    }

    let approx = dykstra(action, lower, upper, halfspaces)?;
    let cons = all_constraints(lower, upper, halfspaces);
    let mut y = polish(action, &approx, &cons).unwrap_or(approx);
    clamp_box(&mut y, lower, upper);
    let dist = euclidean(action, &y);
    Ok(ProjectionResult::moved(wrap(y), dist, 0))
}

/// Projects an agent's proposal onto its compliant set in the given state.
pub fn project(
    agent: &AgentSpec,
    state: &EnterpriseState,
    bundle: &PolicyBundle,
    action: &ActionValue,
) -> Result<ProjectionResult> {
    match feasible_set(bundle, state, agent) {
        FeasibleSet::Discrete(_) => {
            let compliant = compliant_actions(bundle, state, agent);
            Ok(project_discrete(action, &compliant, &agent.edit_distance))
        }
        FeasibleSet::Point(p) => {
            let dist = agent.edit_distance.distance(action, &p);
            if dist.is_infinite() {
                return Err(Error::InvalidAction(format!(
                    "`{action}` does not match the action space"
                )));
            }
            Ok(ProjectionResult::moved(p, dist, 1))
        }
        FeasibleSet::Region {
            lower,
            upper,
            halfspaces,
        } => match action {
            ActionValue::Continuous { values } => project_continuous(values, &lower, &upper, &halfspaces),
            ActionValue::Discrete { .. } => Err(Error::InvalidAction(format!(
                "discrete action `{action}` for continuous agent `{}`",
                agent.agent_id
            ))),
        },
    }
}
