//! Batch metrics over episodes and the threshold sensitivity sweep.

use serde::{Deserialize, Serialize};

use crate::baselines::{coordinate, CoordinatorKind};
use crate::domain::{CoordinationConfig, JointAction, ScenarioId};
use crate::error::Result;
use crate::negotiation::{FallbackOperator, NegotiationOutcome, Problem, Status};
use crate::scenarios::{sample_episode_states, ScenarioDefinition};

/// Default threshold grid of the sensitivity sweep.
pub const DEFAULT_TAU_GRID: [f64; 6] = [0.4, 0.6, 0.8, 1.0, 1.2, 1.4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub status: Status,
    pub iterations_used: u32,
    /// `Σ_i U_i` of the executed tuple: the accepted joint action, or the
    /// fallback for failed episodes.
    pub executed_utility: f64,
    /// `Σ_i max_{a ∈ A_i} U_i`, the unconstrained optimum.
    pub optimum_utility: f64,
    /// Aggregate risk of the accepted joint action.
    pub accepted_risk: Option<f64>,
    /// The accepted joint action is policy-infeasible.
    pub violation: bool,
    pub proposals: u32,
    pub proposal_violations: u32,
}

impl EpisodeRecord {
    pub fn retention(&self) -> f64 {
        if self.optimum_utility > 0.0 {
            self.executed_utility / self.optimum_utility
        } else {
            1.0
        }
    }
}

/// Unconstrained joint optimum. The objective is separable, so this is the
/// sum of per-agent raw maxima.
pub fn unconstrained_optimum(p: &Problem<'_>) -> f64 {
    p.agents.iter().fold(0.0, |acc, a| {
        let best = match a.discrete_actions() {
            Some(actions) => actions
                .iter()
                .map(|x| a.utility(p.state, x))
                .fold(f64::NEG_INFINITY, f64::max),
            None => crate::shaping::best_response_scored(a, p.state, 0.0, p.risk)
                .map(|s| s.utility)
                .unwrap_or(0.0),
        };
        acc + best
    })
}

/// `Φ = 0` or some action outside its feasible set, recomputed from scratch.
pub fn policy_violation(p: &Problem<'_>, joint: &JointAction) -> Result<bool> {
    Ok(!(p.phi(joint)?.phi && p.execution_feasible(joint)))
}

/// Scores one outcome against an independent recomputation.
pub fn episode_record(p: &Problem<'_>, episode: u64, outcome: &NegotiationOutcome, tau: f64) -> Result<EpisodeRecord> {
    let executed = outcome.executed();
    let executed_utility = executed.map(|j| p.total_utility(j)).unwrap_or(0.0);
    let (accepted_risk, violation) = match (outcome.status, &outcome.joint) {
        (Status::Accepted, Some(j)) => (Some(p.joint_risk(j, tau)?.total), policy_violation(p, j)?),
        _ => (None, false),
    };
    Ok(EpisodeRecord {
        episode,
        status: outcome.status,
        iterations_used: outcome.iterations_used,
        executed_utility,
        optimum_utility: unconstrained_optimum(p),
        accepted_risk,
        violation,
        proposals: outcome.rounds.len() as u32,
        proposal_violations: outcome.rounds.iter().filter(|r| r.violates_policy()).count() as u32,
    })
}

/// Runs one single-step episode.
pub fn run_episode(
    def: &ScenarioDefinition,
    kind: CoordinatorKind,
    cfg: &CoordinationConfig,
    episode: u64,
) -> Result<(EpisodeRecord, NegotiationOutcome)> {
    let state = sample_episode_states(def, episode);
    let p = def.problem(&state);
    FallbackOperator::verify(&p, cfg.tau)?;
    let outcome = coordinate(kind, &p, cfg, &FallbackOperator::new(), episode)?;
    let record = episode_record(&p, episode, &outcome, cfg.tau)?;
    Ok((record, outcome))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Fraction of executed (accepted) joint actions that violate policy.
/// Failed episodes execute nothing new and are not counted.
pub fn violation_rate(records: &[EpisodeRecord]) -> f64 {
    let accepted: Vec<_> = records.iter().filter(|r| r.status == Status::Accepted).collect();
    if accepted.is_empty() {
        return 0.0;
    }
    accepted.iter().filter(|r| r.violation).count() as f64 / accepted.len() as f64
}

/// Mean of `R_tot / τ` over executed joint actions.
pub fn mean_risk_ratio(records: &[EpisodeRecord], tau: f64) -> f64 {
    mean(records.iter().filter_map(|r| r.accepted_risk).map(|r| r / tau))
}

pub fn deadlock_rate(records: &[EpisodeRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.status == Status::Failed).count() as f64 / records.len() as f64
}

/// Mean iterations over accepted episodes.
pub fn convergence_iterations(records: &[EpisodeRecord]) -> f64 {
    mean(
        records
            .iter()
            .filter(|r| r.status == Status::Accepted)
            .map(|r| f64::from(r.iterations_used)),
    )
}

/// Mean per-episode retention in percent; failed episodes count the fallback.
pub fn utility_retention(records: &[EpisodeRecord]) -> f64 {
    100.0 * mean(records.iter().map(EpisodeRecord::retention))
}

/// Fraction of every evaluated joint proposal that was policy-infeasible.
pub fn proposal_violation_rate(records: &[EpisodeRecord]) -> f64 {
    let total: u32 = records.iter().map(|r| r.proposals).sum();
    if total == 0 {
        return 0.0;
    }
    f64::from(records.iter().map(|r| r.proposal_violations).sum::<u32>()) / f64::from(total)
}

/// Fraction of evaluated proposals that belong to episodes ending in failure.
pub fn proposal_deadlock_rate(records: &[EpisodeRecord]) -> f64 {
    let total: u32 = records.iter().map(|r| r.proposals).sum();
    if total == 0 {
        return 0.0;
    }
    let failed: u32 = records
        .iter()
        .filter(|r| r.status == Status::Failed)
        .map(|r| r.proposals)
        .sum();
    f64::from(failed) / f64::from(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub scenario_id: ScenarioId,
    pub coordinator_kind: CoordinatorKind,
    pub seed: u64,
    pub tau: f64,
    pub episodes: usize,
    pub violation_rate: f64,
    pub mean_risk_ratio: f64,
    pub deadlock_rate: f64,
    pub mean_convergence_iterations: f64,
    pub utility_retention_pct: f64,
    pub proposal_violation_rate: f64,
    pub proposal_deadlock_rate: f64,
    pub per_episode_records: Vec<EpisodeRecord>,
}

impl BatchResult {
    pub fn from_records(
        scenario_id: ScenarioId,
        coordinator_kind: CoordinatorKind,
        seed: u64,
        tau: f64,
        records: Vec<EpisodeRecord>,
    ) -> Self {
        BatchResult {
            scenario_id,
            coordinator_kind,
            seed,
            tau,
            episodes: records.len(),
            violation_rate: violation_rate(&records),
            mean_risk_ratio: mean_risk_ratio(&records, tau),
            deadlock_rate: deadlock_rate(&records),
            mean_convergence_iterations: convergence_iterations(&records),
            utility_retention_pct: utility_retention(&records),
            proposal_violation_rate: proposal_violation_rate(&records),
            proposal_deadlock_rate: proposal_deadlock_rate(&records),
            per_episode_records: records,
        }
    }

    /// Pools several batches of the same scenario and coordinator.
    pub fn pooled(batches: &[BatchResult]) -> Option<BatchResult> {
        let first = batches.first()?;
        let records: Vec<EpisodeRecord> = batches.iter().flat_map(|b| b.per_episode_records.clone()).collect();
        Some(BatchResult::from_records(
            first.scenario_id,
            first.coordinator_kind,
            first.seed,
            first.tau,
            records,
        ))
    }
}

/// Configuration for a scenario: defaults with the scenario threshold.
pub fn scenario_config(def: &ScenarioDefinition, base: &CoordinationConfig) -> CoordinationConfig {
    base.clone().with_tau(def.tau_default)
}

/// Runs `episodes` episodes sequentially.
pub fn run_batch(
    def: &ScenarioDefinition,
    kind: CoordinatorKind,
    cfg: &CoordinationConfig,
    episodes: u64,
) -> Result<BatchResult> {
    let records = (0..episodes)
        .map(|e| run_episode(def, kind, cfg, e).map(|(r, _)| r))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchResult::from_records(def.id, kind, def.seed, cfg.tau, records))
}

/// One batch per threshold in `tau_grid`.
pub fn tau_sensitivity_sweep(
    def: &ScenarioDefinition,
    kind: CoordinatorKind,
    cfg: &CoordinationConfig,
    tau_grid: &[f64],
    episodes: u64,
) -> Result<Vec<BatchResult>> {
    tau_grid
        .iter()
        .map(|&tau| run_batch(def, kind, &cfg.clone().with_tau(tau), episodes))
        .collect()
}
