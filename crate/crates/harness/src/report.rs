//! Batch summaries and their CSV, table and JSON-lines renderings.

use std::fmt::Write as _;
use std::str::FromStr;

use concord_core::baselines::CoordinatorKind;
use concord_core::domain::ScenarioId;
use concord_core::metrics::BatchResult;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// `BatchResult` without the per-episode records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSummary {
    pub scenario: ScenarioId,
    pub coordinator: CoordinatorKind,
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
}

impl From<&BatchResult> for BatchSummary {
    fn from(b: &BatchResult) -> Self {
        BatchSummary {
            scenario: b.scenario_id,
            coordinator: b.coordinator_kind,
            seed: b.seed,
            tau: b.tau,
            episodes: b.episodes,
            violation_rate: b.violation_rate,
            mean_risk_ratio: b.mean_risk_ratio,
            deadlock_rate: b.deadlock_rate,
            mean_convergence_iterations: b.mean_convergence_iterations,
            utility_retention_pct: b.utility_retention_pct,
            proposal_violation_rate: b.proposal_violation_rate,
            proposal_deadlock_rate: b.proposal_deadlock_rate,
        }
    }
}

impl BatchSummary {
    /// Field-by-field comparison, exact on every number.
    pub fn differences(&self, other: &BatchSummary) -> Vec<String> {
        let mut out = Vec::new();
        let mut cmp = |name: &str, a: String, b: String| {
            if a != b {
                out.push(format!("{name}: logged {a}, recomputed {b}"));
            }
        };
        cmp("scenario", self.scenario.to_string(), other.scenario.to_string());
        cmp(
            "coordinator",
            self.coordinator.to_string(),
            other.coordinator.to_string(),
        );
        cmp("seed", self.seed.to_string(), other.seed.to_string());
        cmp("episodes", self.episodes.to_string(), other.episodes.to_string());
        for (name, a, b) in [
            ("tau", self.tau, other.tau),
            ("violation_rate", self.violation_rate, other.violation_rate),
            ("mean_risk_ratio", self.mean_risk_ratio, other.mean_risk_ratio),
            ("deadlock_rate", self.deadlock_rate, other.deadlock_rate),
            (
                "mean_convergence_iterations",
                self.mean_convergence_iterations,
                other.mean_convergence_iterations,
            ),
            (
                "utility_retention_pct",
                self.utility_retention_pct,
                other.utility_retention_pct,
            ),
            (
                "proposal_violation_rate",
                self.proposal_violation_rate,
                other.proposal_violation_rate,
            ),
            (
                "proposal_deadlock_rate",
                self.proposal_deadlock_rate,
                other.proposal_deadlock_rate,
            ),
        ] {
            if a.to_bits() != b.to_bits() {
                cmp(name, format!("{a:?}"), format!("{b:?}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emit {
    Csv,
    Table,
    JsonLines,
}

impl FromStr for Emit {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Emit::Csv),
            "table" => Ok(Emit::Table),
            "json-lines" | "jsonl" => Ok(Emit::JsonLines),
            other => Err(HarnessError::ConfigInvalid(format!("unknown emit format `{other}`"))),
        }
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: String,
    method: &'a str,
    tau: f64,
    seed: u64,
    episodes: usize,
    violation_pct: f64,
    risk_ratio: f64,
    deadlock_pct: f64,
    convergence: f64,
    utility_pct: f64,
    proposal_violation_pct: f64,
    proposal_deadlock_pct: f64,
}

pub fn render_csv(rows: &[BatchSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRow {
            scenario: r.scenario.to_string(),
            method: r.coordinator.short_name(),
            tau: r.tau,
            seed: r.seed,
            episodes: r.episodes,
            violation_pct: 100.0 * r.violation_rate,
            risk_ratio: r.mean_risk_ratio,
            deadlock_pct: 100.0 * r.deadlock_rate,
            convergence: r.mean_convergence_iterations,
            utility_pct: r.utility_retention_pct,
            proposal_violation_pct: 100.0 * r.proposal_violation_rate,
            proposal_deadlock_pct: 100.0 * r.proposal_deadlock_rate,
        })
        .expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

/// Fixed-width table in the column order Scen., Method, Viol.%, Risk ratio,
/// Dead.%, Conv., Util.%; a τ column is added when the rows differ in τ.
pub fn render_table(rows: &[BatchSummary]) -> String {
    let with_tau = rows.windows(2).any(|w| w[0].tau != w[1].tau);
    let mut out = String::new();
    let tau_head = if with_tau { "    τ " } else { "" };
    let _ = writeln!(
        out,
        "Scen.  Method             {tau_head}Viol.%  Risk ratio  Dead.%  Conv.  Util.%"
    );
    for r in rows {
        let tau = if with_tau {
            format!("{:>5.2} ", r.tau)
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{:<6} {:<18} {tau}{:>6.1}  {:>10.2}  {:>6.1}  {:>5.2}  {:>6.1}",
            r.scenario.to_string(),
            r.coordinator.label(),
            100.0 * r.violation_rate,
            r.mean_risk_ratio,
            100.0 * r.deadlock_rate,
            r.mean_convergence_iterations,
            r.utility_retention_pct,
        );
    }
    out
}

pub fn render_json_lines(rows: &[BatchSummary]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("summaries serialize") + "\n")
        .collect()
}

pub fn render(rows: &[BatchSummary], emit: Emit) -> String {
    match emit {
        Emit::Csv => render_csv(rows),
        Emit::Table => render_table(rows),
        Emit::JsonLines => render_json_lines(rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: CoordinatorKind, tau: f64) -> BatchSummary {
        BatchSummary {
            scenario: ScenarioId::S2,
            coordinator: kind,
            seed: 1,
            tau,
            episodes: 8,
            violation_rate: 0.125,
            mean_risk_ratio: 0.7,
            deadlock_rate: 0.0,
            mean_convergence_iterations: 2.0,
            utility_retention_pct: 95.5,
            proposal_violation_rate: 0.25,
            proposal_deadlock_rate: 0.0,
        }
    }

    #[test]
    fn table_has_one_line_per_row_and_the_result_columns() {
        let rows = [
            row(CoordinatorKind::Camco, 1.0),
            row(CoordinatorKind::B1Unconstrained, 1.0),
        ];
        let t = render_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Scen.  Method"));
        assert!(!lines[0].contains('τ'));
        assert!(lines[1].contains("CAMCO") && lines[1].contains("12.5") && lines[1].contains("95.5"));
        let swept = render_table(&[row(CoordinatorKind::Camco, 0.4), row(CoordinatorKind::Camco, 0.6)]);
        assert!(swept.lines().next().unwrap().contains('τ'));
    }

    #[test]
    fn csv_and_json_lines_parse_back() {
        let rows = [
            row(CoordinatorKind::Camco, 1.0),
            row(CoordinatorKind::B3StaticRules, 1.0),
        ];
        let csv_text = render_csv(&rows);
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        let recs: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(&recs[1][1], "b3");
        assert_eq!(&recs[0][5], "12.5");
        let back: Vec<BatchSummary> = render_json_lines(&rows)
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(back, rows);
    }

    #[test]
    fn differences_are_exact() {
        let a = row(CoordinatorKind::Camco, 1.0);
        let mut b = a.clone();
        assert!(a.differences(&b).is_empty());
        b.mean_risk_ratio = f64::from_bits(b.mean_risk_ratio.to_bits() + 1);
        let d = a.differences(&b);
        assert_eq!(d.len(), 1);
        assert!(d[0].starts_with("mean_risk_ratio"));
    }
}
