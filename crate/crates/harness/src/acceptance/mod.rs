//! The acceptance suite: thirteen criteria, each reported as PASS or FAIL
//! with the numbers behind the verdict.

mod properties;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use concord_core::baselines::CoordinatorKind;
use concord_core::domain::ScenarioId;
use concord_core::metrics::{BatchResult, DEFAULT_TAU_GRID};
use rayon::prelude::*;

use crate::audit_log::{collect_logs, verify_log, write_log, AuditLog};
use crate::error::{io_err, Result};
use crate::manifest::RunManifest;
use crate::runner::{execute, run_one};

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn new(id: u8, title: &'static str, pass: bool, detail: String) -> Self {
        let detail = detail.trim_end().to_string();
        CriterionResult {
            id,
            title,
            pass,
            detail,
        }
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "[criterion {}] {verdict} {}: {}", self.id, self.title, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct AcceptanceConfig {
    pub seeds: Vec<u64>,
    pub episodes: u64,
    pub runtime_budget: Duration,
    pub property_instances: u64,
    pub oracle_instances: u64,
    pub halfspace_instances: usize,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        AcceptanceConfig {
            seeds: vec![1, 2, 3, 4, 5],
            episodes: 500,
            runtime_budget: Duration::from_secs(60),
            property_instances: 10_000,
            oracle_instances: 1_000,
            halfspace_instances: 100,
        }
    }
}

type Pooled = BTreeMap<(ScenarioId, CoordinatorKind), BatchResult>;

struct Matrix {
    /// Every (seed, scenario, coordinator) batch.
    batches: Vec<BatchResult>,
    pooled: Pooled,
    camco_time: Duration,
}

/// Runs the full matrix for every seed, writing each audit log under
/// `dir/matrix`.
fn run_matrix(cfg: &AcceptanceConfig, dir: &Path) -> Result<Matrix> {
    let mut batches = Vec::new();
    let mut camco_time = Duration::ZERO;
    for &seed in &cfg.seeds {
        let manifest = RunManifest::new(
            ScenarioId::EVALUATED.to_vec(),
            CoordinatorKind::ALL.to_vec(),
            cfg.episodes,
            seed,
        );
        for &id in &manifest.scenarios {
            let def = manifest.scenario(id)?;
            let run_cfg = manifest.config_for(&def);
            for &kind in &manifest.coordinators {
                let start = Instant::now();
                let (batch, log) = run_one(&def, kind, &run_cfg, cfg.episodes)?;
                let name = format!(
                    "matrix/seed{seed}/{}-{kind}.audit.jsonl",
                    id.to_string().to_ascii_lowercase()
                );
                write_log(&dir.join(name), &log)?;
                if kind == CoordinatorKind::Camco {
                    camco_time += start.elapsed();
                }
                batches.push(batch);
            }
        }
    }
    let mut groups: BTreeMap<(ScenarioId, CoordinatorKind), Vec<BatchResult>> = BTreeMap::new();
    for b in &batches {
        groups
            .entry((b.scenario_id, b.coordinator_kind))
            .or_default()
            .push(b.clone());
    }
    let pooled = groups
        .into_iter()
        .filter_map(|(k, v)| BatchResult::pooled(&v).map(|b| (k, b)))
        .collect();
    Ok(Matrix {
        batches,
        pooled,
        camco_time,
    })
}

fn per_scenario<'a>(
    id: u8,
    title: &'static str,
    pooled: &'a Pooled,
    check: impl Fn(&dyn Fn(CoordinatorKind) -> &'a BatchResult) -> (bool, String),
) -> CriterionResult {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in ScenarioId::EVALUATED {
        let get = |k: CoordinatorKind| &pooled[&(s, k)];
        let (ok, text) = check(&get);
        pass &= ok;
        parts.push(format!("{s} {text}"));
    }
    CriterionResult::new(id, title, pass, parts.join("; "))
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn scenario_criteria(cfg: &AcceptanceConfig, m: &Matrix) -> Vec<CriterionResult> {
    let mut out = Vec::new();
    let zero = |kind: CoordinatorKind| {
        let worst = m
            .batches
            .iter()
            .filter(|b| b.coordinator_kind == kind)
            .map(|b| b.violation_rate)
            .fold(0.0, f64::max);
        let runs = m.batches.iter().filter(|b| b.coordinator_kind == kind).count();
        (
            worst == 0.0,
            format!(
                "{runs} runs of {} episodes, worst violation rate {}",
                cfg.episodes,
                pct(worst)
            ),
        )
    };
    let (ok, text) = zero(CoordinatorKind::Camco);
    let in_budget = m.camco_time < cfg.runtime_budget;
    out.push(CriterionResult::new(
        1,
        "zero violations for the negotiated coordinator",
        ok && in_budget,
        format!(
            "{text}; {:.1} s of {} s budget",
            m.camco_time.as_secs_f64(),
            cfg.runtime_budget.as_secs()
        ),
    ));
    let (ok, text) = zero(CoordinatorKind::B3StaticRules);
    out.push(CriterionResult::new(
        2,
        "zero violations for the rules baseline",
        ok,
        text,
    ));

    use CoordinatorKind::*;
    out.push(per_scenario(3, "bounded risk ratio", &m.pooled, |get| {
        let r = get(Camco).mean_risk_ratio;
        (
            r < 1.0,
            format!(
                "{r:.3}{}",
                if (0.5..=0.9).contains(&r) {
                    ""
                } else {
                    " (outside calibration band)"
                }
            ),
        )
    }));
    out.push(per_scenario(4, "baseline violation ordering", &m.pooled, |get| {
        let (b1, b2, b4) = (
            get(B1Unconstrained).violation_rate,
            get(B2CentralizedGreedy).violation_rate,
            get(B4LagrangianPerAgent).violation_rate,
        );
        (
            b1 > b2 && b2 > b4 && b4 > 0.0 && b1 >= 0.05,
            format!("B1 {} > B2 {} > B4 {} > 0", pct(b1), pct(b2), pct(b4)),
        )
    }));
    out.push(per_scenario(5, "utility retention dominance", &m.pooled, |get| {
        let (c, b3) = (
            get(Camco).utility_retention_pct,
            get(B3StaticRules).utility_retention_pct,
        );
        (c - b3 >= 10.0 && c >= 85.0, format!("{c:.1} vs B3 {b3:.1}"))
    }));
    out.push(per_scenario(6, "deadlock ordering", &m.pooled, |get| {
        let (c, b3) = (get(Camco).deadlock_rate, get(B3StaticRules).deadlock_rate);
        (c < b3 && c <= 0.05, format!("{} vs B3 {}", pct(c), pct(b3)))
    }));
    out.push(per_scenario(7, "convergence speed", &m.pooled, |get| {
        let it = get(Camco).mean_convergence_iterations;
        ((1.5..=4.0).contains(&it), format!("{it:.2} iterations"))
    }));
    out
}

fn sweep_criterion(cfg: &AcceptanceConfig, dir: &Path) -> Result<CriterionResult> {
    let mut manifest = RunManifest::new(
        ScenarioId::EVALUATED.to_vec(),
        vec![CoordinatorKind::Camco],
        cfg.episodes,
        cfg.seeds[0],
    );
    manifest.tau_grid = Some(DEFAULT_TAU_GRID.to_vec());
    let out = execute(&manifest, &dir.join("sweep"))?;
    let mut pass = true;
    let mut parts = Vec::new();
    for s in ScenarioId::EVALUATED {
        let rows: Vec<_> = out.rows.iter().filter(|r| r.scenario == s).collect();
        let zero = rows.iter().all(|r| r.violation_rate == 0.0);
        let monotone = rows
            .windows(2)
            .all(|w| w[1].utility_retention_pct >= w[0].utility_retention_pct - 1.0);
        let spread = rows.last().map_or(0.0, |r| r.utility_retention_pct)
            - rows.first().map_or(0.0, |r| r.utility_retention_pct);
        pass &= rows.len() == DEFAULT_TAU_GRID.len() && zero && monotone && spread >= 10.0;
        let curve: Vec<String> = rows.iter().map(|r| format!("{:.1}", r.utility_retention_pct)).collect();
        parts.push(format!(
            "{s} retention [{}] spread {spread:.1}{}{}",
            curve.join(", "),
            if zero { "" } else { " VIOLATIONS" },
            if monotone { "" } else { " NOT MONOTONE" }
        ));
    }
    Ok(CriterionResult::new(
        12,
        "threshold sensitivity",
        pass,
        parts.join("; "),
    ))
}

fn files_under(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let p = entry.map_err(io_err(&d))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).map_err(io_err(&p))?;
                out.insert(p.strip_prefix(dir).unwrap_or(&p).to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn determinism_criterion(cfg: &AcceptanceConfig, dir: &Path) -> Result<CriterionResult> {
    let manifest = RunManifest::new(
        ScenarioId::EVALUATED.to_vec(),
        CoordinatorKind::ALL.to_vec(),
        cfg.episodes,
        cfg.seeds[0],
    );
    let (a, b) = (dir.join("replay-a"), dir.join("replay-b"));
    execute(&manifest, &a)?;
    execute(&manifest, &b)?;
    let (fa, fb) = (files_under(&a)?, files_under(&b)?);
    let identical = fa == fb && !fa.is_empty();

    let logs = collect_logs(dir)?;
    let reports = logs
        .par_iter()
        .map(|p| AuditLog::read(p).and_then(|log| verify_log(&log)))
        .collect::<Result<Vec<_>>>()?;
    let divergences: usize = reports.iter().map(|r| r.divergences.len()).sum();
    let first = reports
        .iter()
        .flat_map(|r| r.divergences.iter().map(move |d| (&r.path, d)))
        .next();
    let episodes: u64 = reports.iter().map(|r| r.episodes_verified).sum();
    Ok(CriterionResult::new(
        13,
        "determinism and audit replay",
        identical && divergences == 0,
        format!(
            "{} artifacts byte-identical across two runs: {identical}; {} logs, {episodes} episodes replayed, {divergences} divergences{}",
            fa.len(),
            reports.len(),
            first.map_or(String::new(), |(p, d)| format!(" (first: {} record {} {})", p.display(), d.record_index, d.detail)),
        ),
    ))
}

/// Runs every criterion, writing artifacts under `dir`. `report` is called
/// as soon as each verdict is known.
pub fn run_all(
    cfg: &AcceptanceConfig,
    dir: &Path,
    mut report: impl FnMut(&CriterionResult),
) -> Result<Vec<CriterionResult>> {
    let mut results = Vec::new();
    let mut push = |r: CriterionResult| {
        report(&r);
        results.push(r);
    };
    let matrix = run_matrix(cfg, dir)?;
    for r in scenario_criteria(cfg, &matrix) {
        push(r);
    }
    push(properties::termination(cfg.property_instances));
    push(properties::conditional_monotonicity(cfg.property_instances));
    push(properties::projection(
        cfg.property_instances,
        cfg.property_instances,
        cfg.halfspace_instances,
    ));
    push(properties::oracle_soundness(cfg.oracle_instances));
    push(sweep_criterion(cfg, dir)?);
    push(determinism_criterion(cfg, dir)?);
    Ok(results)
}
