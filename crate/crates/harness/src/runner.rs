//! Executes a manifest: every scenario × coordinator (× threshold) run, with
//! episodes evaluated in parallel and merged in episode order.

use std::fs;
use std::path::Path;

use concord_core::baselines::CoordinatorKind;
use concord_core::domain::CoordinationConfig;
use concord_core::metrics::{run_episode, BatchResult};
use concord_core::scenarios::ScenarioDefinition;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::audit_log::{render_log, write_log};
use crate::error::{io_err, Result};
use crate::manifest::{Artifact, RunManifest};
use crate::report::{render_csv, render_json_lines, render_table, BatchSummary};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<BatchSummary>,
    /// The emitted manifest, artifact hashes included.
    pub manifest: RunManifest,
}

/// Runs one batch and renders its audit log.
pub fn run_one(
    def: &ScenarioDefinition,
    kind: CoordinatorKind,
    cfg: &CoordinationConfig,
    episodes: u64,
) -> Result<(BatchResult, String)> {
    let results = (0..episodes)
        .into_par_iter()
        .map(|e| run_episode(def, kind, cfg, e))
        .collect::<concord_core::Result<Vec<_>>>()?;
    let (records, outcomes): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let batch = BatchResult::from_records(def.id, kind, def.seed, cfg.tau, records);
    let log = render_log(def, kind, cfg, &outcomes, &batch);
    Ok((batch, log))
}

fn audit_name(def: &ScenarioDefinition, kind: CoordinatorKind, tau: Option<f64>) -> String {
    let scen = def.id.to_string().to_ascii_lowercase();
    match tau {
        Some(t) => format!("audit/{scen}-{kind}-tau{t}.audit.jsonl"),
        None => format!("audit/{scen}-{kind}.audit.jsonl"),
    }
}

fn artifact(rel: &str, bytes: &[u8]) -> Artifact {
    Artifact {
        path: rel.to_string(),
        sha256: hex::encode(Sha256::digest(bytes)),
        bytes: bytes.len() as u64,
    }
}

fn emit_file(out: &Path, rel: &str, text: &str, inventory: &mut Vec<Artifact>) -> Result<()> {
    write_log(&out.join(rel), text)?;
    inventory.push(artifact(rel, text.as_bytes()));
    Ok(())
}

/// Runs the whole manifest into `out`. Every byte written is a function of
/// the manifest and the tool version.
pub fn execute(manifest: &RunManifest, out: &Path) -> Result<RunOutput> {
    manifest.validate()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut rows = Vec::new();
    let mut inventory = Vec::new();
    for &id in &manifest.scenarios {
        let def = manifest.scenario(id)?;
        let base = manifest.config_for(&def);
        for &kind in &manifest.coordinators {
            for tau in manifest.taus_for(&def) {
                let cfg = base.clone().with_tau(tau);
                cfg.validate()?;
                let (batch, log) = run_one(&def, kind, &cfg, manifest.episodes)?;
                let name = audit_name(&def, kind, manifest.tau_grid.as_ref().map(|_| tau));
                emit_file(out, &name, &log, &mut inventory)?;
                rows.push(BatchSummary::from(&batch));
            }
        }
    }
    emit_file(out, "results.csv", &render_csv(&rows), &mut inventory)?;
    emit_file(out, "results.txt", &render_table(&rows), &mut inventory)?;
    emit_file(out, "results.jsonl", &render_json_lines(&rows), &mut inventory)?;
    inventory.sort_by(|a, b| a.path.cmp(&b.path));

    let mut emitted = manifest.clone();
    emitted.output_dir = None;
    emitted.tool_version = Some(env!("CARGO_PKG_VERSION").to_string());
    emitted.artifacts = inventory;
    let mut text = serde_json::to_string_pretty(&emitted).expect("manifests serialize");
    text.push('\n');
    write_log(&out.join(MANIFEST_FILE), &text)?;
    Ok(RunOutput {
        rows,
        manifest: emitted,
    })
}

/// Re-hashes the artifacts listed in an emitted manifest; returns the paths
/// whose content no longer matches.
pub fn check_artifacts(manifest: &RunManifest, dir: &Path) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for a in &manifest.artifacts {
        let path = dir.join(&a.path);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if artifact(&a.path, &bytes) != *a {
            bad.push(a.path.clone());
        }
    }
    Ok(bad)
}
