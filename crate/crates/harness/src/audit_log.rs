//! Newline-delimited audit logs: one header record, the events of every
//! episode in order, and a footer with the batch metrics.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use concord_core::audit::{AuditEvent, AUDIT_SCHEMA_VERSION};
use concord_core::baselines::CoordinatorKind;
use concord_core::domain::CoordinationConfig;
use concord_core::metrics::BatchResult;
use concord_core::negotiation::NegotiationOutcome;
use concord_core::scenarios::{sample_episode_states, ScenarioDefinition};
use concord_core::verifier::{record_from_audit, verify_episode, Divergence};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{io_err, HarnessError, Result};
use crate::report::BatchSummary;

pub const AUDIT_SCHEMA: &str = "concord.audit/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub record: String,
    pub schema: String,
    pub event_schema_version: u32,
    pub tool_version: String,
    pub coordinator: CoordinatorKind,
    pub config: CoordinationConfig,
    pub episodes: u64,
    pub scenario: ScenarioDefinition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footer {
    pub record: String,
    pub events: u64,
    pub episodes: u64,
    pub metrics: BatchSummary,
}

/// Serialises a whole run into log text.
pub fn render_log(
    def: &ScenarioDefinition,
    kind: CoordinatorKind,
    cfg: &CoordinationConfig,
    outcomes: &[NegotiationOutcome],
    batch: &BatchResult,
) -> String {
    let header = Header {
        record: "header".into(),
        schema: AUDIT_SCHEMA.into(),
        event_schema_version: AUDIT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        coordinator: kind,
        config: cfg.clone(),
        episodes: outcomes.len() as u64,
        scenario: def.clone(),
    };
    let mut out = String::new();
    let mut line = |v: String| {
        out.push_str(&v);
        out.push('\n');
    };
    line(serde_json::to_string(&header).expect("header serializes"));
    let mut events = 0u64;
    for o in outcomes {
        for ev in &o.audit {
            line(serde_json::to_string(ev).expect("events serialize"));
            events += 1;
        }
    }
    let footer = Footer {
        record: "footer".into(),
        events,
        episodes: outcomes.len() as u64,
        metrics: BatchSummary::from(batch),
    };
    line(serde_json::to_string(&footer).expect("footer serializes"));
    out
}

pub fn write_log(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// A parsed log. Record indices count lines from zero, header included.
#[derive(Debug, Clone)]
pub struct AuditLog {
    pub path: PathBuf,
    pub header: Header,
    pub events: Vec<(usize, AuditEvent)>,
    pub footer: Option<(usize, Footer)>,
    pub records: usize,
    pub warnings: Vec<String>,
}

enum Line {
    Header(Box<Header>),
    Footer(Footer),
    Event(Box<AuditEvent>),
}

fn parse_line(text: &str) -> std::result::Result<Line, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let kind = v.get("record").and_then(Value::as_str).map(str::to_string);
    match kind.as_deref() {
        Some("header") => serde_json::from_value(v).map(|h| Line::Header(Box::new(h))),
        Some("footer") => serde_json::from_value(v).map(Line::Footer),
        Some(other) => return Err(format!("unknown record type `{other}`")),
        None => serde_json::from_value(v).map(|e| Line::Event(Box::new(e))),
    }
    .map_err(|e| e.to_string())
}

impl AuditLog {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let err = |record_index: usize, message: String| HarnessError::Parse {
            path: path.to_path_buf(),
            record_index,
            message,
        };
        let mut lines: Vec<&str> = text.split('\n').collect();
        // a complete log ends in a newline, leaving one empty tail segment
        let tail = lines.pop().unwrap_or("");
        let mut warnings = Vec::new();
        let mut parsed = Vec::with_capacity(lines.len() + 1);
        for (i, l) in lines.iter().enumerate() {
            parsed.push(parse_line(l).map_err(|m| err(i, m))?);
        }
        if !tail.is_empty() {
            match parse_line(tail) {
                Ok(line) => parsed.push(line),
                Err(_) => warnings.push(format!(
                    "discarded partial final record {} ({} bytes)",
                    lines.len(),
                    tail.len()
                )),
            }
        }
        let records = parsed.len();
        let mut it = parsed.into_iter().enumerate();
        let header = match it.next() {
            Some((_, Line::Header(h))) => *h,
            Some(_) => return Err(err(0, "first record is not a header".into())),
            None => return Err(err(0, "empty log".into())),
        };
        if header.schema != AUDIT_SCHEMA || header.event_schema_version != AUDIT_SCHEMA_VERSION {
            return Err(err(
                0,
                format!(
                    "unsupported schema `{}` (event version {})",
                    header.schema, header.event_schema_version
                ),
            ));
        }
        let mut events = Vec::new();
        let mut footer = None;
        for (i, line) in it {
            if footer.is_some() {
                return Err(err(i, "record after footer".into()));
            }
            match line {
                Line::Event(e) => events.push((i, *e)),
                Line::Footer(f) => footer = Some((i, f)),
                Line::Header(_) => return Err(err(i, "second header".into())),
            }
        }
        if footer.is_none() {
            warnings.push("footer missing: the log is incomplete".into());
        }
        Ok(AuditLog {
            path: path.to_path_buf(),
            header,
            events,
            footer,
            records,
            warnings,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        AuditLog::parse(path, &text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub path: PathBuf,
    pub coordinator: CoordinatorKind,
    pub records: usize,
    pub episodes_verified: u64,
    pub violations_flagged: u64,
    pub divergences: Vec<Divergence>,
    pub warnings: Vec<String>,
    /// Batch metrics rebuilt from the events alone.
    pub recomputed: Option<BatchSummary>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.divergences.is_empty()
    }
}

/// Replays every episode of a log against a fresh recomputation and checks
/// the footer metrics against the ones rebuilt from the events.
pub fn verify_log(log: &AuditLog) -> Result<AuditReport> {
    let h = &log.header;
    let def = &h.scenario;
    let kind = h.coordinator;
    let mut divergences = Vec::new();
    fn flag(out: &mut Vec<Divergence>, record_index: usize, episode_id: u64, event_kind: &str, detail: String) {
        out.push(Divergence {
            record_index,
            episode_id,
            event_kind: event_kind.into(),
            detail,
        })
    }

    let mut records = Vec::new();
    let mut violations_flagged = 0;
    let mut expected_episode = 0u64;
    let mut start = 0;
    while start < log.events.len() {
        let episode = log.events[start].1.episode_id;
        let end = start
            + log.events[start..]
                .iter()
                .take_while(|(_, e)| e.episode_id == episode)
                .count();
        let first_index = log.events[start].0;
        if episode != expected_episode {
            flag(
                &mut divergences,
                first_index,
                episode,
                log.events[start].1.body.kind(),
                format!("expected episode {expected_episode}"),
            );
        }
        expected_episode = episode + 1;
        let events: Vec<AuditEvent> = log.events[start..end].iter().map(|(_, e)| e.clone()).collect();
        let state = sample_episode_states(def, episode);
        let p = def.problem(&state);
        let v = verify_episode(&p, kind, &h.config, &events, first_index)?;
        if v.violation_flagged {
            violations_flagged += 1;
        }
        divergences.extend(v.divergences);
        if let Some(r) = record_from_audit(&p, kind, episode, &events, h.config.tau)? {
            records.push(r);
        }
        start = end;
    }
    let episodes_verified = expected_episode;

    let recomputed = (!records.is_empty()).then(|| {
        BatchSummary::from(&BatchResult::from_records(
            def.id,
            kind,
            def.seed,
            h.config.tau,
            records,
        ))
    });
    match &log.footer {
        Some((idx, f)) => {
            if f.events != log.events.len() as u64 {
                flag(
                    &mut divergences,
                    *idx,
                    0,
                    "Footer",
                    format!("footer counts {} events, log has {}", f.events, log.events.len()),
                );
            }
            if f.episodes != h.episodes || episodes_verified != h.episodes {
                flag(
                    &mut divergences,
                    *idx,
                    0,
                    "Footer",
                    format!(
                        "header promises {} episodes, footer {} and log {episodes_verified}",
                        h.episodes, f.episodes
                    ),
                );
            }
            match &recomputed {
                Some(r) => {
                    for d in f.metrics.differences(r) {
                        flag(&mut divergences, *idx, 0, "Footer", d);
                    }
                }
                None => flag(
                    &mut divergences,
                    *idx,
                    0,
                    "Footer",
                    "no complete episode to recompute metrics from".into(),
                ),
            }
        }
        None => flag(
            &mut divergences,
            log.records,
            episodes_verified,
            "Footer",
            "footer missing".into(),
        ),
    }

    Ok(AuditReport {
        path: log.path.clone(),
        coordinator: kind,
        records: log.records,
        episodes_verified,
        violations_flagged,
        divergences,
        warnings: log.warnings.clone(),
        recomputed,
    })
}

/// Log files under `path`: the file itself, or every `*.audit.jsonl` below a
/// directory in sorted order.
pub fn collect_logs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let p = entry.map_err(io_err(&dir))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".audit.jsonl"))
            {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}
