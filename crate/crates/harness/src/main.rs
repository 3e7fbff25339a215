use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use concord_core::baselines::CoordinatorKind;
use concord_core::domain::{CoordinationConfig, DualUpdateRule, ScenarioId};
use concord_core::scenarios::build_scenario;
use concord_harness::acceptance::{run_all, AcceptanceConfig};
use concord_harness::audit_log::{collect_logs, verify_log, AuditLog};
use concord_harness::manifest::{parse_tau_range, scenario_file_text, RunManifest, DEFAULT_EPISODES, DEFAULT_SEED};
use concord_harness::oracle_report::{render_summary, scenario_oracle, synthetic_oracle, OracleSummary};
use concord_harness::report::{render, Emit};
use concord_harness::runner::execute;
use concord_harness::validate::validate_file;

#[derive(Parser)]
#[command(
    name = "concord",
    version,
    about = "Risk-bounded multi-agent coordination experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios × coordinators and write audit logs, results and a manifest
    Run(RunArgs),
    /// Like `run`, sweeping τ (defaults: camco, 0.4:1.4:0.2)
    Sweep(RunArgs),
    /// Replay audit logs and report divergences
    VerifyAudit {
        /// A log file or a directory searched for `*.audit.jsonl`
        path: PathBuf,
        #[arg(long, default_value = "table")]
        emit: String,
    },
    /// Compare a coordinator with the exhaustive constrained optimum
    Oracle {
        /// s1, s2, s3 or synthetic
        #[arg(long, default_value = "s1")]
        scenario: String,
        #[arg(long, default_value = "camco")]
        coordinator: String,
        /// Episodes (or synthetic instances) to compare
        #[arg(long, default_value_t = 20)]
        episodes: u64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = "table")]
        emit: String,
    },
    /// Check a manifest or scenario file
    ValidateConfig { path: PathBuf },
    /// Write the built-in scenario definitions as scenario files
    ExportScenarios {
        #[arg(long, default_value = "scenarios")]
        out: PathBuf,
    },
    /// Run the acceptance criteria
    Acceptance {
        #[arg(long, env = "CONCORD_OUT_DIR", default_value = "concord-out")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPISODES)]
        episodes: u64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Manifest file; flags given alongside it override its fields
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Scenarios (s1, s2, s3 or all), comma separated or repeated
    #[arg(long, value_delimiter = ',')]
    scenario: Vec<String>,
    /// Coordinators (camco, b1, b2, b3, b4 or all)
    #[arg(long, value_delimiter = ',')]
    coordinator: Vec<String>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// τ grid as lo:hi:step
    #[arg(long)]
    sweep_tau: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    k_max: Option<u32>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// ratio_step, hinge_ascent or diminishing_hinge
    #[arg(long)]
    dual_rule: Option<String>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Scenario definition file as ID=PATH, e.g. s1=scenarios/s1.json
    #[arg(long)]
    scenario_file: Vec<String>,
    /// Output directory
    #[arg(long, env = "CONCORD_OUT_DIR", default_value = "concord-out")]
    out: PathBuf,
    /// Format printed to stdout: table, csv or json-lines
    #[arg(long, default_value = "table")]
    emit: String,
}

fn expand<T>(values: &[String], all: &[T]) -> anyhow::Result<Vec<T>>
where
    T: std::str::FromStr<Err = concord_core::Error> + Copy + Ord,
{
    let mut out = Vec::new();
    for v in values {
        if v.eq_ignore_ascii_case("all") {
            out.extend_from_slice(all);
        } else {
            out.push(v.parse::<T>()?);
        }
    }
    // keep first occurrences in the order given
    let mut seen = Vec::new();
    out.retain(|x| {
        let fresh = !seen.contains(x);
        seen.push(*x);
        fresh
    });
    Ok(out)
}

fn build_manifest(args: &RunArgs, sweep: bool) -> anyhow::Result<RunManifest> {
    let mut m = match &args.manifest {
        Some(path) => RunManifest::load(path)?,
        None => RunManifest::new(
            ScenarioId::EVALUATED.to_vec(),
            if sweep {
                vec![CoordinatorKind::Camco]
            } else {
                CoordinatorKind::ALL.to_vec()
            },
            DEFAULT_EPISODES,
            DEFAULT_SEED,
        ),
    };
    if !args.scenario.is_empty() {
        m.scenarios = expand(&args.scenario, &ScenarioId::EVALUATED)?;
    }
    if !args.coordinator.is_empty() {
        m.coordinators = expand(&args.coordinator, &CoordinatorKind::ALL)?;
    }
    if let Some(e) = args.episodes {
        m.episodes = e;
    }
    if let Some(s) = args.seed {
        m.seed = s;
    }
    match &args.sweep_tau {
        Some(spec) => m.tau_grid = Some(parse_tau_range(spec)?),
        None if sweep && m.tau_grid.is_none() => m.tau_grid = Some(parse_tau_range("0.4:1.4:0.2")?),
        None => {}
    }
    let o = &mut m.overrides;
    o.tau = args.tau.or(o.tau);
    o.k_max = args.k_max.or(o.k_max);
    o.lambda0 = args.lambda0.or(o.lambda0);
    o.delta = args.delta.or(o.delta);
    o.eta0 = args.eta0.or(o.eta0);
    o.alpha = args.alpha.or(o.alpha);
    if let Some(rule) = &args.dual_rule {
        o.dual_update_rule = Some(rule.parse::<DualUpdateRule>()?);
    }
    let mut files = BTreeMap::new();
    for spec in &args.scenario_file {
        let Some((id, path)) = spec.split_once('=') else {
            bail!("--scenario-file expects ID=PATH, got `{spec}`");
        };
        files.insert(id.parse::<ScenarioId>()?, PathBuf::from(path));
    }
    m.scenario_files.extend(files);
    m.validate()?;
    Ok(m)
}

fn run(args: &RunArgs, sweep: bool) -> anyhow::Result<ExitCode> {
    let emit: Emit = args.emit.parse()?;
    let manifest = build_manifest(args, sweep)?;
    let out = execute(&manifest, &args.out)?;
    print!("{}", render(&out.rows, emit));
    eprintln!(
        "wrote {} artifacts and manifest.json to {}",
        out.manifest.artifacts.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn verify_audit(path: &Path, emit: &str) -> anyhow::Result<ExitCode> {
    let emit: Emit = emit.parse()?;
    let logs = collect_logs(path)?;
    if logs.is_empty() {
        bail!("no audit logs under {}", path.display());
    }
    let mut clean = true;
    for p in &logs {
        let log = AuditLog::read(p)?;
        for w in &log.warnings {
            eprintln!("warning: {}: {w}", p.display());
        }
        let report = verify_log(&log)?;
        clean &= report.is_clean();
        match emit {
            Emit::JsonLines => println!("{}", serde_json::to_string(&report)?),
            _ => {
                println!(
                    "{}: {} records, {} episodes, {} violations flagged, {} divergences",
                    p.display(),
                    report.records,
                    report.episodes_verified,
                    report.violations_flagged,
                    report.divergences.len()
                );
                for d in &report.divergences {
                    println!(
                        "  record {} (episode {}, {}): {}",
                        d.record_index, d.episode_id, d.event_kind, d.detail
                    );
                }
            }
        }
    }
    Ok(if clean { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn oracle(scenario: &str, coordinator: &str, episodes: u64, seed: u64, emit: &str) -> anyhow::Result<ExitCode> {
    let emit: Emit = emit.parse()?;
    let kind: CoordinatorKind = coordinator.parse()?;
    let rows = match scenario.parse::<ScenarioId>()? {
        ScenarioId::Synthetic => synthetic_oracle(kind, seed, episodes)?,
        id => {
            let def = build_scenario(id, seed)?;
            let cfg = CoordinationConfig::default().with_tau(def.tau_default);
            scenario_oracle(&def, kind, &cfg, episodes)?
        }
    };
    let summary = OracleSummary::from_rows(&rows);
    match emit {
        Emit::JsonLines => {
            for r in &rows {
                println!("{}", serde_json::to_string(r)?);
            }
            println!("{}", serde_json::to_string(&summary)?);
        }
        _ => print!("{}", render_summary(kind, &summary)),
    }
    Ok(if summary.acceptable(kind) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn validate_config(path: &Path) -> anyhow::Result<ExitCode> {
    let outcome = validate_file(path)?;
    for c in &outcome.checked {
        println!("checked {c}");
    }
    for p in &outcome.problems {
        println!("problem: {p}");
    }
    if outcome.is_valid() {
        println!("{}: valid", path.display());
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn export_scenarios(out: &Path) -> anyhow::Result<ExitCode> {
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    for id in ScenarioId::EVALUATED {
        let path = out.join(format!("{}.json", id.to_string().to_ascii_lowercase()));
        fs::write(&path, scenario_file_text(&build_scenario(id, 0)?)).with_context(|| path.display().to_string())?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn acceptance(out: &Path, episodes: u64, seeds: Vec<u64>) -> anyhow::Result<ExitCode> {
    if seeds.is_empty() {
        bail!("at least one seed is required");
    }
    let cfg = AcceptanceConfig {
        seeds,
        episodes,
        ..AcceptanceConfig::default()
    };
    let results = run_all(&cfg, out, |r| println!("{r}"))?;
    Ok(if results.iter().all(|r| r.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args, false),
        Command::Sweep(args) => run(args, true),
        Command::VerifyAudit { path, emit } => verify_audit(path, emit),
        Command::Oracle {
            scenario,
            coordinator,
            episodes,
            seed,
            emit,
        } => oracle(scenario, coordinator, *episodes, *seed, emit),
        Command::ValidateConfig { path } => validate_config(path),
        Command::ExportScenarios { out } => export_scenarios(out),
        Command::Acceptance { out, episodes, seeds } => acceptance(out, *episodes, seeds.clone()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
