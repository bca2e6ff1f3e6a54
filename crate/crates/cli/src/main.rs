use std::collections::BTreeSet;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use amagf_control_plane::{serve, ServeConfig};
use amagf_core::certify::{render_cec, render_iat, run_cec, run_iat, CecSuite, CertificationFile, IatSuite};
use amagf_core::corrective::{generate_pigr, parse_window, render_pigr};
use amagf_core::response::BandConfig;
use amagf_core::scenario::export::{profiles, trajectory_csv};
use amagf_core::scenario::runtime::check_expectations;
use amagf_core::scenario::{audit_log, EventBody, EventLog, Runtime, ScenarioScript};
use amagf_core::Tick;

#[derive(Parser)]
#[command(name = "amagf", version, about = "Runtime governance simulator for agent formations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario script and check its expectations.
    Run {
        script: PathBuf,
        /// Override the script's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event log as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the metric trajectory as CSV.
        #[arg(long)]
        export_csv: Option<PathBuf>,
        /// Print six-metric profiles at these ticks, e.g. `0,28,45`.
        #[arg(long, value_delimiter = ',')]
        profiles: Vec<Tick>,
        /// Serve the run live instead of running it to completion.
        #[arg(long, value_name = "ADDR", num_args = 0..=1, default_missing_value = "127.0.0.1:7878")]
        serve: Option<SocketAddr>,
        /// Milliseconds per tick when serving.
        #[arg(long, default_value_t = 1000)]
        pace: u64,
        /// Start serving paused.
        #[arg(long)]
        paused: bool,
        /// Require this operator token on live commands.
        #[arg(long)]
        token: Option<String>,
    },
    /// Check a recorded log, optionally against a fresh run of its script.
    Replay {
        log: PathBuf,
        /// Re-run this script and require a byte-identical log.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Run a certification suite.
    Certify {
        kind: SuiteKind,
        suite: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Generate the post-incident review for a window of a recorded log.
    Pigr {
        log: PathBuf,
        /// Inclusive window, `A..B`.
        #[arg(long)]
        window: String,
        #[arg(long)]
        json: bool,
    },
    /// Validate a scenario script without running it.
    Validate { script: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteKind {
    Iat,
    Cec,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_script(path: &Path) -> Result<ScenarioScript> {
    ScenarioScript::from_json(&read(path)?).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn load_log(path: &Path) -> Result<EventLog> {
    EventLog::from_jsonl(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn verdict(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn validate(path: &Path) -> Result<ExitCode> {
    let script = load_script(path)?;
    match script.validate() {
        Ok(()) => {
            println!("{}: ok ({} agents, {} timeline entries)", script.name, script.agents.len(), script.timeline.len());
            Ok(ExitCode::SUCCESS)
        }
        Err(problems) => {
            for p in &problems {
                println!("{p}");
            }
            Ok(ExitCode::FAILURE)
        }
    }
}

fn run(script: &Path, seed: Option<u64>, log: Option<PathBuf>, csv: Option<PathBuf>, ticks: Vec<Tick>) -> Result<ExitCode> {
    let mut script = load_script(script)?;
    if let Some(seed) = seed {
        script.seed = seed;
    }
    let rt = Runtime::run(script.clone())?;
    let events = rt.log();
    for (t, s) in events.snapshots() {
        let changed = events
            .range(t, t)
            .iter()
            .filter(|e| matches!(e.body, EventBody::LevelTransition { .. }))
            .count();
        if t == 0 || changed > 0 || t == script.duration {
            println!("t={t:<4} CQS {:.3} {:<10} binding {}", s.cqs, s.level.name(), s.binding);
        }
    }
    if let Some(path) = log {
        fs::write(&path, events.to_jsonl()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = csv {
        fs::write(&path, trajectory_csv(events)?).with_context(|| format!("writing {}", path.display()))?;
    }
    for p in profiles(events, &ticks) {
        let v: Vec<String> = p.values.iter().map(|x| format!("{x:.2}")).collect();
        println!("profile t={}: [{}]", p.t, v.join(", "));
    }
    let checks = check_expectations(&script, events);
    let failed = checks.iter().filter(|c| !c.pass).count();
    for c in checks.iter().filter(|c| !c.pass) {
        println!("mismatch t={} {}: expected {} got {}", c.at, c.field, c.expected, c.actual);
    }
    if !checks.is_empty() {
        println!("expectations: {}/{} ok", checks.len() - failed, checks.len());
    }
    Ok(verdict(failed == 0))
}

async fn serve_live(script: &Path, seed: Option<u64>, addr: SocketAddr, config: ServeConfig) -> Result<ExitCode> {
    let mut script = load_script(script)?;
    if let Some(seed) = seed {
        script.seed = seed;
    }
    let runtime = Runtime::new(script)?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    println!("serving on ws://{}/ws", listener.local_addr()?);
    tokio::select! {
        r = serve(listener, runtime, config) => r?,
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(ExitCode::SUCCESS)
}

fn replay(path: &Path, against: Option<PathBuf>) -> Result<ExitCode> {
    let text = read(path)?;
    let log = EventLog::from_jsonl(&text).with_context(|| format!("parsing {}", path.display()))?;
    let audit = audit_log(&log, &BandConfig::default());
    println!(
        "{} events, {} snapshots, {} gate decisions, {} transitions",
        log.len(),
        log.snapshots().count(),
        audit.gate_decisions,
        audit.transitions
    );
    for v in &audit.violations {
        println!("violation: {v}");
    }
    let mut ok = audit.violations.is_empty();
    if let Some(script) = against {
        let fresh = Runtime::run(load_script(&script)?)?.log().to_jsonl();
        let same = fresh == text;
        println!("re-run {}", if same { "byte-identical" } else { "differs" });
        ok &= same;
    }
    Ok(verdict(ok))
}

fn certify(kind: SuiteKind, path: &Path, json: bool) -> Result<ExitCode> {
    let text = read(path)?;
    let pass = match kind {
        SuiteKind::Iat => {
            let file: CertificationFile<IatSuite> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let report = run_iat(&file.agent, &file.suite)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", render_iat(&report));
            }
            report.pass
        }
        SuiteKind::Cec => {
            let file: CertificationFile<CecSuite> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let report = run_cec(&file.agent, &file.suite)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", render_cec(&report));
            }
            report.pass
        }
    };
    Ok(verdict(pass))
}

fn pigr(path: &Path, window: &str, json: bool) -> Result<ExitCode> {
    let log = load_log(path)?;
    let window = parse_window(window).map_err(anyhow::Error::msg)?;
    let report = generate_pigr(&log, window)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", render_pigr(&report));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            script,
            seed,
            log,
            export_csv,
            profiles,
            serve,
            pace,
            paused,
            token,
        } => match serve {
            Some(addr) => {
                let config = ServeConfig {
                    ms_per_tick: pace,
                    start_paused: paused,
                    breakpoints: BTreeSet::new(),
                    operator_token: token,
                };
                tokio::runtime::Runtime::new()
                    .context("starting async runtime")
                    .and_then(|rt| rt.block_on(serve_live(&script, seed, addr, config)))
            }
            None if token.is_some() || paused => Err(anyhow::anyhow!("--token and --paused only apply with --serve")),
            None => run(&script, seed, log, export_csv, profiles),
        },
        Command::Replay { log, against } => replay(&log, against),
        Command::Certify { kind, suite, json } => certify(kind, &suite, json),
        Command::Pigr { log, window, json } => pigr(&log, &window, json),
        Command::Validate { script } => validate(&script),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

