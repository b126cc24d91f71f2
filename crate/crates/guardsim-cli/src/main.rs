//! guardsim: run attack/defense scenarios, list the catalogs, replay logs.
//!
//! Exit codes: 0 = post-test passed for every protected attribute,
//! 1 = a protected attribute failed post-test (or replay diverged),
//! 2 = parse or spec error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use guardsim_core::attack::VECTOR_CATALOG;
use guardsim_core::guard::{classify, GuardKind, Posture, Scope};
use guardsim_core::log::{EventLog, LogEntry};
use guardsim_core::report::{render_report, ReportFormat};
use guardsim_core::scenario::parse_scenario;
use guardsim_core::{replay, run_scenario, ScenarioReport};

const EXIT_DEFEAT: u8 = 1;
const EXIT_ERROR: u8 = 2;
const LOG_SCHEMA_VERSION: &str = "guardsim.log.v1";
const REPORT_FORMAT_ENV: &str = "GUARDSIM_REPORT_FORMAT";

#[derive(Parser)]
#[command(
    name = "guardsim",
    about = "Deterministic single-host attack/defense simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenario files and report the outcome.
    Run {
        /// Scenario files (JSON).
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the run length in ticks.
        #[arg(long)]
        ticks: Option<u64>,
        /// Report format; defaults to $GUARDSIM_REPORT_FORMAT or human.
        #[arg(long, value_enum)]
        report_format: Option<FormatArg>,
        /// Write the report here instead of stdout (single scenario only).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the event log as newline-delimited JSON.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Run scenario files in parallel on this many threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print the attack vector catalog with CAPEC tags.
    ListAttacks,
    /// Print the guard catalog with classifications.
    ListGuards,
    /// Print the parsed rulebook of a scenario, highest priority first.
    ListRules { scenario: PathBuf },
    /// Re-apply a recorded event log and verify it reproduces the final
    /// host state.
    Replay { log: PathBuf, scenario: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Human,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenarios,
            seed,
            ticks,
            report_format,
            out,
            log,
            jobs,
        } => cmd_run(&scenarios, seed, ticks, report_format, out, log, jobs),
        Command::ListAttacks => {
            print!("{}", render_attack_catalog());
            0
        }
        Command::ListGuards => {
            print!("{}", render_guard_catalog());
            0
        }
        Command::ListRules { scenario } => cmd_list_rules(&scenario),
        Command::Replay { log, scenario } => cmd_replay(&log, &scenario),
    };
    ExitCode::from(code)
}

fn fail(message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    EXIT_ERROR
}

fn resolve_format(arg: Option<FormatArg>) -> Result<ReportFormat, String> {
    if let Some(arg) = arg {
        return Ok(match arg {
            FormatArg::Human => ReportFormat::Human,
            FormatArg::Json => ReportFormat::Json,
        });
    }
    match std::env::var(REPORT_FORMAT_ENV) {
        Ok(value) => match value.as_str() {
            "human" => Ok(ReportFormat::Human),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!(
                "{REPORT_FORMAT_ENV} must be `human` or `json`, got `{other}`"
            )),
        },
        Err(_) => Ok(ReportFormat::Human),
    }
}

struct RunOutput {
    path: PathBuf,
    report: ScenarioReport,
}

fn run_one(
    path: &Path,
    seed: Option<u64>,
    ticks: Option<u64>,
) -> Result<RunOutput, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut file = parse_scenario(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(seed) = seed {
        file.run.seed = seed;
    }
    if let Some(ticks) = ticks {
        file.run.length = ticks;
    }
    let spec = file
        .compile()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let report = run_scenario(&spec).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(RunOutput {
        path: path.to_path_buf(),
        report,
    })
}

fn cmd_run(
    scenarios: &[PathBuf],
    seed: Option<u64>,
    ticks: Option<u64>,
    report_format: Option<FormatArg>,
    out: Option<PathBuf>,
    log: Option<PathBuf>,
    jobs: usize,
) -> u8 {
    let format = match resolve_format(report_format) {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    if scenarios.len() > 1 && (out.is_some() || log.is_some()) {
        return fail("--out and --log require a single scenario file");
    }
    let jobs = jobs.max(1);

    let results: Vec<std::sync::Mutex<Option<Result<RunOutput, String>>>> =
        (0..scenarios.len()).map(|_| std::sync::Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(scenarios.len()) {
            let next = &next;
            let results = &results;
            scope.spawn(move || loop {
                let index = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if index >= scenarios.len() {
                    break;
                }
                let outcome = run_one(&scenarios[index], seed, ticks);
                *results[index].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut code = 0u8;
    for slot in results {
        let outcome = slot
            .into_inner()
            .unwrap()
            .expect("every scenario produced a result");
        match outcome {
            Err(message) => {
                eprintln!("error: {message}");
                code = code.max(EXIT_ERROR);
            }
            Ok(run) => {
                let rendered = render_report(&run.report, format);
                if let Some(out_path) = &out {
                    if let Err(e) = std::fs::write(out_path, rendered.as_bytes()) {
                        return fail(format!("{}: {e}", out_path.display()));
                    }
                } else {
                    print!("{rendered}");
                }
                if let Some(log_path) = &log {
                    if let Err(e) = write_log_file(log_path, &run.report) {
                        return fail(format!("{}: {e}", log_path.display()));
                    }
                }
                if !run.report.posttest_all_pass() {
                    eprintln!(
                        "{}: post-test failed; a protected attribute was lost",
                        run.path.display()
                    );
                    code = code.max(EXIT_DEFEAT);
                }
            }
        }
    }
    code
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
enum LogLine {
    Header {
        schema: String,
        seed: u64,
        ticks: u64,
    },
    Entry(LogEntry),
    Final {
        state_sha256: String,
    },
}

fn write_log_file(path: &Path, report: &ScenarioReport) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = LogLine::Header {
        schema: LOG_SCHEMA_VERSION.to_string(),
        seed: report.seed,
        ticks: report.run_length,
    };
    writeln!(file, "{}", serde_json::to_string(&header)?)?;
    for entry in &report.log.entries {
        writeln!(
            file,
            "{}",
            serde_json::to_string(&LogLine::Entry(entry.clone()))?
        )?;
    }
    let trailer = LogLine::Final {
        state_sha256: report.final_state_digest.clone(),
    };
    writeln!(file, "{}", serde_json::to_string(&trailer)?)?;
    file.flush()
}

struct LogFile {
    log: EventLog,
    final_digest: String,
}

fn read_log_file(path: &Path) -> Result<LogFile, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut ticks = None;
    let mut entries = Vec::new();
    let mut final_digest = None;
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(line)
            .map_err(|e| format!("{} line {}: {e}", path.display(), number + 1))?;
        match parsed {
            LogLine::Header { schema, ticks: t, .. } => {
                if schema != LOG_SCHEMA_VERSION {
                    return Err(format!(
                        "{}: unsupported log schema {schema}",
                        path.display()
                    ));
                }
                ticks = Some(t);
            }
            LogLine::Entry(entry) => entries.push(entry),
            LogLine::Final { state_sha256 } => final_digest = Some(state_sha256),
        }
    }
    let ticks = ticks.ok_or_else(|| format!("{}: missing header line", path.display()))?;
    let final_digest =
        final_digest.ok_or_else(|| format!("{}: missing final-state line", path.display()))?;
    Ok(LogFile {
        log: EventLog { ticks, entries },
        final_digest,
    })
}

fn cmd_replay(log_path: &Path, scenario_path: &Path) -> u8 {
    let log_file = match read_log_file(log_path) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };
    let text = match std::fs::read_to_string(scenario_path) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", scenario_path.display())),
    };
    let scenario = match parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => return fail(format!("{}: {e}", scenario_path.display())),
    };
    match replay(&log_file.log, &scenario.host) {
        Ok(state) => {
            let digest = state.digest();
            if digest == log_file.final_digest {
                println!("replay ok: final state {digest}");
                0
            } else {
                eprintln!(
                    "replay divergence: reconstructed {digest}, recorded {}",
                    log_file.final_digest
                );
                EXIT_DEFEAT
            }
        }
        Err(guardsim_core::ReplayError::Spec(e)) => fail(e),
        Err(e) => {
            eprintln!("replay divergence: {e}");
            EXIT_DEFEAT
        }
    }
}

fn render_attack_catalog() -> String {
    let mut out = String::new();
    for (id, capec, summary) in VECTOR_CATALOG {
        out.push_str(&format!("{id:<34} {capec:<10} {summary}\n"));
    }
    out
}

fn render_guard_catalog() -> String {
    let mut out = String::new();
    for kind in GuardKind::ALL {
        let c = classify(kind);
        let posture = match c.posture {
            Posture::Passive => "passive",
            Posture::Active => "active",
        };
        let scope = match c.scope {
            Scope::Generic => "generic",
            Scope::Targeted => "targeted",
        };
        let tag = format!("({posture}, {scope})");
        out.push_str(&format!("{:<24} {tag:<20} {}\n", kind.name(), kind.summary()));
    }
    out
}

fn cmd_list_rules(scenario_path: &Path) -> u8 {
    let text = match std::fs::read_to_string(scenario_path) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", scenario_path.display())),
    };
    let file = match parse_scenario(&text) {
        Ok(f) => f,
        Err(e) => return fail(format!("{}: {e}", scenario_path.display())),
    };
    let spec = match file.compile() {
        Ok(s) => s,
        Err(e) => return fail(format!("{}: {e}", scenario_path.display())),
    };
    let mut order: Vec<usize> = (0..spec.rulebook.rules.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(spec.rulebook.rules[i].priority), i));
    for i in order {
        let rule = &spec.rulebook.rules[i];
        let vectors = rule
            .condition
            .vectors
            .as_ref()
            .map(|v| v.iter().cloned().collect::<Vec<_>>().join(","))
            .unwrap_or_else(|| "*".into());
        let target = rule.condition.target.as_deref().unwrap_or("*");
        println!(
            "{:<20} priority={:<4} window={:<3} count>={:<3} vectors=[{vectors}] target={target} -> activate {}",
            rule.rule_id, rule.priority, rule.condition.window, rule.condition.min_count, rule.activate
        );
    }
    0
}
