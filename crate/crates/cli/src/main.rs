mod args;

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use clap::{Args, Parser, Subcommand, ValueEnum};

use sguard_core::address::CellAddress;
use sguard_core::calc::recalculate;
use sguard_core::engine::{cycle_with, effective_config, Session, DEFAULT_DEBOUNCE};
use sguard_core::findings::{
    merge_flag, Finding, FindingFlag, FlagStatus, InspectionReport, Severity, RULE_VALIDATION,
};
use sguard_core::inspect::{inspect, sort_findings, StaticRuleConfig, STATIC_RULES};
use sguard_core::io::{import_csv, read_workbook, write_workbook, CsvOptions};
use sguard_core::scenario::{
    add_scenario, check_scenario, mark_roles, run_scenario, run_scenarios, scenario_findings, validate_scenario, Role,
    TestScenario,
};
use sguard_core::validation::evaluate_rules;
use sguard_server::{AppState, ServerOptions};

/// Inspects spreadsheet workbooks for likely faults.
#[derive(Parser)]
#[command(name = "sguard", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run static and validation rules once.
    Inspect {
        file: PathBuf,
        /// Comma-separated rule ids to run instead of the configured set.
        #[arg(long, value_delimiter = ',')]
        rules: Option<Vec<String>>,
        #[command(flatten)]
        out: Output,
    },
    /// Run stored test scenarios.
    Test {
        file: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[command(flatten)]
        out: Output,
    },
    /// Scenarios, static rules and validation rules together.
    Check {
        file: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Re-inspect whenever the file changes and print what changed.
    Watch {
        file: PathBuf,
        /// Also serve the HTTP API on this port; edits made through it are
        /// saved back to the file.
        #[arg(long)]
        serve: Option<u16>,
        #[arg(long, default_value_t = DEFAULT_DEBOUNCE.as_millis() as u64)]
        debounce_ms: u64,
        #[arg(long, hide = true)]
        exit_after: Option<usize>,
        #[command(flatten)]
        out: Output,
    },
    /// Author test scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Mark cells as inputs, intermediates or outputs.
    Mark {
        file: PathBuf,
        #[arg(long = "input", value_name = "ADDR")]
        inputs: Vec<String>,
        #[arg(long = "mid", value_name = "ADDR")]
        intermediates: Vec<String>,
        #[arg(long = "output", value_name = "ADDR")]
        outputs: Vec<String>,
    },
    /// Flag a finding so later reports leave it out.
    Flag {
        file: PathBuf,
        key: String,
        /// Hide only while the workbook generation is below this value.
        #[arg(long, value_name = "GENERATION")]
        hold_off_until: Option<u64>,
        #[arg(long, default_value = "")]
        note: String,
        #[arg(long, default_value = "")]
        author: String,
    },
    /// Copy CSV data into a sheet.
    Import {
        file: PathBuf,
        csv: PathBuf,
        /// Top-left target cell, e.g. Orders!A2.
        #[arg(long)]
        at: String,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
        /// Keep numeric-looking fields as text.
        #[arg(long)]
        no_numbers: bool,
    },
    /// Check the file format and guardian data for consistency.
    Validate {
        file: PathBuf,
        /// Also report scenarios that leave feeding cells unset or outputs
        /// unchecked.
        #[arg(long)]
        completeness: bool,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    Add {
        file: PathBuf,
        #[arg(long)]
        name: String,
        /// NAME=VALUE
        #[arg(long = "input")]
        inputs: Vec<String>,
        /// NAME=VAL, NAME=VAL±TOL, NAME=[LO..HI] or NAME=text
        #[arg(long = "expect")]
        expects: Vec<String>,
        #[arg(long)]
        allow_formula_override: bool,
    },
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("sguard: {}", msg.lines().next().unwrap_or(""));
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Res<u8> {
    match command {
        Command::Inspect { file, rules, out } => {
            let wb = read_workbook(&file)?;
            let fallback = fallback_config()?;
            let mut config = effective_config(&wb, &fallback).clone();
            let mut validation = true;
            if let Some(ids) = rules {
                validation = false;
                config.enabled.clear();
                for id in ids {
                    if id == RULE_VALIDATION {
                        validation = true;
                    } else if STATIC_RULES.contains(&id.as_str()) {
                        config.enabled.insert(id);
                    } else {
                        return Err(Failure(format!("unknown rule id {id:?}")));
                    }
                }
            }
            let report = cycle_with(&wb, None, || {
                let mut raw = inspect(&wb, &config);
                if validation && !wb.guardian().validation_rules.is_empty() {
                    let state = recalculate(&wb, &BTreeMap::new());
                    raw.extend(evaluate_rules(&wb, &state, &wb.guardian().validation_rules));
                }
                sort_findings(&wb, &mut raw);
                raw
            });
            emit(&report, out.format)
        }
        Command::Test { file, scenario, out } => {
            let wb = read_workbook(&file)?;
            let chosen = match &scenario {
                Some(name) => Some(
                    wb.guardian()
                        .scenario(name)
                        .cloned()
                        .ok_or_else(|| Failure(format!("unknown scenario {name:?}")))?,
                ),
                None => None,
            };
            let report = cycle_with(&wb, None, || {
                let mut raw = match &chosen {
                    Some(s) => scenario_findings(&wb, s),
                    None => run_scenarios(&wb),
                };
                sort_findings(&wb, &mut raw);
                raw
            });
            emit(&report, out.format)
        }
        Command::Check { file, out } => {
            let wb = read_workbook(&file)?;
            let fallback = fallback_config()?;
            let report = sguard_core::engine::run_cycle(&wb, effective_config(&wb, &fallback), None);
            emit(&report, out.format)
        }
        Command::Watch { file, serve, debounce_ms, exit_after, out } => {
            watch(&file, serve, Duration::from_millis(debounce_ms), exit_after, out.format)
        }
        Command::Scenario(ScenarioCommand::Add { file, name, inputs, expects, allow_formula_override }) => {
            let mut wb = read_workbook(&file)?;
            let mut s = TestScenario::new(name);
            for arg in &inputs {
                let (name, value) = args::parse_input(arg)?;
                s.inputs.insert(name, value);
            }
            for arg in &expects {
                s.expectations.push(args::parse_expect(arg)?);
            }
            s.allow_formula_override = allow_formula_override;
            add_scenario(&mut wb, s.clone())?;
            write_workbook(&file, &wb)?;
            let verdict = validate_scenario(&wb, &s)?;
            for issue in &verdict.issues {
                println!("warning: {issue}");
            }
            let result = run_scenario(&wb, &s)?;
            println!("added scenario {:?}: {}", s.name, if result.passed() { "passes" } else { "fails" });
            for f in result.findings() {
                println!("  {}", f.message);
            }
            Ok(0)
        }
        Command::Mark { file, inputs, intermediates, outputs } => {
            let mut wb = read_workbook(&file)?;
            let mut markings = Vec::new();
            for (list, role) in [(inputs, Role::Input), (intermediates, Role::Intermediate), (outputs, Role::Output)] {
                for a in list {
                    markings.push((cell(&a)?, role));
                }
            }
            let names = mark_roles(&mut wb, &markings)?;
            write_workbook(&file, &wb)?;
            for ((addr, role), name) in markings.iter().zip(&names) {
                println!("{name}\t{role}\t{addr}");
            }
            Ok(0)
        }
        Command::Flag { file, key, hold_off_until, note, author } => {
            let mut wb = read_workbook(&file)?;
            if key.len() != 16 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(Failure(format!("not a finding key: {key:?}")));
            }
            let status = match hold_off_until {
                Some(until_generation) => FlagStatus::HoldOff { until_generation },
                None => FlagStatus::FalsePositive,
            };
            let flag = FindingFlag::new(key.to_ascii_lowercase(), status, note, author);
            wb.update_guardian(|g| merge_flag(&mut g.flags, flag));
            write_workbook(&file, &wb)?;
            Ok(0)
        }
        Command::Import { file, csv, at, delimiter, no_numbers } => {
            let mut wb = read_workbook(&file)?;
            let bytes = std::fs::read(&csv).map_err(|e| Failure(format!("{}: {e}", csv.display())))?;
            if !delimiter.is_ascii() {
                return Err(Failure("delimiter must be a single ASCII character".into()));
            }
            let options = CsvOptions { delimiter: delimiter as u8, numeric_detection: !no_numbers };
            import_csv(&mut wb, &cell(&at)?, &bytes, options)?;
            write_workbook(&file, &wb)?;
            Ok(0)
        }
        Command::Validate { file, completeness } => validate(&file, completeness),
    }
}

fn cell(text: &str) -> Res<CellAddress> {
    text.parse::<CellAddress>()
        .ok()
        .filter(CellAddress::in_bounds)
        .ok_or_else(|| Failure(format!("not a sheet-qualified cell address: {text:?}")))
}

/// Rule configuration for workbooks that carry none: `SG_CONFIG` names a
/// JSON file, otherwise the built-in defaults.
fn fallback_config() -> Res<StaticRuleConfig> {
    let Some(path) = std::env::var_os("SG_CONFIG") else { return Ok(StaticRuleConfig::default()) };
    let path = PathBuf::from(path);
    let bytes = std::fs::read(&path).map_err(|e| Failure(format!("SG_CONFIG {}: {e}", path.display())))?;
    let config: StaticRuleConfig =
        serde_json::from_slice(&bytes).map_err(|e| Failure(format!("SG_CONFIG {}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn finding_line(f: &Finding) -> String {
    let locs: Vec<String> = f.locations.iter().map(ToString::to_string).collect();
    format!("{}  {}  {}  {}  [{}]", locs.join(", "), f.severity, f.rule_id, f.message, f.key)
}

fn summary(report: &InspectionReport) -> String {
    let faults = report.findings.iter().filter(|f| f.severity == Severity::FaultIndicator).count();
    let imperfections = report.findings.len() - faults;
    format!(
        "{} findings ({faults} fault indicators, {imperfections} imperfections), {} suppressed, generation {}",
        report.findings.len(),
        report.suppressed_count,
        report.generation
    )
}

/// Prints a report and maps it to the exit code: 1 when anything is left.
fn emit(report: &InspectionReport, format: Format) -> Res<u8> {
    let mut stdout = std::io::stdout().lock();
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut stdout, report)?;
            writeln!(stdout)?;
        }
        Format::Text => {
            for f in &report.findings {
                writeln!(stdout, "{}", finding_line(f))?;
            }
            writeln!(stdout, "{}", summary(report))?;
        }
    }
    Ok(u8::from(!report.findings.is_empty()))
}

fn validate(file: &Path, completeness: bool) -> Res<u8> {
    let wb = read_workbook(file)?;
    let mut problems = Vec::new();
    for (name, target) in wb.names() {
        if target.is_dangling() {
            problems.push(format!("name {name}: marked cell was deleted"));
        }
    }
    for rule in &wb.guardian().validation_rules {
        if let Some(reason) = &rule.broken {
            problems.push(format!("validation rule {}: {reason}", rule.id));
        }
    }
    for s in &wb.guardian().scenarios {
        if let Err(e) = check_scenario(&wb, s) {
            problems.push(format!("scenario {:?}: {e}", s.name));
            continue;
        }
        if !completeness {
            continue;
        }
        match validate_scenario(&wb, s) {
            Ok(v) => problems.extend(v.issues.iter().map(|i| format!("scenario {:?}: {i}", s.name))),
            Err(e) => problems.push(format!("scenario {:?}: {e}", s.name)),
        }
    }
    for p in &problems {
        println!("{p}");
    }
    println!(
        "{}: {} sheets, {} scenarios, {} validation rules, {} problems",
        file.display(),
        wb.sheets().len(),
        wb.guardian().scenarios.len(),
        wb.guardian().validation_rules.len(),
        problems.len()
    );
    Ok(u8::from(!problems.is_empty()))
}

fn modified(path: &Path) -> Option<SystemTime> {
    std::fs::metadata(path).and_then(|m| m.modified()).ok()
}

fn watch(file: &Path, port: Option<u16>, debounce: Duration, exit_after: Option<usize>, format: Format) -> Res<u8> {
    let wb = read_workbook(file)?;
    let fallback = fallback_config()?;
    let session = Session::with_engine(wb, debounce, fallback.clone());
    let options = ServerOptions { save_path: port.map(|_| file.to_path_buf()), fallback, ..Default::default() };
    let state = AppState::new(session, options);

    // Keeps the server runtime alive for the rest of the watch.
    let _runtime = match port {
        Some(port) => {
            let listener = std::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], port)))?;
            listener.set_nonblocking(true)?;
            let addr = listener.local_addr()?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            let served = Arc::clone(&state);
            runtime.spawn(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                if let Err(e) = sguard_server::serve_listener(served, listener).await {
                    eprintln!("sguard: server stopped: {e}");
                }
            });
            eprintln!("serving http://{addr}/api");
            Some(runtime)
        }
        None => None,
    };

    let mut seen_mtime = modified(file);
    let mut last: Option<u64> = None;
    let mut printed = 0usize;
    loop {
        if let Some(report) = state.mailbox().wait_newer(last, Duration::from_millis(200)) {
            last = Some(report.generation);
            print_update(&report, format)?;
            printed += 1;
            if exit_after.is_some_and(|n| printed >= n) {
                return Ok(0);
            }
        }
        let now = modified(file);
        if now != seen_mtime {
            seen_mtime = now;
            match read_workbook(file) {
                Ok(wb) => {
                    state.reload(wb);
                }
                Err(e) => eprintln!("sguard: ignoring unreadable file: {e}"),
            }
        }
    }
}

fn print_update(report: &InspectionReport, format: Format) -> Res<()> {
    let mut stdout = std::io::stdout().lock();
    match format {
        Format::Json => {
            serde_json::to_writer(&mut stdout, report)?;
            writeln!(stdout)?;
        }
        Format::Text => {
            let d = &report.diff;
            writeln!(
                stdout,
                "generation {}: {} new, {} resolved, {} persisting",
                report.generation,
                d.new.len(),
                d.resolved.len(),
                d.persisting.len()
            )?;
            for f in report.findings.iter().filter(|f| d.new.contains(&f.key)) {
                writeln!(stdout, "  + {}", finding_line(f))?;
            }
            for key in &d.resolved {
                writeln!(stdout, "  - [{key}]")?;
            }
        }
    }
    stdout.flush()?;
    Ok(())
}
