//! `pol`: run scenarios, replay recorded RSSI through filters, and check runs.
//!
//! Exit codes: 0 success, 1 scenario or trace validation error, 2 runtime
//! failure (I/O), 3 a `check` that did not pass.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use pol_core::filters::{DEFAULT_COOLDOWN, DEFAULT_THRESHOLD_DB, DEFAULT_WARMUP};
use pol_core::protocol::ProtocolParams;
use pol_core::sim::trace::{parse_rssi_csv, parse_rssi_jsonl};
use pol_core::sim::{self, RssiFormat, RunMetrics, Scenario};

pub mod filters;

use filters::{FilterReport, KnownMove, Replay, Sweep};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{failed} of {total} checks failed")]
    CheckFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::CheckFailed { .. } => 3,
        }
    }
}

impl From<pol_core::Error> for CliError {
    fn from(e: pol_core::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn io_err(what: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{what} {}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "pol", version, about = "Proof-of-location sensor network simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write rssi.csv (or rssi.jsonl), events.jsonl and metrics.json.
    Run(RunArgs),
    /// Replay a recorded RSSI trace through smoothing filters and trigger thresholds.
    Filters(FiltersArgs),
    /// Run a scenario and report its pass/fail checks.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct ScenarioSource {
    /// Scenario JSON file.
    #[arg(long, value_name = "PATH")]
    pub scenario: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_name = "NAME", value_parser = PossibleValuesParser::new(sim::BUILTIN_NAMES))]
    pub builtin: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for RssiFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => RssiFormat::Csv,
            Format::Jsonl => RssiFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Encoding of the RSSI trace.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct FiltersArgs {
    /// RSSI trace written by `pol run` (.csv or .jsonl).
    #[arg(long, value_name = "PATH")]
    pub trace: PathBuf,
    /// Comma-separated filter names.
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "median-kalman")]
    pub filter: Vec<String>,
    /// JSON object of per-filter parameter overrides, e.g. '{"median":{"window":3}}'.
    #[arg(long, value_name = "JSON")]
    pub params: Option<String>,
    /// Trigger thresholds in dB as LO:HI:STEP (default: a single 6 dB row).
    #[arg(long, value_name = "LO:HI:STEP")]
    pub threshold_sweep: Option<Sweep>,
    /// Ticks after a trigger fires before it may fire again.
    #[arg(long, value_name = "TICKS", default_value_t = DEFAULT_COOLDOWN)]
    pub cooldown: u64,
    /// Samples a link must see before its trigger is armed.
    #[arg(long, value_name = "N", default_value_t = DEFAULT_WARMUP)]
    pub warmup: usize,
    /// metrics.json naming the movements and attacks (default: next to the trace, if present).
    #[arg(long, value_name = "PATH")]
    pub metrics: Option<PathBuf>,
    /// Where filter_report.json and filtered.csv go (default: the trace's directory).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    /// Overrides the scenario's seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = write!(err, "{}", e.render());
            return 1;
        }
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Filters(a) => cmd_filters(a, out),
        Command::Check(a) => cmd_check(a, out),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn load_scenario(source: &ScenarioSource, seed: Option<u64>) -> Result<Scenario, CliError> {
    let mut sc = match (&source.scenario, &source.builtin) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("cannot read scenario {}: {e}", path.display())))?;
            Scenario::from_json(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => sim::builtin_scenario(name)?,
        (None, None) => return Err(CliError::Validation("one of --scenario or --builtin is required".into())),
    };
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    sc.validate()?;
    Ok(sc)
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let sc = load_scenario(&args.source, args.seed)?;
    let res = sim::run(&sc)?;
    let format = RssiFormat::from(args.format);
    res.trace
        .write_dir(&args.out, format, &res.metrics.to_json())
        .map_err(|e| io_err("cannot write traces to", &args.out, e))?;
    let m = &res.metrics;
    let lines = [
        format!("scenario\t{}", sc.name),
        format!("seed\t{}", sc.seed),
        format!("rssi\t{}", args.out.join(format.file_name()).display()),
        format!("events\t{}", args.out.join("events.jsonl").display()),
        format!("metrics\t{}", args.out.join("metrics.json").display()),
        format!("bft_total\t{}", m.total_bft()),
        format!("alerts_total\t{}", m.total_alerts()),
    ];
    print_lines(out, &lines)
}

fn print_lines(out: &mut dyn Write, lines: &[String]) -> Result<(), CliError> {
    for l in lines {
        writeln!(out, "{l}").map_err(|e| CliError::Runtime(format!("stdout: {e}")))?;
    }
    Ok(())
}

pub fn cmd_check(args: &CheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let sc = load_scenario(&args.source, args.seed)?;
    let res = sim::run(&sc)?;
    let checks = sim::check_run(&sc, &res);
    let mut lines: Vec<String> =
        checks.iter().map(|c| format!("{}\t{}\t{}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail)).collect();
    lines.push(format!("bft_total\t{}", res.metrics.total_bft()));
    lines.push(format!("alerts_total\t{}", res.metrics.total_alerts()));
    print_lines(out, &lines)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(CliError::CheckFailed { failed, total: checks.len() });
    }
    Ok(())
}

fn read_trace(path: &Path) -> Result<Vec<sim::RssiRow>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read trace {}: {e}", path.display())))?;
    let rows =
        if path.extension().is_some_and(|e| e == "jsonl") { parse_rssi_jsonl(&text) } else { parse_rssi_csv(&text) }
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(CliError::Validation(format!("{}: no rows", path.display())));
    }
    Ok(rows)
}

fn read_metrics(args: &FiltersArgs) -> Result<Option<RunMetrics>, CliError> {
    let path = match &args.metrics {
        Some(p) => p.clone(),
        None => {
            let sibling = args.trace.with_file_name("metrics.json");
            if !sibling.is_file() {
                return Ok(None);
            }
            sibling
        }
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Validation(format!("cannot read metrics {}: {e}", path.display())))?;
    RunMetrics::from_json(&text).map(Some).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn cmd_filters(args: &FiltersArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = args
        .params
        .as_deref()
        .map(serde_json::from_str::<serde_json::Value>)
        .transpose()
        .map_err(|e| CliError::Validation(format!("--params: {e}")))?;
    let specs = filters::resolve_specs(&args.filter, params.as_ref()).map_err(CliError::Validation)?;
    let thresholds = args.threshold_sweep.unwrap_or(Sweep::single(DEFAULT_THRESHOLD_DB)).values();
    let rows = read_trace(&args.trace)?;
    let metrics = read_metrics(args)?;
    let movements: Vec<KnownMove> =
        metrics.iter().flat_map(|m| &m.movements).map(|m| KnownMove { node: m.node.clone(), at: m.at }).collect();
    let attacks: Vec<u64> = metrics.iter().flat_map(|m| &m.attacks).map(|a| a.at).collect();
    let replay = Replay {
        rows: &rows,
        movements: &movements,
        attacks: &attacks,
        cooldown: args.cooldown,
        warmup: args.warmup,
        settle: ProtocolParams::default().bft_window,
    };
    let (results, columns) = replay.evaluate(&specs, &thresholds)?;
    let links =
        rows.iter().map(|r| (r.receiver.as_str(), r.sender.as_str())).collect::<std::collections::BTreeSet<_>>().len();
    let report = FilterReport {
        trace: args.trace.display().to_string(),
        rows: rows.len(),
        links,
        cooldown: args.cooldown,
        warmup: args.warmup,
        settle: replay.settle,
        filters: specs.clone(),
        movements,
        attacks,
        results,
    };

    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args.trace.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir).map_err(|e| io_err("cannot create", &dir, e))?;
    let report_path = dir.join("filter_report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&report_path, json + "\n").map_err(|e| io_err("cannot write", &report_path, e))?;
    let csv_path = dir.join("filtered.csv");
    fs::write(&csv_path, filters::filtered_csv(&rows, &specs, &columns))
        .map_err(|e| io_err("cannot write", &csv_path, e))?;

    let mut lines = vec!["filter\tthreshold\tfires\tstatic_false_positives\tmax_latency".to_string()];
    for r in &report.results {
        let latency = if r.detections.is_empty() {
            "-".to_string()
        } else {
            r.detections
                .iter()
                .try_fold(0, |acc: u64, d| d.latency.map(|l| acc.max(l)))
                .map_or("miss".to_string(), |l| l.to_string())
        };
        lines.push(format!("{}\t{}\t{}\t{}\t{latency}", r.filter, r.threshold, r.fires, r.static_false_positives));
    }
    lines.push(format!("report\t{}", report_path.display()));
    lines.push(format!("filtered\t{}", csv_path.display()));
    print_lines(out, &lines)
}
