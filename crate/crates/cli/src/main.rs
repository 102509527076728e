//! `dispatch`: run the bot against a board, simulate experiments, report on
//! event logs and check them by replay.
//!
//! Exit codes: 0 success, 1 invalid input (arguments, missing files, bad
//! config), 2 runtime failure (corrupt log, inconsistent replay, I/O).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dispatch_core::board::{
    ingest, replay_text, run_cycle, Board, BoardSnapshot, EventLog, FileBoard, LogError, TeamConfig,
};
use dispatch_core::metrics::{self, compare_periods, DistributionReport, PeriodReport, ResolutionReport};
use dispatch_core::model::{EngineerId, WorkflowState};
use dispatch_core::notify::SinkSet;
use dispatch_core::sim::{run_experiment, ExperimentConfig, RunPaths};
use dispatch_core::time::{self, Timestamp};

#[derive(Parser)]
#[command(name = "dispatch", version, about = "Ticket dispatch bot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Poll a board, assign new tickets, send reminders and notifications.
    Run(RunArgs),
    /// Run a pre/post experiment on the simulator.
    Simulate(SimulateArgs),
    /// Distribution and resolution-time tables for an event log.
    Report(ReportArgs),
    /// Rebuild a board from its event log.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Team config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Board fixture (NDJSON of Created/Transitioned records).
    #[arg(long)]
    board: PathBuf,
    /// A single cycle.
    #[arg(long, conflicts_with = "loop", required_unless_present = "loop")]
    once: bool,
    /// Cycle every `cycle_period_minutes` until interrupted.
    #[arg(long = "loop")]
    r#loop: bool,
    /// Directory for the event log and snapshot. Defaults to the config's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Clock for a `--once` cycle (RFC 3339).
    #[arg(long, value_parser = parse_ts, conflicts_with = "loop")]
    now: Option<Timestamp>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed of both runs.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
    /// Team config; supplies the team id and the roster (engineers with zero
    /// tickets count).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Period boundary (RFC 3339), by resolution time. Repeatable.
    #[arg(long = "split", value_parser = parse_ts)]
    splits: Vec<Timestamp>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Compare against the `<board>.snapshot.json` written next to the log.
    #[arg(long = "assert")]
    check: bool,
}

fn parse_ts(s: &str) -> Result<Timestamp, String> {
    time::parse_iso8601(s).map(time::truncate).map_err(|e| format!("`{s}`: {e}"))
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

type Outcome = Result<(), Failure>;

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Missing or unreadable logs are invalid input; malformed ones are runtime
/// failures that name the line.
fn log_failure(e: LogError) -> Failure {
    match e {
        LogError::Io { .. } => invalid(e),
        other => match other.line() {
            Some(line) => Failure::Runtime(format!("line {line}: {other}")),
            None => runtime(other),
        },
    }
}

fn require_file(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!("{}: no such file", path.display())))
    }
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn snapshot_path(dir: &Path, board_id: &str) -> PathBuf {
    RunPaths::new(dir, board_id).snapshot
}

fn cmd_run(args: RunArgs) -> Outcome {
    require_file(&args.config)?;
    require_file(&args.board)?;
    let config = TeamConfig::load(&args.config).map_err(invalid)?;
    let mut board = FileBoard::open(&args.board, &config.board_id).map_err(log_failure)?;
    let out = args.out.clone().unwrap_or_else(|| config.base_dir.clone());
    fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let mut log = EventLog::open(EventLog::path_in(&out, &config.board_id)).map_err(log_failure)?;
    let mut snapshot = log.replay(&config.board_id).map_err(runtime)?;
    let mut sinks = SinkSet::from_binding(&config.binding, &config.base_dir);

    loop {
        let now = args.now.unwrap_or_else(time::now);
        let mut events = Vec::new();
        for change in board.fetch_changes(&snapshot).map_err(runtime)? {
            events.extend(ingest(&mut snapshot, &config, change).map_err(runtime)?);
        }
        let (cycle_events, report) = run_cycle(&mut snapshot, &config, now, &mut sinks).map_err(runtime)?;
        events.extend(cycle_events);
        for d in &report.assigned {
            board.write_assignment(d).map_err(runtime)?;
        }
        log.append(&events).map_err(log_failure)?;
        let json = serde_json::to_string_pretty(&snapshot).map_err(runtime)?;
        write(&snapshot_path(&out, &config.board_id), &(json + "\n"))?;
        println!("{report}");
        if args.once {
            return Ok(());
        }
        std::thread::sleep(config.cycle_period.to_std().unwrap_or_default());
    }
}

fn cmd_simulate(args: SimulateArgs) -> Outcome {
    require_file(&args.config)?;
    let exp = ExperimentConfig::load(&args.config).map_err(invalid)?;
    let exp = match args.seed {
        Some(seed) => exp.with_seed(seed),
        None => exp,
    };
    let (pre, post, cmp) = run_experiment(&exp, Some(&args.out)).map_err(runtime)?;
    println!("{} ({}): {} events", pre.label, pre.policy, pre.events().len());
    println!("{} ({}): {} events", post.label, post.policy, post.events().len());
    println!();
    print!("{}", cmp.render_table());
    println!("\nwritten to {}", args.out.display());
    Ok(())
}

/// The board id comes from the first record, or the file name for an empty
/// log.
fn read_log(path: &Path) -> Result<(String, BoardSnapshot), Failure> {
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let fallback = name.strip_suffix(".events.ndjson").unwrap_or(name);
    let snapshot = replay_text(fallback, &text).map_err(log_failure)?;
    Ok((snapshot.board_id.clone(), snapshot))
}

fn cmd_report(args: ReportArgs) -> Outcome {
    let config = match &args.config {
        Some(path) => {
            require_file(path)?;
            Some(TeamConfig::load(path).map_err(invalid)?)
        }
        None => None,
    };
    let (board, snapshot) = read_log(&args.log)?;
    let (team, roster): (String, Vec<EngineerId>) = match &config {
        Some(c) => (c.team_id.clone(), c.roster.ids().cloned().collect()),
        None => (board.clone(), Vec::new()),
    };

    let mut reports = Vec::new();
    for (label, tickets) in metrics::split_periods(snapshot.tickets.values(), &args.splits) {
        match DistributionReport::build(&team, &label, tickets.iter().copied(), &roster) {
            Ok(distribution) => reports.push(PeriodReport {
                distribution,
                resolution: ResolutionReport::build(&team, &label, tickets.iter().copied()),
            }),
            Err(_) => eprintln!("{label}: no resolved tickets, skipped"),
        }
    }
    match args.format {
        Format::Table => {
            print!("{}", metrics::period_table(&reports));
            if let [pre, post] = &reports[..] {
                println!();
                print!("{}", compare_periods(pre.clone(), post.clone()).render_table());
            }
        }
        Format::Csv => {
            let d: Vec<_> = reports.iter().map(|r| &r.distribution).collect();
            let r: Vec<_> = reports.iter().map(|r| &r.resolution).collect();
            print!("{}", metrics::distribution_csv(&d));
            println!();
            print!("{}", metrics::resolution_csv(&r));
        }
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Outcome {
    let (board, snapshot) = read_log(&args.log)?;
    println!("board {board}: {} events, {} tickets", snapshot.watermark, snapshot.tickets.len());
    for state in WorkflowState::ALL {
        let n = snapshot.tickets.values().filter(|t| t.state() == state).count();
        if n > 0 {
            println!("  {state:<15} {n}");
        }
    }
    println!("  reminders sent  {}", snapshot.ledger.len());
    println!("  messages        {} ({} pending)", snapshot.outbox.len(), snapshot.pending.len());
    if !args.check {
        return Ok(());
    }

    for t in snapshot.tickets.values() {
        t.check_invariants().map_err(|e| Failure::Runtime(format!("{}: {e}", t.id())))?;
    }
    let dir = args.log.parent().unwrap_or(Path::new("."));
    let path = snapshot_path(dir, &board);
    if !path.is_file() {
        println!("consistent (no recorded snapshot at {})", path.display());
        return Ok(());
    }
    let text = fs::read_to_string(&path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    let live: BoardSnapshot =
        serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    if live.watermark > snapshot.watermark {
        println!("consistent prefix: log ends at seq {} of {}", snapshot.watermark, live.watermark);
    } else if live.watermark < snapshot.watermark {
        println!("consistent: log runs past the recorded snapshot (seq {} > {})", snapshot.watermark, live.watermark);
    } else if live == snapshot {
        println!("consistent: replay matches {}", path.display());
    } else {
        return Err(Failure::Runtime(format!("replay differs from {}", path.display())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Invalid(m) => eprintln!("error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
