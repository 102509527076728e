//! Discrete-event simulation of a team on a virtual clock: reporters file
//! tickets, engineers work FIFO queues, and the bot (or, before it, a
//! manager) assigns them.

pub mod config;
pub mod engine;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::assignment::AssignmentPolicy;
use crate::board::{EventBody, EventLog, TicketEvent};
use crate::metrics::{self, compare_periods, ComparisonReport, DistributionReport, PeriodReport, ResolutionReport};
use crate::model::EngineerId;
use crate::time::Timestamp;

pub use config::{ExperimentConfig, LeaveSpec, SimConfig, SimConfigError};
pub use engine::{
    generate_ticket_stream, manual_assignment_model, manual_pick, simulate, team_config, zipf_weights, SimError, SimRun,
};

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub label: String,
    pub policy: AssignmentPolicy,
    pub run: SimRun,
    pub distribution: DistributionReport,
    pub resolution: ResolutionReport,
}

impl ExperimentResult {
    pub fn from_run(run: SimRun) -> Result<Self, SimError> {
        let cfg = &run.config;
        let roster = cfg.engineer_ids();
        let tickets = run.snapshot.tickets.values();
        let distribution = DistributionReport::build(&cfg.team_id, &cfg.label, tickets.clone(), &roster)
            .expect("simulated rosters are non-empty");
        let resolution = ResolutionReport::build(&cfg.team_id, &cfg.label, tickets);
        Ok(ExperimentResult {
            label: cfg.label.clone(),
            policy: cfg.policy,
            distribution,
            resolution,
            run,
        })
    }

    pub fn period_report(&self) -> PeriodReport {
        PeriodReport {
            distribution: self.distribution.clone(),
            resolution: self.resolution.clone(),
        }
    }

    pub fn events(&self) -> &[TicketEvent] {
        &self.run.events
    }

    /// Bot assignments per engineer made at or after `from`.
    pub fn bot_assignments_since(&self, from: Timestamp) -> std::collections::BTreeMap<EngineerId, u64> {
        let mut counts: std::collections::BTreeMap<EngineerId, u64> =
            self.run.config.engineer_ids().into_iter().map(|e| (e, 0)).collect();
        for e in self.run.events.iter().filter(|e| e.ts >= from) {
            if let EventBody::Assigned { engineer, policy, .. } = &e.body {
                if *policy != AssignmentPolicy::Manual {
                    *counts.entry(engineer.clone()).or_default() += 1;
                }
            }
        }
        counts
    }
}

/// Where a run's files land inside an output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunPaths {
    pub log: PathBuf,
    pub snapshot: PathBuf,
    pub channels: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path, board_id: &str) -> Self {
        RunPaths {
            log: EventLog::path_in(out, board_id),
            snapshot: out.join(format!("{board_id}.snapshot.json")),
            channels: out.join(format!("{board_id}.channels")),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), SimError> {
    fs::write(path, text).map_err(io(path))
}

/// Runs one side, writing its log, snapshot and channel files under `out`.
pub fn run_to_dir(cfg: &SimConfig, out: Option<&Path>) -> Result<ExperimentResult, SimError> {
    let Some(out) = out else {
        return ExperimentResult::from_run(simulate(cfg, None)?);
    };
    let paths = RunPaths::new(out, &cfg.board_id);
    fs::create_dir_all(out).map_err(io(out))?;
    if paths.channels.exists() {
        fs::remove_dir_all(&paths.channels).map_err(io(&paths.channels))?;
    }
    let run = simulate(cfg, Some(&paths.channels))?;
    let mut log = EventLog::in_memory();
    log.append(&run.events).expect("simulated events are contiguous");
    write(&paths.log, &log.to_ndjson())?;
    let snapshot = serde_json::to_string_pretty(&run.snapshot).expect("snapshot serializes");
    write(&paths.snapshot, &(snapshot + "\n"))?;
    ExperimentResult::from_run(run)
}

/// Runs both sides and compares them. With `out`, also writes
/// `distribution.csv`, `resolution.csv` and `comparison.txt`.
pub fn run_experiment(
    exp: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(ExperimentResult, ExperimentResult, ComparisonReport), SimError> {
    let pre = run_to_dir(&exp.pre, out)?;
    let post = run_to_dir(&exp.post, out)?;
    let cmp = compare_periods(pre.period_report(), post.period_report());
    if let Some(out) = out {
        write(&out.join("distribution.csv"), &metrics::distribution_csv(&[&pre.distribution, &post.distribution]))?;
        write(&out.join("resolution.csv"), &metrics::resolution_csv(&[&pre.resolution, &post.resolution]))?;
        write(&out.join("comparison.txt"), &cmp.render_table())?;
    }
    Ok((pre, post, cmp))
}
