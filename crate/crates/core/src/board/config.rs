//! Team configuration file (TOML).
//!
//! ```toml
//! team_id = "team1"
//! board_id = "T1"
//! cycle_period_minutes = 15        # optional
//! policy = "RoundRobin"            # RoundRobin | Expertise | LeastOpen | Manual
//! max_retries = 3                  # optional
//! reminders = true                 # optional
//!
//! [[engineers]]
//! id = "e1"
//! joined_at = "2024-01-01"         # optional
//! separated_at = "2024-06-01"      # optional, first day off the team
//! leave = [{ from = "2024-02-05", to = "2024-02-09" }]
//! skills = ["network"]
//!
//! [thresholds]                     # every key optional
//! sla_warning_fraction = 0.2
//! reminder_period_hours = 24
//! high_priority_factor = 0.5
//! stuck_hours = { Blocked = 48 }
//!
//! [expertise.labels]
//! net = "network"
//!
//! [channels]
//! review = "ChatA"
//! ChatA = { dir = "channels" }
//! Email = { webhook = "http://localhost:9000/hook" }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{AssignmentPolicy, DateRange, EngineerRoster, ExpertiseProfile, RosterEntry, RosterError};
use crate::model::{EngineerId, WorkflowState};
use crate::notify::{Channel, ChannelBinding, Endpoint, DEFAULT_MAX_RETRIES};
use crate::reminder::ThresholdPolicy;

pub const DEFAULT_CYCLE_MINUTES: u32 = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamConfigFile {
    pub team_id: String,
    pub board_id: String,
    #[serde(default = "default_cycle")]
    pub cycle_period_minutes: u32,
    #[serde(default)]
    pub policy: AssignmentPolicy,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_true")]
    pub reminders: bool,
    pub engineers: Vec<EngineerConfig>,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub expertise: ExpertiseConfig,
    pub channels: ChannelsConfig,
}

fn default_cycle() -> u32 {
    DEFAULT_CYCLE_MINUTES
}
fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineerConfig {
    pub id: EngineerId,
    #[serde(default)]
    pub joined_at: Option<NaiveDate>,
    #[serde(default)]
    pub separated_at: Option<NaiveDate>,
    #[serde(default)]
    pub leave: Vec<DateRange>,
    #[serde(default)]
    pub skills: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    #[serde(default)]
    pub stuck_hours: BTreeMap<WorkflowState, f64>,
    pub sla_warning_fraction: Option<f64>,
    pub reminder_period_hours: Option<f64>,
    pub high_priority_factor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertiseConfig {
    /// Ticket label to skill tag.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsConfig {
    pub review: Channel,
    #[serde(rename = "ChatA", default, skip_serializing_if = "Option::is_none")]
    pub chat_a: Option<Endpoint>,
    #[serde(rename = "ChatB", default, skip_serializing_if = "Option::is_none")]
    pub chat_b: Option<Endpoint>,
    #[serde(rename = "Email", default, skip_serializing_if = "Option::is_none")]
    pub email: Option<Endpoint>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.to_string(),
    }
}

/// A validated team configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamConfig {
    pub team_id: String,
    pub board_id: String,
    pub cycle_period: Duration,
    pub policy: AssignmentPolicy,
    pub max_retries: u32,
    pub reminders: bool,
    pub roster: EngineerRoster,
    pub thresholds: ThresholdPolicy,
    pub expertise: ExpertiseProfile,
    pub binding: ChannelBinding,
    /// Relative channel directories resolve against this.
    pub base_dir: PathBuf,
}

impl TeamConfig {
    pub fn load(path: &Path) -> Result<TeamConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: TeamConfigFile = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        TeamConfig::from_file(file, base)
    }

    pub fn from_file(file: TeamConfigFile, base_dir: PathBuf) -> Result<TeamConfig, ConfigError> {
        if file.team_id.trim().is_empty() {
            return Err(invalid("team_id", "must not be empty"));
        }
        if file.board_id.trim().is_empty() {
            return Err(invalid("board_id", "must not be empty"));
        }
        if file.cycle_period_minutes == 0 {
            return Err(invalid("cycle_period_minutes", "must be > 0"));
        }
        if file.max_retries == 0 {
            return Err(invalid("max_retries", "must be > 0"));
        }
        if file.engineers.is_empty() {
            return Err(invalid("engineers", "at least one engineer is required"));
        }

        let mut roster = EngineerRoster::new(&file.team_id);
        let mut expertise = ExpertiseProfile {
            label_skills: file.expertise.labels.clone(),
            ..Default::default()
        };
        for (i, e) in file.engineers.iter().enumerate() {
            let entry = RosterEntry {
                id: e.id.clone(),
                joined_at: e.joined_at,
                separated_at: e.separated_at,
                unavailable: e.leave.clone(),
            };
            roster.push(entry).map_err(|err: RosterError| invalid(format!("engineers[{i}]"), err))?;
            if !e.skills.is_empty() {
                expertise.skills.insert(e.id.clone(), e.skills.iter().cloned().collect::<BTreeSet<_>>());
            }
        }

        let mut thresholds = ThresholdPolicy::with_defaults(&file.team_id);
        let t = &file.thresholds;
        thresholds.stuck_hours.extend(t.stuck_hours.iter().map(|(s, h)| (*s, *h)));
        if let Some(f) = t.sla_warning_fraction {
            thresholds.sla_warning_fraction = f;
        }
        if let Some(h) = t.reminder_period_hours {
            thresholds.reminder_period_hours = h;
        }
        if let Some(f) = t.high_priority_factor {
            thresholds.high_priority_factor = f;
        }
        thresholds.validate().map_err(|e| invalid("thresholds", e))?;

        let c = &file.channels;
        let channels: BTreeMap<Channel, Endpoint> = [
            (Channel::ChatA, &c.chat_a),
            (Channel::ChatB, &c.chat_b),
            (Channel::Email, &c.email),
        ]
        .into_iter()
        .filter_map(|(ch, ep)| ep.clone().map(|ep| (ch, ep)))
        .collect();
        let binding = ChannelBinding {
            team_id: file.team_id.clone(),
            channels,
            review_channel: c.review,
        };
        binding.validate().map_err(|e| invalid("channels", e))?;

        Ok(TeamConfig {
            team_id: file.team_id,
            board_id: file.board_id,
            cycle_period: Duration::minutes(file.cycle_period_minutes as i64),
            policy: file.policy,
            max_retries: file.max_retries,
            reminders: file.reminders,
            roster,
            thresholds,
            expertise,
            binding,
            base_dir,
        })
    }

    /// Always-available roster, default thresholds, all channels into `dir`.
    pub fn simple(team_id: &str, board_id: &str, engineers: &[&str], dir: impl AsRef<Path>) -> TeamConfig {
        TeamConfig {
            team_id: team_id.into(),
            board_id: board_id.into(),
            cycle_period: Duration::minutes(DEFAULT_CYCLE_MINUTES as i64),
            policy: AssignmentPolicy::RoundRobin,
            max_retries: DEFAULT_MAX_RETRIES,
            reminders: true,
            roster: EngineerRoster::from_ids(team_id, engineers.iter().copied()).expect("unique ids"),
            thresholds: ThresholdPolicy::with_defaults(team_id),
            expertise: ExpertiseProfile::default(),
            binding: ChannelBinding::all_to_dir(team_id, dir),
            base_dir: PathBuf::new(),
        }
    }
}
