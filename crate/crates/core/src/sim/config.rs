use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{AssignmentPolicy, DateRange};
use crate::model::EngineerId;

#[derive(Debug, Error)]
pub enum SimConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("invalid experiment config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaveSpec {
    pub engineer: EngineerId,
    pub from: NaiveDate,
    pub to: NaiveDate,
}

/// One simulated team run. Engineers are `e01`, `e02`, ...; the first
/// `gamers` of them hold tickets open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Period label in reports.
    pub label: String,
    pub team_id: String,
    pub board_id: String,
    pub seed: u64,
    /// First calendar day; arrivals start on the first business day from here.
    pub start: NaiveDate,
    /// Business days with arrivals. The clock stops at the end of the last one.
    pub horizon_days: u32,
    /// Mean tickets per business day.
    pub arrival_rate: f64,
    pub engineers: u32,
    pub reporters: u32,
    pub leaves: Vec<LeaveSpec>,
    pub policy: AssignmentPolicy,
    /// Per-engineer median service hours are drawn uniformly from this range.
    pub service_median_hours: [f64; 2],
    pub service_sigma: f64,
    /// Chance that an assigned ticket is handed to a colleague before work starts.
    pub reassign_prob: f64,
    pub reassign_delay_max_hours: f64,
    pub gamers: u32,
    /// Share of a gamer's tickets that are never moved to Done.
    pub gamer_fraction: f64,
    /// Zipf exponent of the manual assignment model.
    pub manual_skew: f64,
    pub manual_delay_max_days: f64,
    /// Reminders are evaluated by the bot; a stuck-state reminder on a
    /// blocked ticket prompts the reporter to answer.
    pub reminders: bool,
    pub block_prob: f64,
    pub block_median_hours: f64,
    pub block_sigma: f64,
    pub reporter_response_hours: f64,
    /// Low, Medium, High.
    pub priority_weights: [f64; 3],
    pub cycle_period_minutes: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            label: "sim".into(),
            team_id: "team1".into(),
            board_id: "SIM".into(),
            seed: 1,
            start: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            horizon_days: 60,
            arrival_rate: 30.0,
            engineers: 14,
            reporters: 40,
            leaves: Vec::new(),
            policy: AssignmentPolicy::RoundRobin,
            service_median_hours: [3.0, 8.0],
            service_sigma: 0.6,
            reassign_prob: 0.05,
            reassign_delay_max_hours: 4.0,
            gamers: 0,
            gamer_fraction: 0.0,
            manual_skew: 1.0,
            manual_delay_max_days: 3.0,
            reminders: true,
            block_prob: 0.15,
            block_median_hours: 96.0,
            block_sigma: 0.5,
            reporter_response_hours: 4.0,
            priority_weights: [0.3, 0.5, 0.2],
            cycle_period_minutes: 15,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimConfigError {
    SimConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

fn fraction(field: &'static str, v: f64) -> Result<(), SimConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} is outside [0, 1]")))
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), SimConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must be positive")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<(), SimConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must not be negative")))
    }
}

impl SimConfig {
    pub fn engineer_ids(&self) -> Vec<EngineerId> {
        let width = self.engineers.to_string().len().max(2);
        (1..=self.engineers).map(|i| EngineerId::from(format!("e{i:0width$}"))).collect()
    }

    pub fn validate(&self) -> Result<(), SimConfigError> {
        positive("arrival_rate", self.arrival_rate)?;
        if self.horizon_days == 0 {
            return Err(invalid("horizon_days", "must be at least 1"));
        }
        if self.engineers == 0 {
            return Err(invalid("engineers", "must be at least 1"));
        }
        if self.reporters == 0 {
            return Err(invalid("reporters", "must be at least 1"));
        }
        if self.cycle_period_minutes == 0 {
            return Err(invalid("cycle_period_minutes", "must be at least 1"));
        }
        let [lo, hi] = self.service_median_hours;
        positive("service_median_hours", lo)?;
        if hi < lo || !hi.is_finite() {
            return Err(invalid("service_median_hours", format!("[{lo}, {hi}] is not a range")));
        }
        non_negative("service_sigma", self.service_sigma)?;
        fraction("reassign_prob", self.reassign_prob)?;
        non_negative("reassign_delay_max_hours", self.reassign_delay_max_hours)?;
        if self.gamers > self.engineers {
            return Err(invalid("gamers", format!("{} gamers among {} engineers", self.gamers, self.engineers)));
        }
        fraction("gamer_fraction", self.gamer_fraction)?;
        non_negative("manual_skew", self.manual_skew)?;
        non_negative("manual_delay_max_days", self.manual_delay_max_days)?;
        fraction("block_prob", self.block_prob)?;
        positive("block_median_hours", self.block_median_hours)?;
        non_negative("block_sigma", self.block_sigma)?;
        non_negative("reporter_response_hours", self.reporter_response_hours)?;
        for w in self.priority_weights {
            non_negative("priority_weights", w)?;
        }
        if self.priority_weights.iter().sum::<f64>() <= 0.0 {
            return Err(invalid("priority_weights", "all weights are zero"));
        }
        let ids = self.engineer_ids();
        for leave in &self.leaves {
            if !ids.contains(&leave.engineer) {
                return Err(invalid("leaves", format!("unknown engineer {}", leave.engineer)));
            }
            if leave.to < leave.from {
                return Err(invalid("leaves", format!("{} leave ends before it starts", leave.engineer)));
            }
        }
        Ok(())
    }

    pub fn leave_ranges(&self) -> impl Iterator<Item = (&EngineerId, DateRange)> {
        self.leaves.iter().map(|l| (&l.engineer, DateRange { from: l.from, to: l.to }))
    }
}

/// A pre/post pair. Top-level keys are shared; `[pre]` and `[post]` override
/// them. Without overrides the pre side is manual assignment with no
/// reminders and the post side is round-robin with reminders.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub pre: SimConfig,
    pub post: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_toml("").expect("defaults are valid")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimConfigError> {
        let mut shared: toml::Table = toml::from_str(text)?;
        let side = |shared: &mut toml::Table, key: &str| -> Result<toml::Table, SimConfigError> {
            match shared.remove(key) {
                None => Ok(toml::Table::new()),
                Some(toml::Value::Table(t)) => Ok(t),
                Some(_) => Err(invalid(if key == "pre" { "pre" } else { "post" }, "must be a table")),
            }
        };
        let pre_over = side(&mut shared, "pre")?;
        let post_over = side(&mut shared, "post")?;
        let build = |defaults: [(&str, toml::Value); 4], over: toml::Table| -> Result<SimConfig, SimConfigError> {
            let mut t = toml::Table::new();
            for (k, v) in defaults {
                t.insert(k.into(), v);
            }
            t.extend(shared.clone());
            t.extend(over);
            let cfg: SimConfig = toml::Value::Table(t).try_into()?;
            cfg.validate()?;
            Ok(cfg)
        };
        let pre = build(
            [
                ("label", "PreBot".into()),
                ("board_id", "PRE".into()),
                ("policy", "Manual".into()),
                ("reminders", false.into()),
            ],
            pre_over,
        )?;
        let post = build(
            [
                ("label", "PostBot".into()),
                ("board_id", "POST".into()),
                ("policy", "RoundRobin".into()),
                ("reminders", true.into()),
            ],
            post_over,
        )?;
        if pre.board_id == post.board_id {
            return Err(invalid("board_id", "pre and post runs need distinct boards"));
        }
        Ok(ExperimentConfig { pre, post })
    }

    pub fn load(path: &Path) -> Result<Self, SimConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.pre.seed = seed;
        self.post.seed = seed;
        self
    }
}
