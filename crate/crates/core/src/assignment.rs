//! Assignment policies: round-robin over the available pool (the production
//! policy), expertise matching and least-open-count (kept as baselines), and
//! manual reassignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EngineerId, Ticket, TicketId};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum AssignmentPolicy {
    #[default]
    RoundRobin,
    Expertise,
    LeastOpen,
    Manual,
}

impl AssignmentPolicy {
    pub fn name(self) -> &'static str {
        match self {
            AssignmentPolicy::RoundRobin => "RoundRobin",
            AssignmentPolicy::Expertise => "Expertise",
            AssignmentPolicy::LeastOpen => "LeastOpen",
            AssignmentPolicy::Manual => "Manual",
        }
    }
}

impl fmt::Display for AssignmentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// Inclusive range of calendar dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.from <= date && date <= self.to
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: EngineerId,
    /// First day on the team.
    pub joined_at: Option<NaiveDate>,
    /// First day no longer on the team.
    pub separated_at: Option<NaiveDate>,
    pub unavailable: Vec<DateRange>,
}

impl RosterEntry {
    pub fn new(id: impl Into<EngineerId>) -> Self {
        RosterEntry {
            id: id.into(),
            joined_at: None,
            separated_at: None,
            unavailable: Vec::new(),
        }
    }

    pub fn is_available(&self, on: NaiveDate) -> bool {
        self.joined_at.is_none_or(|j| j <= on)
            && self.separated_at.is_none_or(|s| on < s)
            && !self.unavailable.iter().any(|r| r.contains(on))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RosterError {
    #[error("engineer `{0}` listed twice")]
    DuplicateEngineer(EngineerId),
    #[error("engineer `{0}` separates before joining")]
    SeparationBeforeJoin(EngineerId),
    #[error("leave for `{0}` ends before it starts")]
    InvertedLeave(EngineerId),
}

/// A team's engineers in stable insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineerRoster {
    team_id: String,
    engineers: Vec<RosterEntry>,
}

impl EngineerRoster {
    pub fn new(team_id: impl Into<String>) -> Self {
        EngineerRoster {
            team_id: team_id.into(),
            engineers: Vec::new(),
        }
    }

    /// Roster of always-available engineers.
    pub fn from_ids<I, S>(team_id: impl Into<String>, ids: I) -> Result<Self, RosterError>
    where
        I: IntoIterator<Item = S>,
        S: Into<EngineerId>,
    {
        let mut roster = EngineerRoster::new(team_id);
        for id in ids {
            roster.push(RosterEntry::new(id))?;
        }
        Ok(roster)
    }

    /// Appends an engineer at the end of roster order.
    pub fn push(&mut self, entry: RosterEntry) -> Result<(), RosterError> {
        if self.contains(&entry.id) {
            return Err(RosterError::DuplicateEngineer(entry.id));
        }
        if let (Some(j), Some(s)) = (entry.joined_at, entry.separated_at) {
            if s < j {
                return Err(RosterError::SeparationBeforeJoin(entry.id));
            }
        }
        if entry.unavailable.iter().any(|r| r.to < r.from) {
            return Err(RosterError::InvertedLeave(entry.id));
        }
        self.engineers.push(entry);
        Ok(())
    }

    pub fn team_id(&self) -> &str {
        &self.team_id
    }
    pub fn len(&self) -> usize {
        self.engineers.len()
    }
    pub fn is_empty(&self) -> bool {
        self.engineers.is_empty()
    }
    pub fn entries(&self) -> &[RosterEntry] {
        &self.engineers
    }
    pub fn ids(&self) -> impl Iterator<Item = &EngineerId> {
        self.engineers.iter().map(|e| &e.id)
    }
    pub fn contains(&self, id: &EngineerId) -> bool {
        self.engineers.iter().any(|e| &e.id == id)
    }
    pub fn entry_mut(&mut self, id: &EngineerId) -> Option<&mut RosterEntry> {
        self.engineers.iter_mut().find(|e| &e.id == id)
    }

    pub fn is_available(&self, id: &EngineerId, on: NaiveDate) -> bool {
        self.engineers.iter().any(|e| &e.id == id && e.is_available(on))
    }
}

/// Engineers available on `on`, in roster order.
pub fn available_pool(roster: &EngineerRoster, on: NaiveDate) -> Vec<EngineerId> {
    roster
        .engineers
        .iter()
        .filter(|e| e.is_available(on))
        .map(|e| e.id.clone())
        .collect()
}

/// Where the next round-robin scan starts; persists across bot cycles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentCursor {
    pub team_id: String,
    pub position: usize,
}

impl AssignmentCursor {
    pub fn new(team_id: impl Into<String>) -> Self {
        AssignmentCursor {
            team_id: team_id.into(),
            position: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentDecision {
    pub ticket: TicketId,
    pub engineer: EngineerId,
    pub policy: AssignmentPolicy,
    pub decided_at: Timestamp,
    pub cursor_after: Option<AssignmentCursor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssignError {
    #[error("no engineer of team `{team}` is available on {on}")]
    EmptyPool { team: String, on: NaiveDate },
    #[error("engineer `{0}` is not on the roster")]
    UnknownEngineer(EngineerId),
    #[error("ticket {0} is already Done")]
    TicketAlreadyDone(TicketId),
}

/// Index of the first available engineer at or after `start`, scanning the
/// roster cyclically and visiting each slot once.
fn cyclic_scan(roster: &EngineerRoster, start: usize, on: NaiveDate) -> Option<usize> {
    let n = roster.len();
    (0..n)
        .map(|k| (start + k) % n)
        .find(|&i| roster.engineers[i].is_available(on))
}

pub fn round_robin_assign(
    roster: &EngineerRoster,
    cursor: &AssignmentCursor,
    ticket: &Ticket,
    at: Timestamp,
) -> Result<(AssignmentDecision, AssignmentCursor), AssignError> {
    let on = at.date_naive();
    let n = roster.len();
    let start = if n == 0 { 0 } else { cursor.position % n };
    let chosen = cyclic_scan(roster, start, on).ok_or_else(|| AssignError::EmptyPool {
        team: roster.team_id.clone(),
        on,
    })?;
    let next = AssignmentCursor {
        team_id: roster.team_id.clone(),
        position: (chosen + 1) % n,
    };
    let decision = AssignmentDecision {
        ticket: ticket.id().clone(),
        engineer: roster.engineers[chosen].id.clone(),
        policy: AssignmentPolicy::RoundRobin,
        decided_at: at,
        cursor_after: Some(next.clone()),
    };
    Ok((decision, next))
}

/// Engineer skills plus a label-to-skill mapping for tickets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertiseProfile {
    pub skills: BTreeMap<EngineerId, BTreeSet<String>>,
    pub label_skills: BTreeMap<String, String>,
}

impl ExpertiseProfile {
    /// The first ticket label that maps to a skill.
    pub fn skill_for(&self, ticket: &Ticket) -> Option<&str> {
        ticket
            .labels()
            .iter()
            .find_map(|l| self.label_skills.get(l))
            .map(String::as_str)
    }

    pub fn validate(&self, roster: &EngineerRoster) -> Result<(), AssignError> {
        match self.skills.keys().find(|e| !roster.contains(e)) {
            Some(e) => Err(AssignError::UnknownEngineer(e.clone())),
            None => Ok(()),
        }
    }
}

/// Prefers an available expert with the fewest tickets assigned so far;
/// falls back to the round-robin candidate (advancing the cursor) so a
/// ticket is never stranded.
pub fn expertise_assign(
    profile: &ExpertiseProfile,
    roster: &EngineerRoster,
    cursor: &AssignmentCursor,
    assigned_so_far: &BTreeMap<EngineerId, u64>,
    ticket: &Ticket,
    at: Timestamp,
) -> Result<(AssignmentDecision, Option<AssignmentCursor>), AssignError> {
    let on = at.date_naive();
    let expert = profile.skill_for(ticket).and_then(|skill| {
        roster
            .engineers
            .iter()
            .filter(|e| e.is_available(on))
            .filter(|e| profile.skills.get(&e.id).is_some_and(|s| s.contains(skill)))
            // min_by_key keeps the first minimum, i.e. roster order
            .min_by_key(|e| assigned_so_far.get(&e.id).copied().unwrap_or(0))
    });
    match expert {
        Some(e) => Ok((
            AssignmentDecision {
                ticket: ticket.id().clone(),
                engineer: e.id.clone(),
                policy: AssignmentPolicy::Expertise,
                decided_at: at,
                cursor_after: None,
            },
            None,
        )),
        None => {
            let (decision, next) = round_robin_assign(roster, cursor, ticket, at)?;
            Ok((decision, Some(next)))
        }
    }
}

/// Picks the available engineer holding the fewest open tickets; ties go to
/// roster order. Engineers missing from `open_counts` hold zero.
pub fn least_open_assign(
    open_counts: &BTreeMap<EngineerId, u64>,
    roster: &EngineerRoster,
    ticket: &Ticket,
    at: Timestamp,
) -> Result<AssignmentDecision, AssignError> {
    let on = at.date_naive();
    let chosen = roster
        .engineers
        .iter()
        .filter(|e| e.is_available(on))
        .min_by_key(|e| open_counts.get(&e.id).copied().unwrap_or(0))
        .ok_or_else(|| AssignError::EmptyPool {
            team: roster.team_id.clone(),
            on,
        })?;
    Ok(AssignmentDecision {
        ticket: ticket.id().clone(),
        engineer: chosen.id.clone(),
        policy: AssignmentPolicy::LeastOpen,
        decided_at: at,
        cursor_after: None,
    })
}

/// Hand-off between engineers outside of any policy. The cursor is not
/// touched.
pub fn reassign(
    ticket: &Ticket,
    roster: &EngineerRoster,
    to: &EngineerId,
    at: Timestamp,
) -> Result<AssignmentDecision, AssignError> {
    if ticket.is_done() {
        return Err(AssignError::TicketAlreadyDone(ticket.id().clone()));
    }
    if !roster.contains(to) {
        return Err(AssignError::UnknownEngineer(to.clone()));
    }
    Ok(AssignmentDecision {
        ticket: ticket.id().clone(),
        engineer: to.clone(),
        policy: AssignmentPolicy::Manual,
        decided_at: at,
        cursor_after: None,
    })
}
