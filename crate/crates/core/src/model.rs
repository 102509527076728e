//! Tickets, workflow states and the transition state machine.
//!
//! A [`Ticket`] only changes through [`apply_transition`], [`reopen`] and
//! [`Ticket::with_assignee`]; every function here is pure and returns a new
//! value.

use std::borrow::Borrow;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{add_business_days, Timestamp};

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.pad(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(TicketId);
string_id!(ActorId);

/// Engineers are actors that can hold tickets.
pub type EngineerId = ActorId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WorkflowState {
    Backlog,
    ReadyToStart,
    WorkInProgress,
    Blocked,
    ReadyForReview,
    Done,
}

impl WorkflowState {
    pub const ALL: [WorkflowState; 6] = [
        WorkflowState::Backlog,
        WorkflowState::ReadyToStart,
        WorkflowState::WorkInProgress,
        WorkflowState::Blocked,
        WorkflowState::ReadyForReview,
        WorkflowState::Done,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkflowState::Backlog => "Backlog",
            WorkflowState::ReadyToStart => "ReadyToStart",
            WorkflowState::WorkInProgress => "WorkInProgress",
            WorkflowState::Blocked => "Blocked",
            WorkflowState::ReadyForReview => "ReadyForReview",
            WorkflowState::Done => "Done",
        }
    }

    /// States that need an engineer attached before they can be entered.
    pub fn requires_assignee(self) -> bool {
        matches!(self, WorkflowState::WorkInProgress | WorkflowState::ReadyForReview)
    }
}

impl fmt::Display for WorkflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for WorkflowState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkflowState::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown workflow state `{s}`"))
    }
}

/// The legal successors of `state`.
pub fn valid_transitions(state: WorkflowState) -> BTreeSet<WorkflowState> {
    use WorkflowState::*;
    let next: &[WorkflowState] = match state {
        Backlog => &[ReadyToStart, WorkInProgress, Done],
        ReadyToStart => &[WorkInProgress, Done],
        WorkInProgress => &[Blocked, ReadyForReview, Done],
        Blocked => &[WorkInProgress, Done],
        ReadyForReview => &[WorkInProgress, Done],
        Done => &[Backlog, WorkInProgress],
    };
    next.iter().copied().collect()
}

pub fn is_valid_transition(from: WorkflowState, to: WorkflowState) -> bool {
    valid_transitions(from).contains(&to)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum Priority {
    Low,
    #[default]
    Medium,
    High,
}

impl Priority {
    /// Resolution window used when the board supplies no explicit deadline.
    pub fn default_sla_business_days(self) -> u32 {
        match self {
            Priority::High => 3,
            Priority::Medium => 10,
            Priority::Low => 20,
        }
    }
}

/// One entry of a ticket's state history. `from` is `None` for the creation
/// record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub at: Timestamp,
    pub from: Option<WorkflowState>,
    pub to: WorkflowState,
    pub actor: ActorId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    id: TicketId,
    board_id: String,
    reporter: ActorId,
    assignee: Option<EngineerId>,
    state: WorkflowState,
    created_at: Timestamp,
    state_entered_at: Timestamp,
    sla_deadline: Timestamp,
    priority: Priority,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    labels: Vec<String>,
    history: Vec<HistoryEntry>,
    resolved_at: Option<Timestamp>,
}

/// Everything a reporter supplies when raising a ticket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewTicket {
    pub id: TicketId,
    pub board_id: String,
    pub reporter: ActorId,
    pub created_at: Timestamp,
    #[serde(default)]
    pub priority: Priority,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sla_deadline: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

impl Ticket {
    /// A fresh ticket in Backlog. Without an explicit deadline the SLA window
    /// is keyed off priority in business days.
    pub fn new(init: NewTicket) -> Ticket {
        let deadline = init.sla_deadline.unwrap_or_else(|| {
            add_business_days(init.created_at, init.priority.default_sla_business_days())
        });
        Ticket {
            history: vec![HistoryEntry {
                at: init.created_at,
                from: None,
                to: WorkflowState::Backlog,
                actor: init.reporter.clone(),
            }],
            id: init.id,
            board_id: init.board_id,
            reporter: init.reporter,
            assignee: None,
            state: WorkflowState::Backlog,
            created_at: init.created_at,
            state_entered_at: init.created_at,
            sla_deadline: deadline,
            priority: init.priority,
            labels: init.labels,
            resolved_at: None,
        }
    }

    pub fn id(&self) -> &TicketId {
        &self.id
    }
    pub fn board_id(&self) -> &str {
        &self.board_id
    }
    pub fn reporter(&self) -> &ActorId {
        &self.reporter
    }
    pub fn assignee(&self) -> Option<&EngineerId> {
        self.assignee.as_ref()
    }
    pub fn state(&self) -> WorkflowState {
        self.state
    }
    pub fn created_at(&self) -> Timestamp {
        self.created_at
    }
    pub fn state_entered_at(&self) -> Timestamp {
        self.state_entered_at
    }
    pub fn sla_deadline(&self) -> Timestamp {
        self.sla_deadline
    }
    pub fn priority(&self) -> Priority {
        self.priority
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }
    pub fn resolved_at(&self) -> Option<Timestamp> {
        self.resolved_at
    }
    pub fn is_done(&self) -> bool {
        self.state == WorkflowState::Done
    }

    /// Timestamp of the most recent history entry.
    pub fn last_change(&self) -> Timestamp {
        self.history.last().map_or(self.created_at, |h| h.at)
    }

    /// Assignment is not a workflow transition; it leaves history untouched.
    pub fn with_assignee(&self, engineer: Option<EngineerId>) -> Ticket {
        Ticket {
            assignee: engineer,
            ..self.clone()
        }
    }

    /// Checks the structural invariants; used by replay audits and tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let first = self.history.first().ok_or("empty history")?;
        if first.from.is_some() || first.to != WorkflowState::Backlog || first.at != self.created_at {
            return Err("history must open with the creation record".into());
        }
        if self.history.windows(2).any(|w| w[0].at >= w[1].at) {
            return Err("history timestamps not strictly increasing".into());
        }
        let last = self.history.last().expect("nonempty");
        if last.to != self.state || last.at != self.state_entered_at {
            return Err("state does not match last history entry".into());
        }
        if self.history.windows(2).any(|w| Some(w[0].to) != w[1].from) {
            return Err("history entries do not chain".into());
        }
        match (self.state, self.resolved_at) {
            (WorkflowState::Done, Some(at)) if at == self.state_entered_at => Ok(()),
            (WorkflowState::Done, _) => Err("Done ticket without matching resolved_at".into()),
            (_, Some(_)) => Err("open ticket carries resolved_at".into()),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionReason {
    IllegalEdge,
    MissingAssignee,
    StaleTimestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("ticket {ticket}: cannot move {from} -> {to}: {reason:?}")]
pub struct TransitionError {
    pub ticket: TicketId,
    pub from: WorkflowState,
    pub to: WorkflowState,
    pub reason: TransitionReason,
}

/// Moves `ticket` to `to` at `at`.
///
/// Entering Backlog detaches the assignee (the ticket is back in the
/// unassigned queue). Entering Done records `resolved_at`; leaving Done
/// clears it.
pub fn apply_transition(
    ticket: &Ticket,
    to: WorkflowState,
    at: Timestamp,
    actor: &ActorId,
) -> Result<Ticket, TransitionError> {
    let fail = |reason| TransitionError {
        ticket: ticket.id.clone(),
        from: ticket.state,
        to,
        reason,
    };
    if !is_valid_transition(ticket.state, to) {
        return Err(fail(TransitionReason::IllegalEdge));
    }
    if at <= ticket.last_change() {
        return Err(fail(TransitionReason::StaleTimestamp));
    }
    if to.requires_assignee() && ticket.assignee.is_none() {
        return Err(fail(TransitionReason::MissingAssignee));
    }

    let mut next = ticket.clone();
    next.history.push(HistoryEntry {
        at,
        from: Some(ticket.state),
        to,
        actor: actor.clone(),
    });
    next.state = to;
    next.state_entered_at = at;
    next.resolved_at = (to == WorkflowState::Done).then_some(at);
    if to == WorkflowState::Backlog {
        next.assignee = None;
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReopenMode {
    ToBacklog,
    /// Straight back to work with the previous engineer.
    ToSameEngineer,
}

impl ReopenMode {
    pub fn target(self) -> WorkflowState {
        match self {
            ReopenMode::ToBacklog => WorkflowState::Backlog,
            ReopenMode::ToSameEngineer => WorkflowState::WorkInProgress,
        }
    }
}

pub fn reopen(
    ticket: &Ticket,
    mode: ReopenMode,
    at: Timestamp,
    actor: &ActorId,
) -> Result<Ticket, TransitionError> {
    if ticket.state != WorkflowState::Done {
        return Err(TransitionError {
            ticket: ticket.id.clone(),
            from: ticket.state,
            to: mode.target(),
            reason: TransitionReason::IllegalEdge,
        });
    }
    apply_transition(ticket, mode.target(), at, actor)
}
