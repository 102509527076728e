use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::{EventBody, TicketEvent};
use crate::assignment::AssignmentCursor;
use crate::model::{apply_transition, EngineerId, NewTicket, Ticket, TicketId, TransitionError};
use crate::notify::{DeliveryState, OutboundMessage};
use crate::reminder::{ReminderKind, ReminderLedger};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("expected seq {expected}, found {found}")]
    SeqGap { expected: u64, found: u64 },
    #[error("event {seq} belongs to board `{found}`, not `{expected}`")]
    BoardMismatch { seq: u64, expected: String, found: String },
    #[error("event {seq}: ticket {ticket} already exists")]
    DuplicateTicket { seq: u64, ticket: TicketId },
    #[error("event {seq}: unknown ticket {ticket}")]
    UnknownTicket { seq: u64, ticket: TicketId },
    #[error("event {seq}: {source}")]
    Transition {
        seq: u64,
        #[source]
        source: TransitionError,
    },
    #[error("event {seq}: {reason}")]
    Inconsistent { seq: u64, reason: String },
    #[error("event {seq}: reminder ({ticket}, {kind}, #{index}) already sent")]
    DuplicateReminder { seq: u64, ticket: TicketId, kind: ReminderKind, index: u32 },
}

/// Board state as a fold over its event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardSnapshot {
    pub board_id: String,
    /// Seq of the last folded event (0 for an empty log).
    pub watermark: u64,
    pub tickets: BTreeMap<TicketId, Ticket>,
    pub cursor: Option<AssignmentCursor>,
    pub ledger: ReminderLedger,
    pub outbox: IndexMap<String, OutboundMessage>,
    /// Outbox positions still awaiting (re)delivery.
    pub pending: BTreeSet<usize>,
    /// Policy-driven assignments per engineer.
    pub assigned_counts: BTreeMap<EngineerId, u64>,
}

impl BoardSnapshot {
    pub fn new(board_id: impl Into<String>) -> Self {
        BoardSnapshot {
            board_id: board_id.into(),
            watermark: 0,
            tickets: BTreeMap::new(),
            cursor: None,
            ledger: ReminderLedger::default(),
            outbox: IndexMap::new(),
            pending: BTreeSet::new(),
            assigned_counts: BTreeMap::new(),
        }
    }

    pub fn ticket(&self, id: &TicketId) -> Option<&Ticket> {
        self.tickets.get(id)
    }

    /// Stamps the next seq onto `body`, folds it and hands the event back for
    /// appending to the log. The snapshot is unchanged on error.
    pub fn record(&mut self, ts: Timestamp, body: EventBody) -> Result<TicketEvent, ReplayError> {
        let event = TicketEvent {
            seq: self.watermark + 1,
            ts,
            board: self.board_id.clone(),
            body,
        };
        self.apply(&event)?;
        Ok(event)
    }

    /// Folds one event.
    pub fn apply(&mut self, event: &TicketEvent) -> Result<(), ReplayError> {
        let seq = event.seq;
        if seq != self.watermark + 1 {
            return Err(ReplayError::SeqGap {
                expected: self.watermark + 1,
                found: seq,
            });
        }
        if event.board != self.board_id {
            return Err(ReplayError::BoardMismatch {
                seq,
                expected: self.board_id.clone(),
                found: event.board.clone(),
            });
        }
        let inconsistent = |reason: String| ReplayError::Inconsistent { seq, reason };

        match &event.body {
            EventBody::Created { ticket, reporter, priority, sla_deadline, labels } => {
                if self.tickets.contains_key(ticket) {
                    return Err(ReplayError::DuplicateTicket { seq, ticket: ticket.clone() });
                }
                let t = Ticket::new(NewTicket {
                    id: ticket.clone(),
                    board_id: self.board_id.clone(),
                    reporter: reporter.clone(),
                    created_at: event.ts,
                    priority: *priority,
                    sla_deadline: *sla_deadline,
                    labels: labels.clone(),
                });
                self.tickets.insert(ticket.clone(), t);
            }
            EventBody::Transitioned { ticket, from, to, actor } => {
                let current = self.existing(seq, ticket)?;
                if current.state() != *from {
                    return Err(inconsistent(format!("{ticket} is {}, not {from}", current.state())));
                }
                let next = apply_transition(current, *to, event.ts, actor)
                    .map_err(|source| ReplayError::Transition { seq, source })?;
                self.tickets.insert(ticket.clone(), next);
                self.ledger.reset_stuck(ticket);
            }
            EventBody::Assigned { ticket, engineer, cursor_after, .. } => {
                let current = self.existing(seq, ticket)?;
                if current.is_done() {
                    return Err(inconsistent(format!("{ticket} is Done")));
                }
                let next = current.with_assignee(Some(engineer.clone()));
                self.tickets.insert(ticket.clone(), next);
                if let Some(c) = cursor_after {
                    self.cursor = Some(c.clone());
                }
                *self.assigned_counts.entry(engineer.clone()).or_default() += 1;
            }
            EventBody::Reassigned { ticket, from, engineer } => {
                let current = self.existing(seq, ticket)?;
                if current.is_done() {
                    return Err(inconsistent(format!("{ticket} is Done")));
                }
                if current.assignee() != from.as_ref() {
                    return Err(inconsistent(format!("{ticket} is not held by {from:?}")));
                }
                let next = current.with_assignee(Some(engineer.clone()));
                self.tickets.insert(ticket.clone(), next);
            }
            EventBody::ReminderSent { ticket, reminder, index, .. } => {
                self.existing(seq, ticket)?;
                if self.ledger.contains(ticket, *reminder, *index) {
                    return Err(ReplayError::DuplicateReminder { seq, ticket: ticket.clone(), kind: *reminder, index: *index });
                }
                self.ledger.insert(ticket.clone(), *reminder, *index);
            }
            EventBody::MessageQueued { message } => {
                if self.outbox.contains_key(&message.id) {
                    return Err(inconsistent(format!("message {} queued twice", message.id)));
                }
                if message.delivery != DeliveryState::Pending {
                    return Err(inconsistent(format!("message {} queued as {:?}", message.id, message.delivery)));
                }
                let (idx, _) = self.outbox.insert_full(message.id.clone(), message.clone());
                self.pending.insert(idx);
            }
            EventBody::MessageDelivered { msg_id } => {
                let idx = self.deliverable(seq, msg_id)?;
                self.outbox[idx].delivery = DeliveryState::Delivered { at: event.ts };
                self.pending.remove(&idx);
            }
            EventBody::DeliveryFailed { msg_id, retries, terminal, .. } => {
                let idx = self.deliverable(seq, msg_id)?;
                let msg = &mut self.outbox[idx];
                if *retries != msg.delivery.retries() + 1 {
                    return Err(inconsistent(format!("message {msg_id} retry count jumps to {retries}")));
                }
                msg.delivery = DeliveryState::Failed { retries: *retries, terminal: *terminal };
                if *terminal {
                    self.pending.remove(&idx);
                }
            }
        }
        self.watermark = seq;
        Ok(())
    }

    fn existing(&self, seq: u64, ticket: &TicketId) -> Result<&Ticket, ReplayError> {
        self.tickets
            .get(ticket)
            .ok_or_else(|| ReplayError::UnknownTicket { seq, ticket: ticket.clone() })
    }

    fn deliverable(&self, seq: u64, msg_id: &str) -> Result<usize, ReplayError> {
        match self.outbox.get_full(msg_id) {
            Some((idx, _, m)) if m.delivery.is_deliverable() => Ok(idx),
            Some(_) => Err(ReplayError::Inconsistent { seq, reason: format!("message {msg_id} already settled") }),
            None => Err(ReplayError::Inconsistent { seq, reason: format!("unknown message {msg_id}") }),
        }
    }

    /// Messages awaiting delivery, in queue order.
    pub fn pending_messages(&self) -> impl Iterator<Item = &OutboundMessage> {
        self.pending.iter().map(|&i| &self.outbox[i])
    }

    /// Non-Done tickets held per engineer.
    pub fn open_counts(&self) -> BTreeMap<EngineerId, u64> {
        let mut counts = BTreeMap::new();
        for t in self.tickets.values().filter(|t| !t.is_done()) {
            if let Some(e) = t.assignee() {
                *counts.entry(e.clone()).or_default() += 1;
            }
        }
        counts
    }
}

/// Folds `events` from an empty board.
pub fn replay<'a>(
    board_id: impl Into<String>,
    events: impl IntoIterator<Item = &'a TicketEvent>,
) -> Result<BoardSnapshot, ReplayError> {
    let mut snapshot = BoardSnapshot::new(board_id);
    for e in events {
        snapshot.apply(e)?;
    }
    Ok(snapshot)
}
