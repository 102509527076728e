//! The bot's periodic pass: assign new tickets, evaluate reminders, flush the
//! outbox. Also the ingestion path for changes made on the board by people.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::config::TeamConfig;
use super::event::{EventBody, TicketEvent};
use super::snapshot::{BoardSnapshot, ReplayError};
use crate::assignment::{
    expertise_assign, least_open_assign, reassign, round_robin_assign, AssignError, AssignmentCursor,
    AssignmentDecision, AssignmentPolicy,
};
use crate::model::{ActorId, EngineerId, NewTicket, Ticket, TicketId, WorkflowState};
use crate::notify::{deliver, route, DeliveryState, Notice, SinkSet};
use crate::reminder::due_reminders;
use crate::time::{iso8601, Timestamp};

#[derive(Debug, Error)]
pub enum BoardError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error("unknown ticket {0}")]
    UnknownTicket(TicketId),
}

/// Backlog tickets without an assignee, oldest first, ids breaking ties.
pub fn poll_new_unassigned(snapshot: &BoardSnapshot) -> Vec<&Ticket> {
    let mut out: Vec<&Ticket> = snapshot
        .tickets
        .values()
        .filter(|t| t.state() == WorkflowState::Backlog && t.assignee().is_none())
        .collect();
    out.sort_by(|a, b| (a.created_at(), a.id()).cmp(&(b.created_at(), b.id())));
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CycleReport {
    pub at: Option<Timestamp>,
    pub assigned: Vec<AssignmentDecision>,
    /// Pollable tickets left unassigned (empty pool or manual policy).
    pub unassigned: usize,
    pub empty_pool: bool,
    pub reminders: usize,
    pub queued: usize,
    pub delivered: usize,
    pub retrying: usize,
    pub failed_terminal: Vec<String>,
}

impl fmt::Display for CycleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = self.at.map(iso8601).unwrap_or_default();
        writeln!(f, "cycle at {at}")?;
        writeln!(f, "  assigned:        {}", self.assigned.len())?;
        for d in &self.assigned {
            writeln!(f, "    {} -> {} [{}]", d.ticket, d.engineer, d.policy)?;
        }
        writeln!(f, "  unassigned:      {}{}", self.unassigned, if self.empty_pool { " (empty pool)" } else { "" })?;
        writeln!(f, "  reminders:       {}", self.reminders)?;
        writeln!(f, "  messages queued: {}", self.queued)?;
        writeln!(f, "  delivered:       {}", self.delivered)?;
        writeln!(f, "  retrying:        {}", self.retrying)?;
        write!(f, "  failed:          {}", self.failed_terminal.len())?;
        for id in &self.failed_terminal {
            write!(f, "\n    {id}")?;
        }
        Ok(())
    }
}

fn queue_notice(
    snapshot: &mut BoardSnapshot,
    config: &TeamConfig,
    notice: &Notice,
    at: Timestamp,
    events: &mut Vec<TicketEvent>,
) -> Result<usize, ReplayError> {
    let messages = route(notice, &config.binding);
    let n = messages.len();
    for message in messages {
        events.push(snapshot.record(at, EventBody::MessageQueued { message })?);
    }
    Ok(n)
}

fn decide(
    snapshot: &BoardSnapshot,
    config: &TeamConfig,
    open_counts: &std::collections::BTreeMap<EngineerId, u64>,
    ticket: &Ticket,
    now: Timestamp,
) -> Result<AssignmentDecision, AssignError> {
    let cursor = || snapshot.cursor.clone().unwrap_or_else(|| AssignmentCursor::new(&config.team_id));
    match config.policy {
        AssignmentPolicy::RoundRobin => round_robin_assign(&config.roster, &cursor(), ticket, now).map(|(d, _)| d),
        AssignmentPolicy::Expertise => {
            expertise_assign(&config.expertise, &config.roster, &cursor(), &snapshot.assigned_counts, ticket, now)
                .map(|(d, _)| d)
        }
        AssignmentPolicy::LeastOpen => least_open_assign(open_counts, &config.roster, ticket, now),
        AssignmentPolicy::Manual => unreachable!("manual boards are not auto-assigned"),
    }
}

/// Runs one bot cycle at `now`, folding every emitted event into `snapshot`.
/// The returned events continue the snapshot's log and must be appended to it.
pub fn run_cycle(
    snapshot: &mut BoardSnapshot,
    config: &TeamConfig,
    now: Timestamp,
    sinks: &mut SinkSet,
) -> Result<(Vec<TicketEvent>, CycleReport), BoardError> {
    let mut events = Vec::new();
    let mut report = CycleReport {
        at: Some(now),
        ..Default::default()
    };

    // 1. assignment
    let pollable: Vec<Ticket> = poll_new_unassigned(snapshot)
        .into_iter()
        .filter(|t| t.created_at() <= now)
        .cloned()
        .collect();
    let mut just_assigned = BTreeSet::new();
    if config.policy == AssignmentPolicy::Manual {
        report.unassigned = pollable.len();
    } else {
        let mut open_counts = snapshot.open_counts();
        for (i, ticket) in pollable.iter().enumerate() {
            let decision = match decide(snapshot, config, &open_counts, ticket, now) {
                Ok(d) => d,
                Err(AssignError::EmptyPool { .. }) => {
                    report.empty_pool = true;
                    report.unassigned = pollable.len() - i;
                    break;
                }
                Err(e) => return Err(e.into()),
            };
            events.push(snapshot.record(
                now,
                EventBody::Assigned {
                    ticket: decision.ticket.clone(),
                    engineer: decision.engineer.clone(),
                    policy: decision.policy,
                    cursor_after: decision.cursor_after.clone(),
                },
            )?);
            *open_counts.entry(decision.engineer.clone()).or_default() += 1;
            report.queued += queue_notice(snapshot, config, &Notice::Assignment(decision.clone()), now, &mut events)?;
            just_assigned.insert(decision.ticket.clone());
            report.assigned.push(decision);
        }
    }

    // 2. reminders
    if config.reminders {
        let due = due_reminders(
            snapshot.tickets.values().filter(|t| !just_assigned.contains(t.id())),
            now,
            &config.thresholds,
            &snapshot.ledger,
        );
        report.reminders = due.len();
        for r in due {
            events.push(snapshot.record(
                now,
                EventBody::ReminderSent {
                    ticket: r.ticket.clone(),
                    reminder: r.kind,
                    index: r.escalation_index,
                    recipients: r.recipients.clone(),
                },
            )?);
            report.queued += queue_notice(snapshot, config, &Notice::Reminder(r), now, &mut events)?;
        }
    }

    // 3. delivery
    let batch: Vec<_> = snapshot.pending_messages().cloned().collect();
    for message in batch {
        let receipt = match sinks.get(message.channel) {
            Some(sink) => deliver(&message, sink, now, config.max_retries),
            None => crate::notify::DeliveryReceipt {
                msg_id: message.id.clone(),
                state: DeliveryState::Failed {
                    retries: message.delivery.retries() + 1,
                    terminal: true,
                },
                error: Some(format!("no sink bound for {}", message.channel)),
            },
        };
        let body = match receipt.state {
            DeliveryState::Delivered { .. } => {
                report.delivered += 1;
                EventBody::MessageDelivered { msg_id: receipt.msg_id }
            }
            DeliveryState::Failed { retries, terminal } => {
                if terminal {
                    report.failed_terminal.push(receipt.msg_id.clone());
                } else {
                    report.retrying += 1;
                }
                EventBody::DeliveryFailed {
                    msg_id: receipt.msg_id,
                    retries,
                    terminal,
                    error: receipt.error.unwrap_or_default(),
                }
            }
            DeliveryState::Pending => unreachable!("a delivery attempt always settles"),
        };
        events.push(snapshot.record(now, body)?);
    }

    Ok((events, report))
}

/// A change made on the board outside the bot.
#[derive(Debug, Clone, PartialEq)]
pub enum BoardChange {
    Created(NewTicket),
    Transitioned {
        ticket: TicketId,
        to: WorkflowState,
        at: Timestamp,
        actor: ActorId,
    },
    /// A person assigns an unassigned ticket.
    ManualAssigned {
        ticket: TicketId,
        engineer: EngineerId,
        at: Timestamp,
    },
    Reassigned {
        ticket: TicketId,
        engineer: EngineerId,
        at: Timestamp,
    },
}

/// Records an external change together with its review-channel announcement.
pub fn ingest(
    snapshot: &mut BoardSnapshot,
    config: &TeamConfig,
    change: BoardChange,
) -> Result<Vec<TicketEvent>, BoardError> {
    let mut events = Vec::new();
    match change {
        BoardChange::Created(t) => {
            events.push(snapshot.record(
                t.created_at,
                EventBody::Created {
                    ticket: t.id,
                    reporter: t.reporter,
                    priority: t.priority,
                    sla_deadline: t.sla_deadline,
                    labels: t.labels,
                },
            )?);
        }
        BoardChange::Transitioned { ticket, to, at, actor } => {
            let from = snapshot.ticket(&ticket).ok_or_else(|| BoardError::UnknownTicket(ticket.clone()))?.state();
            events.push(snapshot.record(at, EventBody::Transitioned { ticket: ticket.clone(), from, to, actor })?);
            queue_notice(snapshot, config, &Notice::StateChange { ticket, from, to, at }, at, &mut events)?;
        }
        BoardChange::ManualAssigned { ticket, engineer, at } | BoardChange::Reassigned { ticket, engineer, at } => {
            let current = snapshot.ticket(&ticket).ok_or_else(|| BoardError::UnknownTicket(ticket.clone()))?;
            let decision = reassign(current, &config.roster, &engineer, at)?;
            let body = match current.assignee() {
                None => EventBody::Assigned {
                    ticket: ticket.clone(),
                    engineer: engineer.clone(),
                    policy: AssignmentPolicy::Manual,
                    cursor_after: None,
                },
                Some(prev) => EventBody::Reassigned {
                    ticket: ticket.clone(),
                    from: Some(prev.clone()),
                    engineer: engineer.clone(),
                },
            };
            events.push(snapshot.record(at, body)?);
            queue_notice(snapshot, config, &Notice::Assignment(decision), at, &mut events)?;
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::snapshot::replay;
    use crate::model::Priority;
    use crate::notify::{Channel, MemorySink, Sink, SinkError, WireMessage};
    use crate::time::parse_iso8601;
    use chrono::Duration;

    fn t0() -> Timestamp {
        parse_iso8601("2024-03-04T09:00:00Z").unwrap()
    }

    fn config(engineers: &[&str]) -> TeamConfig {
        TeamConfig::simple("team1", "T1", engineers, "unused")
    }

    fn memory_sinks() -> SinkSet {
        let mut s = SinkSet::new();
        for c in [Channel::ChatA, Channel::ChatB, Channel::Email] {
            s.insert(c, Box::new(MemorySink::default()));
        }
        s
    }

    fn new_ticket(id: &str, at: Timestamp) -> BoardChange {
        BoardChange::Created(NewTicket {
            id: id.into(),
            board_id: "T1".into(),
            reporter: "r1".into(),
            created_at: at,
            priority: Priority::Medium,
            sla_deadline: None,
            labels: vec![],
        })
    }

    fn board_with(ids: &[(&str, Timestamp)], cfg: &TeamConfig) -> (BoardSnapshot, Vec<TicketEvent>) {
        let mut snap = BoardSnapshot::new("T1");
        let mut log = vec![];
        for (id, at) in ids {
            log.extend(ingest(&mut snap, cfg, new_ticket(id, *at)).unwrap());
        }
        (snap, log)
    }

    #[test]
    fn poll_orders_by_creation_then_id() {
        let cfg = config(&["e1"]);
        let (snap, _) = board_with(&[("T1-9", t0()), ("T1-10", t0()), ("T1-1", t0() + Duration::seconds(5))], &cfg);
        let ids: Vec<&str> = poll_new_unassigned(&snap).iter().map(|t| t.id().as_str()).collect();
        assert_eq!(ids, vec!["T1-10", "T1-9", "T1-1"]);
        assert!(poll_new_unassigned(&BoardSnapshot::new("T1")).is_empty());
    }

    #[test]
    fn poll_skips_assigned_work() {
        let cfg = config(&["e1"]);
        let (mut snap, _) = board_with(&[("T1-1", t0()), ("T1-2", t0()), ("T1-3", t0())], &cfg);
        ingest(&mut snap, &cfg, BoardChange::ManualAssigned { ticket: "T1-3".into(), engineer: "e1".into(), at: t0() + Duration::hours(1) }).unwrap();
        ingest(
            &mut snap,
            &cfg,
            BoardChange::Transitioned { ticket: "T1-3".into(), to: WorkflowState::WorkInProgress, at: t0() + Duration::hours(2), actor: "e1".into() },
        )
        .unwrap();
        assert_eq!(poll_new_unassigned(&snap).len(), 2);
    }

    #[test]
    fn three_tickets_three_engineers() {
        let cfg = config(&["e1", "e2", "e3"]);
        let (mut snap, mut log) = board_with(&[("T1-1", t0()), ("T1-2", t0()), ("T1-3", t0())], &cfg);
        let (events, report) = run_cycle(&mut snap, &cfg, t0() + Duration::minutes(15), &mut memory_sinks()).unwrap();
        log.extend(events.iter().cloned());
        assert_eq!(events.iter().filter(|e| e.body.kind() == "Assigned").count(), 3);
        assert_eq!(report.assigned.len(), 3);
        assert_eq!(report.queued, 3);
        assert_eq!(report.delivered, 3);
        assert_eq!(snap.cursor.as_ref().unwrap().position, 0);
        assert_eq!(replay("T1", &log).unwrap(), snap);

        // same instant again: nothing new
        let (again, report) = run_cycle(&mut snap, &cfg, t0() + Duration::minutes(15), &mut memory_sinks()).unwrap();
        assert!(again.is_empty(), "{again:?}");
        assert!(report.assigned.is_empty());
    }

    #[test]
    fn blocked_ticket_gets_reminded() {
        let cfg = config(&["e1"]);
        let (mut snap, _) = board_with(&[("T1-1", t0())], &cfg);
        let e1: ActorId = "e1".into();
        ingest(&mut snap, &cfg, BoardChange::ManualAssigned { ticket: "T1-1".into(), engineer: e1.clone(), at: t0() + Duration::hours(1) }).unwrap();
        for (h, to) in [(2, WorkflowState::WorkInProgress), (3, WorkflowState::Blocked)] {
            ingest(&mut snap, &cfg, BoardChange::Transitioned { ticket: "T1-1".into(), to, at: t0() + Duration::hours(h), actor: e1.clone() }).unwrap();
        }
        // Blocked threshold 72h; evaluated 80h after blocking
        let (events, report) = run_cycle(&mut snap, &cfg, t0() + Duration::hours(83), &mut memory_sinks()).unwrap();
        let sent: Vec<_> = events.iter().filter(|e| e.body.kind() == "ReminderSent").collect();
        assert_eq!(sent.len(), 1);
        match &sent[0].body {
            EventBody::ReminderSent { recipients, .. } => assert_eq!(recipients, &[e1, "r1".into()].into()),
            _ => unreachable!(),
        }
        assert_eq!(report.reminders, 1);
        assert!(report.queued >= 2);
    }

    #[test]
    fn empty_pool_leaves_tickets_waiting() {
        let mut cfg = config(&["e1"]);
        cfg.roster.entry_mut(&"e1".into()).unwrap().separated_at = Some(t0().date_naive());
        let (mut snap, _) = board_with(&[("T1-1", t0()), ("T1-2", t0())], &cfg);
        let (events, report) = run_cycle(&mut snap, &cfg, t0() + Duration::minutes(15), &mut memory_sinks()).unwrap();
        assert!(events.iter().all(|e| e.body.kind() != "Assigned"));
        assert!(report.empty_pool);
        assert_eq!(report.unassigned, 2);
    }

    #[test]
    fn manual_policy_does_not_auto_assign() {
        let mut cfg = config(&["e1"]);
        cfg.policy = AssignmentPolicy::Manual;
        let (mut snap, _) = board_with(&[("T1-1", t0())], &cfg);
        let (_, report) = run_cycle(&mut snap, &cfg, t0() + Duration::minutes(15), &mut memory_sinks()).unwrap();
        assert_eq!(report.unassigned, 1);
        assert!(report.assigned.is_empty());
    }

    struct Down;
    impl Sink for Down {
        fn send(&mut self, _: &WireMessage<'_>) -> Result<(), SinkError> {
            Err(SinkError::Unreachable("down".into()))
        }
    }

    #[test]
    fn failing_sink_retries_across_cycles_then_gives_up() {
        let cfg = config(&["e1"]);
        let (mut snap, mut log) = board_with(&[("T1-1", t0())], &cfg);
        let mut sinks = memory_sinks();
        sinks.insert(Channel::ChatA, Box::new(Down));
        let mut now = t0() + Duration::minutes(15);
        let mut reports = vec![];
        for _ in 0..4 {
            let (events, report) = run_cycle(&mut snap, &cfg, now, &mut sinks).unwrap();
            log.extend(events);
            reports.push(report);
            now += Duration::minutes(15);
        }
        assert_eq!(reports[0].retrying, 1);
        assert_eq!(reports[1].retrying, 1);
        assert_eq!(reports[2].failed_terminal.len(), 1);
        assert_eq!(reports[3].failed_terminal.len(), 0);
        assert!(snap.pending.is_empty());
        let msg = snap.outbox.values().next().unwrap();
        assert_eq!(msg.delivery, DeliveryState::Failed { retries: 3, terminal: true });
        assert_eq!(replay("T1", &log).unwrap(), snap);
    }

    #[test]
    fn reassign_is_announced_as_manual() {
        let cfg = config(&["e1", "e2"]);
        let (mut snap, _) = board_with(&[("T1-1", t0())], &cfg);
        run_cycle(&mut snap, &cfg, t0() + Duration::minutes(15), &mut memory_sinks()).unwrap();
        let events = ingest(&mut snap, &cfg, BoardChange::Reassigned { ticket: "T1-1".into(), engineer: "e2".into(), at: t0() + Duration::hours(1) }).unwrap();
        assert_eq!(events[0].body.kind(), "Reassigned");
        match &events[1].body {
            EventBody::MessageQueued { message } => assert!(message.payload.text.contains("[Manual]")),
            other => panic!("{other:?}"),
        }
        assert_eq!(snap.ticket(&"T1-1".into()).unwrap().assignee().unwrap().as_str(), "e2");
        let err = ingest(&mut snap, &cfg, BoardChange::Reassigned { ticket: "T1-1".into(), engineer: "e9".into(), at: t0() + Duration::hours(2) }).unwrap_err();
        assert!(matches!(err, BoardError::Assign(AssignError::UnknownEngineer(_))));
    }
}
