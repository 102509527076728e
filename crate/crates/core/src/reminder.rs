//! Stuck-state and SLA reminder evaluation.
//!
//! Evaluation is a pure function of a ticket snapshot, the clock and the
//! ledger of reminders already sent. Escalation index `k` for a condition
//! that triggered `over` ago becomes due once `over >= (k - 1) * period`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActorId, Priority, Ticket, TicketId, WorkflowState};
use crate::time::{hours, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub team_id: String,
    /// Hours a ticket may sit in a state before it counts as stuck.
    pub stuck_hours: BTreeMap<WorkflowState, f64>,
    pub sla_warning_fraction: f64,
    pub reminder_period_hours: f64,
    /// Multiplier applied to stuck thresholds of High priority tickets.
    pub high_priority_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("Done cannot carry a stuck threshold")]
    DoneThreshold,
    #[error("no stuck threshold for {0}")]
    MissingThreshold(WorkflowState),
    #[error("{field} must be > 0 (got {value})")]
    NonPositive { field: String, value: f64 },
    #[error("sla_warning_fraction must lie in (0, 1] (got {0})")]
    Fraction(f64),
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl ThresholdPolicy {
    /// 72h for Blocked, 120h elsewhere, warn at 20% SLA remaining, remind
    /// daily, halve thresholds for High priority.
    pub fn with_defaults(team_id: impl Into<String>) -> Self {
        let stuck_hours = WorkflowState::ALL
            .into_iter()
            .filter(|s| *s != WorkflowState::Done)
            .map(|s| (s, if s == WorkflowState::Blocked { 72.0 } else { 120.0 }))
            .collect();
        ThresholdPolicy {
            team_id: team_id.into(),
            stuck_hours,
            sla_warning_fraction: 0.2,
            reminder_period_hours: 24.0,
            high_priority_factor: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.stuck_hours.contains_key(&WorkflowState::Done) {
            return Err(PolicyError::DoneThreshold);
        }
        for state in WorkflowState::ALL.into_iter().filter(|s| *s != WorkflowState::Done) {
            match self.stuck_hours.get(&state) {
                None => return Err(PolicyError::MissingThreshold(state)),
                Some(&h) if !positive(h) => {
                    return Err(PolicyError::NonPositive { field: format!("stuck_hours.{state}"), value: h })
                }
                Some(_) => {}
            }
        }
        for (field, value) in [
            ("reminder_period_hours", self.reminder_period_hours),
            ("high_priority_factor", self.high_priority_factor),
        ] {
            if !positive(value) {
                return Err(PolicyError::NonPositive { field: field.into(), value });
            }
        }
        if !(self.sla_warning_fraction > 0.0 && self.sla_warning_fraction <= 1.0) {
            return Err(PolicyError::Fraction(self.sla_warning_fraction));
        }
        Ok(())
    }

    pub fn threshold(&self, state: WorkflowState, priority: Priority) -> Option<Duration> {
        let h = *self.stuck_hours.get(&state)?;
        let factor = if priority == Priority::High { self.high_priority_factor } else { 1.0 };
        Some(hours(h * factor))
    }

    pub fn reminder_period(&self) -> Duration {
        hours(self.reminder_period_hours)
    }

    /// Actor id standing for the whole team's channel.
    pub fn team_actor(&self) -> ActorId {
        ActorId(format!("team:{}", self.team_id))
    }
}

/// Tickets in a non-Done state for longer than their threshold, with the
/// time spent in that state.
pub fn stuck_tickets<'a>(
    tickets: impl IntoIterator<Item = &'a Ticket>,
    now: Timestamp,
    policy: &ThresholdPolicy,
) -> Vec<(&'a Ticket, Duration)> {
    tickets
        .into_iter()
        .filter(|t| !t.is_done())
        .filter_map(|t| {
            let elapsed = now - t.state_entered_at();
            let threshold = policy.threshold(t.state(), t.priority())?;
            (elapsed > threshold).then_some((t, elapsed))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlaStatus {
    Ok,
    Imminent,
    Breached,
}

pub fn sla_status(ticket: &Ticket, now: Timestamp, policy: &ThresholdPolicy) -> SlaStatus {
    if now > ticket.sla_deadline() {
        return SlaStatus::Breached;
    }
    if (ticket.sla_deadline() - now) < warning_span(ticket, policy) {
        SlaStatus::Imminent
    } else {
        SlaStatus::Ok
    }
}

fn warning_span(ticket: &Ticket, policy: &ThresholdPolicy) -> Duration {
    let window = (ticket.sla_deadline() - ticket.created_at()).num_seconds() as f64;
    Duration::seconds((window * policy.sla_warning_fraction).round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReminderKind {
    StuckState,
    SlaImminent,
    SlaBreached,
}

impl ReminderKind {
    pub fn name(self) -> &'static str {
        match self {
            ReminderKind::StuckState => "StuckState",
            ReminderKind::SlaImminent => "SlaImminent",
            ReminderKind::SlaBreached => "SlaBreached",
        }
    }
}

impl fmt::Display for ReminderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reminder {
    pub ticket: TicketId,
    pub kind: ReminderKind,
    pub recipients: BTreeSet<ActorId>,
    pub escalation_index: u32,
    pub generated_at: Timestamp,
}

/// Reminders already sent, keyed by ticket, kind and escalation index.
///
/// Stuck-state entries describe the ticket's current state episode only; they
/// are dropped whenever the ticket transitions so the escalation restarts at 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReminderLedger(BTreeMap<TicketId, BTreeMap<ReminderKind, BTreeSet<u32>>>);

impl ReminderLedger {
    pub fn contains(&self, ticket: &TicketId, kind: ReminderKind, index: u32) -> bool {
        self.sent(ticket, kind).is_some_and(|s| s.contains(&index))
    }

    /// Returns false if the key was already present.
    pub fn insert(&mut self, ticket: TicketId, kind: ReminderKind, index: u32) -> bool {
        self.0.entry(ticket).or_default().entry(kind).or_default().insert(index)
    }

    pub fn reset_stuck(&mut self, ticket: &TicketId) {
        if let Some(kinds) = self.0.get_mut(ticket) {
            kinds.remove(&ReminderKind::StuckState);
            if kinds.is_empty() {
                self.0.remove(ticket);
            }
        }
    }

    pub fn sent(&self, ticket: &TicketId, kind: ReminderKind) -> Option<&BTreeSet<u32>> {
        self.0.get(ticket).and_then(|k| k.get(&kind))
    }

    pub fn len(&self) -> usize {
        self.0.values().flat_map(|k| k.values()).map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TicketId, ReminderKind, u32)> {
        self.0
            .iter()
            .flat_map(|(t, kinds)| kinds.iter().flat_map(move |(k, idx)| idx.iter().map(move |i| (t, *k, *i))))
    }

    /// Indices in `1..=upto` not yet recorded.
    fn missing(&self, ticket: &TicketId, kind: ReminderKind, upto: u32) -> Vec<u32> {
        match self.sent(ticket, kind) {
            None => (1..=upto).collect(),
            Some(s) if s.len() as u32 >= upto && s.range(1..=upto).count() as u32 == upto => Vec::new(),
            Some(s) => (1..=upto).filter(|i| !s.contains(i)).collect(),
        }
    }
}

/// Number of escalations due for a condition that triggered `over` ago.
pub fn escalations_due(over: Duration, period: Duration) -> u32 {
    if over <= Duration::zero() {
        0
    } else {
        (over.num_seconds() / period.num_seconds().max(1)) as u32 + 1
    }
}

fn individuals(ticket: &Ticket) -> BTreeSet<ActorId> {
    ticket.assignee().into_iter().chain([ticket.reporter()]).cloned().collect()
}

/// Reminders triggered at `now` that are not yet in `already_sent`, in input
/// order, then by kind and escalation index.
pub fn due_reminders<'a>(
    tickets: impl IntoIterator<Item = &'a Ticket>,
    now: Timestamp,
    policy: &ThresholdPolicy,
    already_sent: &ReminderLedger,
) -> Vec<Reminder> {
    let period = policy.reminder_period();
    let mut out = Vec::new();
    for ticket in tickets.into_iter().filter(|t| !t.is_done()) {
        let mut emit = |kind: ReminderKind, over: Duration, recipients: &dyn Fn() -> BTreeSet<ActorId>| {
            let due = escalations_due(over, period);
            if due == 0 {
                return;
            }
            for index in already_sent.missing(ticket.id(), kind, due) {
                out.push(Reminder {
                    ticket: ticket.id().clone(),
                    kind,
                    recipients: recipients(),
                    escalation_index: index,
                    generated_at: now,
                });
            }
        };

        if let Some(threshold) = policy.threshold(ticket.state(), ticket.priority()) {
            let over = now - ticket.state_entered_at() - threshold;
            emit(ReminderKind::StuckState, over, &|| individuals(ticket));
        }

        let with_team = || {
            let mut r = individuals(ticket);
            r.insert(policy.team_actor());
            r
        };
        match sla_status(ticket, now, policy) {
            SlaStatus::Ok => {}
            SlaStatus::Imminent => {
                let trigger = ticket.sla_deadline() - warning_span(ticket, policy);
                emit(ReminderKind::SlaImminent, now - trigger, &with_team);
            }
            SlaStatus::Breached => {
                emit(ReminderKind::SlaBreached, now - ticket.sla_deadline(), &with_team);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{apply_transition, NewTicket};
    use crate::time::parse_iso8601;
    use proptest::prelude::*;

    fn t0() -> Timestamp {
        parse_iso8601("2024-03-04T09:00:00Z").unwrap()
    }

    fn h(x: f64) -> Duration {
        hours(x)
    }

    fn ticket_with(priority: Priority, deadline_h: Option<f64>) -> Ticket {
        Ticket::new(NewTicket {
            id: "T1-1".into(),
            board_id: "T1".into(),
            reporter: "r1".into(),
            created_at: t0(),
            priority,
            sla_deadline: deadline_h.map(|d| t0() + h(d)),
            labels: vec![],
        })
    }

    /// Assigned ticket moved into `state` one hour after creation.
    fn in_state(state: WorkflowState) -> Ticket {
        let e: ActorId = "e1".into();
        let t = ticket_with(Priority::Medium, Some(10_000.0)).with_assignee(Some(e.clone()));
        match state {
            WorkflowState::Backlog => t,
            WorkflowState::Blocked | WorkflowState::ReadyForReview => {
                let t = apply_transition(&t, WorkflowState::WorkInProgress, t0() + h(0.5), &e).unwrap();
                apply_transition(&t, state, t0() + h(1.0), &e).unwrap()
            }
            other => apply_transition(&t, other, t0() + h(1.0), &e).unwrap(),
        }
    }

    fn policy() -> ThresholdPolicy {
        ThresholdPolicy::with_defaults("team1")
    }

    #[test]
    fn defaults_validate() {
        policy().validate().unwrap();
        let mut p = policy();
        p.sla_warning_fraction = 0.0;
        assert!(matches!(p.validate(), Err(PolicyError::Fraction(_))));
        let mut p = policy();
        p.stuck_hours.insert(WorkflowState::Done, 1.0);
        assert_eq!(p.validate(), Err(PolicyError::DoneThreshold));
    }

    #[test]
    fn blocked_past_threshold_is_stuck() {
        let t = in_state(WorkflowState::Blocked);
        let now = t0() + h(81.0);
        let got = stuck_tickets([&t], now, &policy());
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].1, h(80.0));
    }

    #[test]
    fn done_never_stuck() {
        let t = in_state(WorkflowState::Done);
        assert!(stuck_tickets([&t], t0() + h(100_000.0), &policy()).is_empty());
    }

    #[test]
    fn stuck_boundary_is_strict() {
        let t = in_state(WorkflowState::WorkInProgress);
        assert!(stuck_tickets([&t], t0() + h(121.0), &policy()).is_empty());
        assert_eq!(stuck_tickets([&t], t0() + h(121.0) + Duration::seconds(1), &policy()).len(), 1);
    }

    #[test]
    fn high_priority_halves_thresholds() {
        let t = ticket_with(Priority::High, Some(10_000.0));
        assert!(stuck_tickets([&t], t0() + h(61.0), &policy()).len() == 1);
        assert!(stuck_tickets([&t], t0() + h(59.0), &policy()).is_empty());
    }

    #[test]
    fn sla_states() {
        let t = ticket_with(Priority::Medium, Some(100.0));
        assert_eq!(sla_status(&t, t0() + h(101.0), &policy()), SlaStatus::Breached);
        assert_eq!(sla_status(&t, t0(), &policy()), SlaStatus::Ok);
        // 10% of the window left, 20% warning fraction
        let remaining = 0.1 * 100.0;
        let now = t0() + h(100.0 - remaining);
        assert!(remaining / 100.0 < 0.2);
        assert_eq!(sla_status(&t, now, &policy()), SlaStatus::Imminent);
        // exactly at the fraction is not yet imminent
        assert_eq!(sla_status(&t, t0() + h(80.0), &policy()), SlaStatus::Ok);
    }

    #[test]
    fn escalation_catch_up_and_idempotence() {
        let t = in_state(WorkflowState::Blocked);
        // entered at +1h, threshold 72h, 2.5 periods past the threshold
        let now = t0() + h(1.0 + 72.0 + 2.5 * 24.0);
        let mut ledger = ReminderLedger::default();
        let got = due_reminders([&t], now, &policy(), &ledger);
        let idx: Vec<u32> = got.iter().map(|r| r.escalation_index).collect();
        assert_eq!(idx, vec![1, 2, 3]);
        // oracle: floor(over / period) + 1
        assert_eq!((2.5f64).floor() as u32 + 1, 3);
        for r in &got {
            assert_eq!(r.kind, ReminderKind::StuckState);
            assert_eq!(r.recipients, ["e1".into(), "r1".into()].into());
            ledger.insert(r.ticket.clone(), r.kind, r.escalation_index);
        }
        assert!(due_reminders([&t], now, &policy(), &ledger).is_empty());
    }

    #[test]
    fn breach_reaches_the_team() {
        let t = ticket_with(Priority::Medium, Some(10.0));
        let got = due_reminders([&t], t0() + h(11.0), &policy(), &ReminderLedger::default());
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].kind, ReminderKind::SlaBreached);
        assert!(got[0].recipients.contains(&ActorId::from("team:team1")));
        assert!(got[0].recipients.contains(&ActorId::from("r1")));
    }

    #[test]
    fn ledger_reset_restarts_escalation() {
        let mut l = ReminderLedger::default();
        let id: TicketId = "T1-1".into();
        l.insert(id.clone(), ReminderKind::StuckState, 1);
        l.insert(id.clone(), ReminderKind::SlaBreached, 1);
        l.reset_stuck(&id);
        assert!(!l.contains(&id, ReminderKind::StuckState, 1));
        assert!(l.contains(&id, ReminderKind::SlaBreached, 1));
        assert_eq!(l.len(), 1);
    }

    proptest! {
        #[test]
        fn monotone_in_now(a in 0.0f64..400.0, b in 0.0f64..400.0, which in 0usize..4) {
            let state = [WorkflowState::Backlog, WorkflowState::WorkInProgress, WorkflowState::Blocked, WorkflowState::ReadyForReview][which];
            let t = in_state(state);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let kinds = |x: f64| -> BTreeSet<ReminderKind> {
                due_reminders([&t], t0() + h(1.0 + x), &policy(), &ReminderLedger::default()).into_iter().map(|r| r.kind).collect()
            };
            let stuck_lo = kinds(lo).contains(&ReminderKind::StuckState);
            prop_assert!(!stuck_lo || kinds(hi).contains(&ReminderKind::StuckState));
        }

        #[test]
        fn exactly_once_over_any_schedule(steps in proptest::collection::vec(0.0f64..60.0, 1..20)) {
            let t = in_state(WorkflowState::Blocked);
            let mut ledger = ReminderLedger::default();
            let mut now = t0() + h(1.0);
            let mut seen = BTreeSet::new();
            for s in steps {
                now += h(s);
                for r in due_reminders([&t], now, &policy(), &ledger) {
                    prop_assert!(seen.insert((r.kind, r.escalation_index)));
                    ledger.insert(r.ticket, r.kind, r.escalation_index);
                }
            }
            let over = now - t.state_entered_at() - policy().threshold(WorkflowState::Blocked, Priority::Medium).unwrap();
            let stuck = seen.iter().filter(|(k, _)| *k == ReminderKind::StuckState).count() as u32;
            prop_assert_eq!(stuck, escalations_due(over, policy().reminder_period()));
        }
    }
}
