//! Fixtures shared by the benchmarks.

use dispatch_core::assignment::EngineerRoster;
use dispatch_core::model::{apply_transition, NewTicket, Priority, Ticket, WorkflowState};
use dispatch_core::time::{hours, parse_iso8601, Timestamp};

pub fn epoch() -> Timestamp {
    parse_iso8601("2024-03-04T09:00:00Z").expect("valid timestamp")
}

pub fn roster(engineers: usize) -> EngineerRoster {
    EngineerRoster::from_ids("bench", (0..engineers).map(|i| format!("e{i:03}"))).expect("unique ids")
}

/// `n` tickets created an hour apart, cycling through priorities and the
/// states Backlog, WorkInProgress and Blocked.
pub fn open_tickets(n: usize, engineers: usize) -> Vec<Ticket> {
    let priorities = [Priority::Low, Priority::Medium, Priority::High];
    (0..n)
        .map(|i| {
            let created = epoch() + hours(i as f64);
            let engineer = format!("e{:03}", i % engineers.max(1));
            let t = Ticket::new(NewTicket {
                id: format!("B-{i}").into(),
                board_id: "B".into(),
                reporter: "r".into(),
                created_at: created,
                priority: priorities[i % 3],
                sla_deadline: None,
                labels: vec![],
            })
            .with_assignee(Some(engineer.as_str().into()));
            let actor = engineer.as_str().into();
            match i % 3 {
                0 => t,
                1 => apply_transition(&t, WorkflowState::WorkInProgress, created + hours(0.5), &actor).expect("legal"),
                _ => {
                    let wip = apply_transition(&t, WorkflowState::WorkInProgress, created + hours(0.5), &actor).expect("legal");
                    apply_transition(&wip, WorkflowState::Blocked, created + hours(1.0), &actor).expect("legal")
                }
            }
        })
        .collect()
}
