use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignmentCursor, AssignmentPolicy};
use crate::model::{ActorId, EngineerId, Priority, TicketId, WorkflowState};
use crate::notify::OutboundMessage;
use crate::reminder::ReminderKind;
use crate::time::Timestamp;

/// One line of a board's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketEvent {
    pub seq: u64,
    pub ts: Timestamp,
    pub board: String,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventBody {
    /// A reporter raised a ticket; `ts` is its creation time.
    Created {
        ticket: TicketId,
        reporter: ActorId,
        #[serde(default)]
        priority: Priority,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sla_deadline: Option<Timestamp>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        labels: Vec<String>,
    },
    Transitioned {
        ticket: TicketId,
        from: WorkflowState,
        to: WorkflowState,
        actor: ActorId,
    },
    Assigned {
        ticket: TicketId,
        engineer: EngineerId,
        policy: AssignmentPolicy,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cursor_after: Option<AssignmentCursor>,
    },
    Reassigned {
        ticket: TicketId,
        from: Option<EngineerId>,
        engineer: EngineerId,
    },
    ReminderSent {
        ticket: TicketId,
        reminder: ReminderKind,
        index: u32,
        recipients: BTreeSet<ActorId>,
    },
    MessageQueued {
        message: OutboundMessage,
    },
    MessageDelivered {
        msg_id: String,
    },
    DeliveryFailed {
        msg_id: String,
        retries: u32,
        terminal: bool,
        error: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Created { .. } => "Created",
            EventBody::Transitioned { .. } => "Transitioned",
            EventBody::Assigned { .. } => "Assigned",
            EventBody::Reassigned { .. } => "Reassigned",
            EventBody::ReminderSent { .. } => "ReminderSent",
            EventBody::MessageQueued { .. } => "MessageQueued",
            EventBody::MessageDelivered { .. } => "MessageDelivered",
            EventBody::DeliveryFailed { .. } => "DeliveryFailed",
        }
    }

    pub fn ticket(&self) -> Option<&TicketId> {
        match self {
            EventBody::Created { ticket, .. }
            | EventBody::Transitioned { ticket, .. }
            | EventBody::Assigned { ticket, .. }
            | EventBody::Reassigned { ticket, .. }
            | EventBody::ReminderSent { ticket, .. } => Some(ticket),
            EventBody::MessageQueued { message } => Some(&message.payload.ticket),
            EventBody::MessageDelivered { .. } | EventBody::DeliveryFailed { .. } => None,
        }
    }
}
