//! Notification routing, the outbound message model and delivery sinks.
//!
//! Channels are abstract (`ChatA`, `ChatB`, `Email`). Every reminder fans out
//! to all of a team's enabled channels; assignment and state-change
//! announcements go to the single review channel.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::AssignmentDecision;
use crate::model::{TicketId, WorkflowState};
use crate::reminder::{Reminder, ReminderKind};
use crate::time::{iso8601, Timestamp};

pub const DEFAULT_MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    ChatA,
    ChatB,
    Email,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::ChatA => "ChatA",
            Channel::ChatB => "ChatB",
            Channel::Email => "Email",
        }
    }

    pub fn is_chat(self) -> bool {
        matches!(self, Channel::ChatA | Channel::ChatB)
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// Where a channel's messages end up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Endpoint {
    /// Appends to `<dir>/<channel>.ndjson`.
    Dir(PathBuf),
    Webhook(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelBinding {
    pub team_id: String,
    pub channels: BTreeMap<Channel, Endpoint>,
    pub review_channel: Channel,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindingError {
    #[error("team `{0}` has no enabled channel")]
    NoChannels(String),
    #[error("review channel {0} must be a chat channel")]
    ReviewNotChat(Channel),
    #[error("review channel {0} is not enabled")]
    ReviewDisabled(Channel),
}

impl ChannelBinding {
    pub fn validate(&self) -> Result<(), BindingError> {
        if self.channels.is_empty() {
            return Err(BindingError::NoChannels(self.team_id.clone()));
        }
        if !self.review_channel.is_chat() {
            return Err(BindingError::ReviewNotChat(self.review_channel));
        }
        if !self.channels.contains_key(&self.review_channel) {
            return Err(BindingError::ReviewDisabled(self.review_channel));
        }
        Ok(())
    }

    /// All three channels writing into `dir`, ChatA reviewing.
    pub fn all_to_dir(team_id: impl Into<String>, dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref().to_path_buf();
        ChannelBinding {
            team_id: team_id.into(),
            channels: [Channel::ChatA, Channel::ChatB, Channel::Email]
                .into_iter()
                .map(|c| (c, Endpoint::Dir(dir.clone())))
                .collect(),
            review_channel: Channel::ChatA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Assigned,
    StateChange,
    StuckState,
    SlaImminent,
    SlaBreached,
}

impl From<ReminderKind> for MessageKind {
    fn from(k: ReminderKind) -> Self {
        match k {
            ReminderKind::StuckState => MessageKind::StuckState,
            ReminderKind::SlaImminent => MessageKind::SlaImminent,
            ReminderKind::SlaBreached => MessageKind::SlaBreached,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub ticket: TicketId,
    pub kind: MessageKind,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum DeliveryState {
    Pending,
    Delivered { at: Timestamp },
    /// `retries` counts failed attempts. Non-terminal failures are retried on
    /// the next cycle.
    Failed { retries: u32, terminal: bool },
}

impl DeliveryState {
    pub fn is_deliverable(self) -> bool {
        matches!(self, DeliveryState::Pending | DeliveryState::Failed { terminal: false, .. })
    }

    pub fn retries(self) -> u32 {
        match self {
            DeliveryState::Failed { retries, .. } => retries,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboundMessage {
    /// Derived from content, so re-queuing the same notice yields the same id.
    pub id: String,
    pub team_id: String,
    pub channel: Channel,
    pub payload: Payload,
    pub created_at: Timestamp,
    pub delivery: DeliveryState,
}

impl OutboundMessage {
    fn new(binding: &ChannelBinding, channel: Channel, id_stem: &str, payload: Payload, at: Timestamp) -> Self {
        OutboundMessage {
            id: format!("{id_stem}.{channel}"),
            team_id: binding.team_id.clone(),
            channel,
            payload,
            created_at: at,
            delivery: DeliveryState::Pending,
        }
    }

    pub fn wire(&self) -> WireMessage<'_> {
        WireMessage {
            msg_id: &self.id,
            team: &self.team_id,
            channel: self.channel,
            kind: self.payload.kind,
            ticket: &self.payload.ticket,
            text: &self.payload.text,
            ts: iso8601(self.created_at),
        }
    }
}

/// The JSON object a sink receives, field order fixed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WireMessage<'a> {
    pub msg_id: &'a str,
    pub team: &'a str,
    pub channel: Channel,
    pub kind: MessageKind,
    pub ticket: &'a TicketId,
    pub text: &'a str,
    pub ts: String,
}

/// Something worth telling a team about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Notice {
    Reminder(Reminder),
    Assignment(AssignmentDecision),
    StateChange {
        ticket: TicketId,
        from: WorkflowState,
        to: WorkflowState,
        at: Timestamp,
    },
}

pub fn route(notice: &Notice, binding: &ChannelBinding) -> Vec<OutboundMessage> {
    match notice {
        Notice::Reminder(r) => {
            let payload = Payload {
                ticket: r.ticket.clone(),
                kind: r.kind.into(),
                text: format!("REMIND {} {} #{} at {}", r.ticket, r.kind, r.escalation_index, iso8601(r.generated_at)),
            };
            let stem = format!("{}.{}.{}.{}", r.ticket, r.kind, r.escalation_index, r.generated_at.timestamp());
            binding
                .channels
                .keys()
                .map(|&c| OutboundMessage::new(binding, c, &stem, payload.clone(), r.generated_at))
                .collect()
        }
        Notice::Assignment(d) => vec![announce_assignment(d, binding)],
        Notice::StateChange { ticket, from, to, at } => vec![announce_state(ticket, *from, *to, *at, binding)],
    }
}

pub fn announce_assignment(decision: &AssignmentDecision, binding: &ChannelBinding) -> OutboundMessage {
    let d = decision;
    let payload = Payload {
        ticket: d.ticket.clone(),
        kind: MessageKind::Assigned,
        text: format!("ASSIGNED {} -> {} [{}] at {}", d.ticket, d.engineer, d.policy, iso8601(d.decided_at)),
    };
    let stem = format!("{}.assign.{}.{}", d.ticket, d.engineer, d.decided_at.timestamp());
    OutboundMessage::new(binding, binding.review_channel, &stem, payload, d.decided_at)
}

pub fn announce_state(
    ticket: &TicketId,
    from: WorkflowState,
    to: WorkflowState,
    at: Timestamp,
    binding: &ChannelBinding,
) -> OutboundMessage {
    let payload = Payload {
        ticket: ticket.clone(),
        kind: MessageKind::StateChange,
        text: format!("STATE {ticket} {from} -> {to} at {}", iso8601(at)),
    };
    let stem = format!("{ticket}.state.{}", at.timestamp());
    OutboundMessage::new(binding, binding.review_channel, &stem, payload, at)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SinkError {
    /// Transient; the message is retried on a later cycle.
    #[error("sink unreachable: {0}")]
    Unreachable(String),
    /// Permanent; the message fails terminally.
    #[error("payload rejected: {0}")]
    Rejected(String),
}

pub trait Sink {
    fn send(&mut self, message: &WireMessage<'_>) -> Result<(), SinkError>;
}

/// Appends one JSON line per message to `<dir>/<channel>.ndjson`.
#[derive(Debug, Clone)]
pub struct FileSink {
    dir: PathBuf,
}

impl FileSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FileSink { dir: dir.into() }
    }

    pub fn path_for(&self, channel: Channel) -> PathBuf {
        self.dir.join(format!("{channel}.ndjson"))
    }
}

impl Sink for FileSink {
    fn send(&mut self, message: &WireMessage<'_>) -> Result<(), SinkError> {
        let line = serde_json::to_string(message).map_err(|e| SinkError::Rejected(e.to_string()))?;
        let io = |e: std::io::Error| SinkError::Unreachable(format!("{}: {e}", self.dir.display()));
        fs::create_dir_all(&self.dir).map_err(io)?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path_for(message.channel))
            .map_err(io)?;
        writeln!(f, "{line}").map_err(io)
    }
}

/// POSTs the message as a JSON object; any 2xx counts as delivered.
pub struct WebhookSink {
    url: String,
    agent: ureq::Agent,
}

impl WebhookSink {
    pub fn new(url: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(std::time::Duration::from_secs(10)))
            .build();
        WebhookSink {
            url: url.into(),
            agent: config.into(),
        }
    }
}

impl Sink for WebhookSink {
    fn send(&mut self, message: &WireMessage<'_>) -> Result<(), SinkError> {
        let body = serde_json::to_string(message).map_err(|e| SinkError::Rejected(e.to_string()))?;
        let resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body.as_bytes())
            .map_err(|e| SinkError::Unreachable(format!("{}: {e}", self.url)))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => Ok(()),
            408 | 429 | 500..=599 => Err(SinkError::Unreachable(format!("{} answered {status}", self.url))),
            _ => Err(SinkError::Rejected(format!("{} answered {status}", self.url))),
        }
    }
}

/// Keeps serialized messages in memory.
#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    pub lines: Vec<String>,
}

impl Sink for MemorySink {
    fn send(&mut self, message: &WireMessage<'_>) -> Result<(), SinkError> {
        self.lines.push(serde_json::to_string(message).map_err(|e| SinkError::Rejected(e.to_string()))?);
        Ok(())
    }
}

/// Sinks per channel.
#[derive(Default)]
pub struct SinkSet {
    sinks: BTreeMap<Channel, Box<dyn Sink>>,
}

impl SinkSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// File or webhook sinks for every bound channel; relative directories
    /// resolve against `base`.
    pub fn from_binding(binding: &ChannelBinding, base: &Path) -> Self {
        let mut set = SinkSet::new();
        for (&channel, endpoint) in &binding.channels {
            let sink: Box<dyn Sink> = match endpoint {
                Endpoint::Dir(dir) => Box::new(FileSink::new(base.join(dir))),
                Endpoint::Webhook(url) => Box::new(WebhookSink::new(url.clone())),
            };
            set.insert(channel, sink);
        }
        set
    }

    pub fn insert(&mut self, channel: Channel, sink: Box<dyn Sink>) {
        self.sinks.insert(channel, sink);
    }

    pub fn get(&mut self, channel: Channel) -> Option<&mut (dyn Sink + 'static)> {
        self.sinks.get_mut(&channel).map(|b| b.as_mut())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub msg_id: String,
    pub state: DeliveryState,
    pub error: Option<String>,
}

/// One delivery attempt. At most `max_retries` attempts are made in total;
/// the last failure (or any rejection) is terminal.
pub fn deliver(message: &OutboundMessage, sink: &mut dyn Sink, now: Timestamp, max_retries: u32) -> DeliveryReceipt {
    debug_assert!(message.delivery.is_deliverable());
    let failed = message.delivery.retries() + 1;
    let (state, error) = match sink.send(&message.wire()) {
        Ok(()) => (DeliveryState::Delivered { at: now }, None),
        Err(e @ SinkError::Unreachable(_)) => (
            DeliveryState::Failed {
                retries: failed,
                terminal: failed >= max_retries,
            },
            Some(e.to_string()),
        ),
        Err(e @ SinkError::Rejected(_)) => (DeliveryState::Failed { retries: failed, terminal: true }, Some(e.to_string())),
    };
    DeliveryReceipt {
        msg_id: message.id.clone(),
        state,
        error,
    }
}
