//! Append-only newline-delimited JSON event log.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::event::TicketEvent;
use super::snapshot::{replay, BoardSnapshot, ReplayError};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: corrupt record: {message}")]
    CorruptRecord { line: usize, message: String },
    #[error("line {line}: seq gap, expected {expected} found {found}")]
    SeqGap { line: usize, expected: u64, found: u64 },
    #[error("line {line}: {source}")]
    Replay {
        line: usize,
        #[source]
        source: ReplayError,
    },
    #[error("appended events must continue at seq {expected}, got {found}")]
    AppendGap { expected: u64, found: u64 },
}

impl LogError {
    /// 1-based line of the offending record, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            LogError::CorruptRecord { line, .. } | LogError::SeqGap { line, .. } | LogError::Replay { line, .. } => {
                Some(*line)
            }
            _ => None,
        }
    }
}

/// Parses log text, failing fast on the first malformed line or seq gap.
/// Blank lines are skipped.
pub fn parse_events(text: &str) -> Result<Vec<TicketEvent>, LogError> {
    let mut events: Vec<TicketEvent> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let event: TicketEvent =
            serde_json::from_str(raw).map_err(|e| LogError::CorruptRecord { line, message: e.to_string() })?;
        let expected = events.last().map_or(1, |e| e.seq + 1);
        if event.seq != expected {
            return Err(LogError::SeqGap { line, expected, found: event.seq });
        }
        events.push(event);
    }
    Ok(events)
}

/// Replays parsed events, mapping fold errors back to log lines.
pub fn replay_text(board_id: &str, text: &str) -> Result<BoardSnapshot, LogError> {
    let events = parse_events(text)?;
    let board = events.first().map_or(board_id.to_owned(), |e| e.board.clone());
    replay(board, &events).map_err(|source| {
        let seq = match &source {
            ReplayError::SeqGap { found, .. } => *found,
            ReplayError::BoardMismatch { seq, .. }
            | ReplayError::DuplicateTicket { seq, .. }
            | ReplayError::UnknownTicket { seq, .. }
            | ReplayError::Transition { seq, .. }
            | ReplayError::Inconsistent { seq, .. }
            | ReplayError::DuplicateReminder { seq, .. } => *seq,
        };
        let line = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .nth(seq.saturating_sub(1) as usize)
            .map_or(0, |(i, _)| i + 1);
        LogError::Replay { line, source }
    })
}

/// A board's event log, optionally mirrored to a file.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    path: Option<PathBuf>,
    events: Vec<TicketEvent>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Conventional location of a board's log inside `dir`.
    pub fn path_in(dir: &Path, board_id: &str) -> PathBuf {
        dir.join(format!("{board_id}.events.ndjson"))
    }

    /// Opens an existing log or starts an empty one at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, LogError> {
        let path = path.into();
        let events = match fs::read_to_string(&path) {
            Ok(text) => parse_events(&text)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(source) => return Err(LogError::Io { path, source }),
        };
        Ok(EventLog { path: Some(path), events })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn events(&self) -> &[TicketEvent] {
        &self.events
    }

    pub fn watermark(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    /// Appends `events` (which must continue the seq numbering) and returns
    /// the new watermark. File-backed logs are synced before returning.
    pub fn append(&mut self, events: &[TicketEvent]) -> Result<u64, LogError> {
        for (expected, e) in (self.watermark() + 1..).zip(events) {
            if e.seq != expected {
                return Err(LogError::AppendGap { expected, found: e.seq });
            }
        }
        if let Some(path) = &self.path {
            let io_err = |source| LogError::Io { path: path.clone(), source };
            let mut buf = String::new();
            for e in events {
                buf.push_str(&serde_json::to_string(e).expect("events serialize"));
                buf.push('\n');
            }
            let mut f: File = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
            f.write_all(buf.as_bytes()).map_err(io_err)?;
            f.sync_data().map_err(io_err)?;
        }
        self.events.extend_from_slice(events);
        Ok(self.watermark())
    }

    /// The whole log as ndjson text.
    pub fn to_ndjson(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("events serialize") + "\n")
            .collect()
    }

    pub fn replay(&self, board_id: &str) -> Result<BoardSnapshot, ReplayError> {
        let board = self.events.first().map_or(board_id, |e| e.board.as_str());
        replay(board, &self.events)
    }
}
