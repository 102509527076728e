//! Board integration seam and the file-backed board.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::cycle::{BoardChange, BoardError};
use super::event::EventBody;
use super::log::LogError;
use super::snapshot::BoardSnapshot;
use crate::assignment::AssignmentDecision;
use crate::model::NewTicket;
use crate::time::Timestamp;

/// What the bot needs from a ticket board.
pub trait Board {
    /// Changes on the board not yet reflected in `snapshot`.
    fn fetch_changes(&mut self, snapshot: &BoardSnapshot) -> Result<Vec<BoardChange>, BoardError>;

    /// Pushes an assignment back to the board.
    fn write_assignment(&mut self, decision: &AssignmentDecision) -> Result<(), BoardError>;
}

/// A fixture record: the event-log schema, `seq` optional.
#[derive(Debug, Deserialize)]
struct FixtureRecord {
    #[serde(default)]
    #[allow(dead_code)]
    seq: Option<u64>,
    ts: Timestamp,
    board: String,
    #[serde(flatten)]
    body: EventBody,
}

/// Reads `Created` and `Transitioned` records from an ndjson fixture. The bot's
/// event log is the system of record, so writes are accepted and dropped.
#[derive(Debug, Clone)]
pub struct FileBoard {
    path: PathBuf,
    records: Vec<(usize, Timestamp, EventBody)>,
}

impl FileBoard {
    pub fn open(path: &Path, board_id: &str) -> Result<Self, LogError> {
        let text = fs::read_to_string(path).map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord =
                serde_json::from_str(raw).map_err(|e| LogError::CorruptRecord { line, message: e.to_string() })?;
            if rec.board != board_id {
                return Err(LogError::CorruptRecord {
                    line,
                    message: format!("record for board `{}`, expected `{board_id}`", rec.board),
                });
            }
            if !matches!(rec.body, EventBody::Created { .. } | EventBody::Transitioned { .. }) {
                return Err(LogError::CorruptRecord {
                    line,
                    message: format!("fixtures carry only Created/Transitioned records, got {}", rec.body.kind()),
                });
            }
            records.push((line, rec.ts, rec.body));
        }
        Ok(FileBoard {
            path: path.to_path_buf(),
            records,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Board for FileBoard {
    fn fetch_changes(&mut self, snapshot: &BoardSnapshot) -> Result<Vec<BoardChange>, BoardError> {
        // Later records may depend on earlier ones in the same batch, so track
        // what the batch itself introduces.
        let mut created = std::collections::BTreeSet::new();
        let mut last_seen = std::collections::BTreeMap::new();
        let mut out = Vec::new();
        for (_, ts, body) in &self.records {
            match body {
                EventBody::Created { ticket, reporter, priority, sla_deadline, labels } => {
                    if snapshot.ticket(ticket).is_none() && created.insert(ticket.clone()) {
                        last_seen.insert(ticket.clone(), *ts);
                        out.push(BoardChange::Created(NewTicket {
                            id: ticket.clone(),
                            board_id: snapshot.board_id.clone(),
                            reporter: reporter.clone(),
                            created_at: *ts,
                            priority: *priority,
                            sla_deadline: *sla_deadline,
                            labels: labels.clone(),
                        }));
                    }
                }
                EventBody::Transitioned { ticket, to, actor, .. } => {
                    let newest = last_seen
                        .get(ticket)
                        .copied()
                        .or_else(|| snapshot.ticket(ticket).map(|t| t.last_change()));
                    if newest.is_some_and(|n| *ts > n) {
                        last_seen.insert(ticket.clone(), *ts);
                        out.push(BoardChange::Transitioned {
                            ticket: ticket.clone(),
                            to: *to,
                            at: *ts,
                            actor: actor.clone(),
                        });
                    }
                }
                _ => unreachable!("filtered at load"),
            }
        }
        Ok(out)
    }

    fn write_assignment(&mut self, _decision: &AssignmentDecision) -> Result<(), BoardError> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::{ingest, TeamConfig};

    #[test]
    fn fixture_changes_are_fetched_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.ndjson");
        std::fs::write(
            &path,
            concat!(
                r#"{"ts":"2024-03-04T09:00:00Z","board":"T1","kind":"Created","ticket":"T1-1","reporter":"r1"}"#, "\n",
                r#"{"ts":"2024-03-04T09:05:00Z","board":"T1","kind":"Created","ticket":"T1-2","reporter":"r2","priority":"High"}"#, "\n",
                r#"{"ts":"2024-03-04T10:00:00Z","board":"T1","kind":"Transitioned","ticket":"T1-2","from":"Backlog","to":"Done","actor":"r2"}"#, "\n",
            ),
        )
        .unwrap();
        let cfg = TeamConfig::simple("team1", "T1", &["e1"], "unused");
        let mut board = FileBoard::open(&path, "T1").unwrap();
        let mut snap = BoardSnapshot::new("T1");
        let changes = board.fetch_changes(&snap).unwrap();
        assert_eq!(changes.len(), 3);
        for c in changes {
            ingest(&mut snap, &cfg, c).unwrap();
        }
        assert!(board.fetch_changes(&snap).unwrap().is_empty());
        assert!(snap.ticket(&"T1-2".into()).unwrap().is_done());
    }

    #[test]
    fn fixture_rejects_foreign_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.ndjson");
        std::fs::write(&path, r#"{"ts":"2024-03-04T09:00:00Z","board":"T1","kind":"MessageDelivered","msg_id":"x"}"#).unwrap();
        assert!(matches!(FileBoard::open(&path, "T1"), Err(LogError::CorruptRecord { line: 1, .. })));
    }
}
