//! The bot core: board state as an event-sourced snapshot, the periodic cycle
//! and the board integration seam.

pub mod config;
pub mod cycle;
pub mod event;
pub mod file_board;
pub mod log;
pub mod snapshot;

pub use config::{ConfigError, TeamConfig, TeamConfigFile};
pub use cycle::{ingest, poll_new_unassigned, run_cycle, BoardChange, BoardError, CycleReport};
pub use event::{EventBody, TicketEvent};
pub use file_board::{Board, FileBoard};
pub use log::{parse_events, replay_text, EventLog, LogError};
pub use snapshot::{replay, BoardSnapshot, ReplayError};
