//! Project server: work-unit creation and distribution, heartbeat tracking,
//! quorum validation, assimilation, and the experiment ledger.
//!
//! Layering: [`state::ServerState`] is the pure state machine (time passed
//! in, no I/O), [`log::PersistentServer`] adds the append-only event log,
//! and [`net`] serves the wire protocol over TCP.

pub mod log;
pub mod net;
pub mod state;

pub use log::{replay, EventLog, LogEvent, PersistentServer};
pub use net::{wall_clock_secs, NetServer};
pub use state::{Assignment, AssimilationEntry, ServerConfig, ServerState, StateChange, SweepMeta};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("sweep {0} already exists with a different spec")]
    DuplicateSweep(String),
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error(transparent)]
    Proto(#[from] crate::proto::ProtoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
