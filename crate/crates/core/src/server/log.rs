//! Append-only event log for server persistence.
//!
//! Every mutating command is recorded as one JSON line, written and flushed
//! before it is applied. Restart replays the log through the same command
//! methods, reproducing the state byte for byte (the server holds no other
//! nondeterminism: ids are sequential and Ed25519 signing is deterministic).
//! A truncated final line from a crash mid-append is discarded.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::proto::sweep::SweepSpec;
use crate::proto::{HostId, Platform, ResultId};

use super::state::{ServerConfig, ServerState};
use super::ServerError;
use crate::proto::sign::KeyPair;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Registered { platform: Platform, ncpus: u32, benchmark_flops: f64, now: f64 },
    SweepSubmitted { spec: SweepSpec, now: f64 },
    WorkRequested { host_id: HostId, now: f64 },
    Heartbeat { host_id: HostId, result_id: ResultId, progress: f64, now: f64 },
    ResultSubmitted {
        result_id: ResultId,
        #[serde(with = "crate::proto::messages::b64")]
        output: Vec<u8>,
        cpu_time: f64,
        flops_estimate: f64,
        now: f64,
    },
    ResultFailed { result_id: ResultId, reason: String, now: f64 },
    Transition { now: f64 },
}

pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn open(path: &Path) -> std::io::Result<EventLog> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(EventLog { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &LogEvent) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }

    /// Read all complete events, silently dropping a truncated tail.
    pub fn read_events(path: &Path) -> std::io::Result<Vec<LogEvent>> {
        let mut events = Vec::new();
        let reader = BufReader::new(File::open(path)?);
        for line in reader.split(b'\n') {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            match serde_json::from_slice(&line) {
                Ok(e) => events.push(e),
                // a partial line can only be the last one written
                Err(_) => break,
            }
        }
        Ok(events)
    }
}

/// A server whose every command is logged before being applied.
pub struct PersistentServer {
    pub state: ServerState,
    log: EventLog,
}

impl PersistentServer {
    /// Open (or create) a server from a log file, replaying any history.
    pub fn open(log_path: &Path, config: ServerConfig, key: KeyPair) -> Result<PersistentServer, ServerError> {
        let mut state = ServerState::new(config, key);
        if log_path.exists() {
            for event in EventLog::read_events(log_path)? {
                apply(&mut state, event);
            }
        }
        let log = EventLog::open(log_path)?;
        Ok(PersistentServer { state, log })
    }

    pub fn register(&mut self, platform: Platform, ncpus: u32, benchmark_flops: f64, now: f64) -> Result<HostId, ServerError> {
        self.log.append(&LogEvent::Registered { platform, ncpus, benchmark_flops, now })?;
        Ok(self.state.register(platform, ncpus, benchmark_flops, now))
    }

    pub fn submit_sweep(&mut self, spec: &SweepSpec, now: f64) -> Result<Vec<crate::proto::WuId>, ServerError> {
        // validate before logging so a bad spec never poisons the log
        let ids = self.state.submit_sweep(spec, now)?;
        self.log.append(&LogEvent::SweepSubmitted { spec: spec.clone(), now })?;
        Ok(ids)
    }

    pub fn handle_request_work(
        &mut self,
        host_id: &HostId,
        now: f64,
    ) -> Result<Option<super::state::Assignment>, ServerError> {
        if self.state.host(host_id).is_none() {
            return Err(ServerError::UnknownHost(host_id.clone()));
        }
        self.log.append(&LogEvent::WorkRequested { host_id: host_id.clone(), now })?;
        self.state.handle_request_work(host_id, now)
    }

    pub fn record_heartbeat(
        &mut self,
        host_id: &HostId,
        result_id: &ResultId,
        progress: f64,
        now: f64,
    ) -> Result<Option<String>, ServerError> {
        self.log.append(&LogEvent::Heartbeat {
            host_id: host_id.clone(),
            result_id: result_id.clone(),
            progress,
            now,
        })?;
        Ok(self.state.record_heartbeat(host_id, result_id, progress, now))
    }

    pub fn submit_result(
        &mut self,
        result_id: &ResultId,
        output: Vec<u8>,
        cpu_time: f64,
        flops_estimate: f64,
        now: f64,
    ) -> Result<bool, ServerError> {
        self.log.append(&LogEvent::ResultSubmitted {
            result_id: result_id.clone(),
            output: output.clone(),
            cpu_time,
            flops_estimate,
            now,
        })?;
        Ok(self.state.submit_result(result_id, output, cpu_time, flops_estimate, now))
    }

    pub fn submit_error(&mut self, result_id: &ResultId, reason: &str, now: f64) -> Result<bool, ServerError> {
        self.log.append(&LogEvent::ResultFailed {
            result_id: result_id.clone(),
            reason: reason.to_string(),
            now,
        })?;
        Ok(self.state.submit_error(result_id, reason, now))
    }

    pub fn transition(&mut self, now: f64) -> Result<Vec<super::state::StateChange>, ServerError> {
        self.log.append(&LogEvent::Transition { now })?;
        Ok(self.state.transition(now))
    }
}

fn apply(state: &mut ServerState, event: LogEvent) {
    match event {
        LogEvent::Registered { platform, ncpus, benchmark_flops, now } => {
            state.register(platform, ncpus, benchmark_flops, now);
        }
        LogEvent::SweepSubmitted { spec, now } => {
            // was valid when logged; ignore the (impossible) re-validation error
            let _ = state.submit_sweep(&spec, now);
        }
        LogEvent::WorkRequested { host_id, now } => {
            let _ = state.handle_request_work(&host_id, now);
        }
        LogEvent::Heartbeat { host_id, result_id, progress, now } => {
            state.record_heartbeat(&host_id, &result_id, progress, now);
        }
        LogEvent::ResultSubmitted { result_id, output, cpu_time, flops_estimate, now } => {
            state.submit_result(&result_id, output, cpu_time, flops_estimate, now);
        }
        LogEvent::ResultFailed { result_id, reason, now } => {
            state.submit_error(&result_id, &reason, now);
        }
        LogEvent::Transition { now } => {
            state.transition(now);
        }
    }
}

/// Rebuild a read-only state snapshot from a log file, e.g. for offline
/// status queries while the server process holds the live copy.
pub fn replay(log_path: &Path, config: ServerConfig, key: KeyPair) -> Result<ServerState, ServerError> {
    let mut state = ServerState::new(config, key);
    for event in EventLog::read_events(log_path)? {
        apply(&mut state, event);
    }
    Ok(state)
}
