//! Domain types, canonical serialization, wire messages, and payload signing
//! shared by server and client.

pub mod frame;
pub mod messages;
pub mod sign;
pub mod sweep;

pub use frame::{read_frame, write_frame, FRAME_MAX};
pub use messages::Message;
pub use sign::{sign, verify, KeyPair, SignedPayload};
pub use sweep::{expand_sweep, ExpandedWu, SweepSpec};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type WuId = String;
pub type ResultId = String;
pub type HostId = String;

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("protocol error at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("frame too large: {0} bytes")]
    FrameTooLarge(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppId {
    EmbeddedGp,
    Wrapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WuState {
    Unsent,
    InProgress,
    Over,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultState {
    Assigned,
    Running,
    Uploaded,
    Valid,
    Invalid,
    TimedOut,
    Error,
}

impl ResultState {
    /// Terminal states never transition again.
    pub fn is_terminal(self) -> bool {
        matches!(self, ResultState::Valid | ResultState::Invalid | ResultState::TimedOut | ResultState::Error)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Platform {
    #[serde(rename = "linux-x86_64")]
    LinuxX86_64,
    #[serde(rename = "windows-x86_64")]
    WindowsX86_64,
    #[serde(rename = "macos-x86_64")]
    MacosX86_64,
    #[serde(rename = "macos-aarch64")]
    MacosAarch64,
    #[serde(rename = "linux-aarch64")]
    LinuxAarch64,
}

impl Platform {
    pub fn current() -> Platform {
        match (std::env::consts::OS, std::env::consts::ARCH) {
            ("linux", "aarch64") => Platform::LinuxAarch64,
            ("macos", "x86_64") => Platform::MacosX86_64,
            ("macos", "aarch64") => Platform::MacosAarch64,
            ("windows", _) => Platform::WindowsX86_64,
            _ => Platform::LinuxX86_64,
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Platform::LinuxX86_64 => "linux-x86_64",
            Platform::WindowsX86_64 => "windows-x86_64",
            Platform::MacosX86_64 => "macos-x86_64",
            Platform::MacosAarch64 => "macos-aarch64",
            Platform::LinuxAarch64 => "linux-aarch64",
        };
        f.write_str(s)
    }
}

/// One schedulable job: payload references, arguments, replication and
/// deadline policy, plus its lifecycle state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkUnit {
    pub wu_id: WuId,
    pub app_id: AppId,
    /// name -> sha256 hex of the payload bytes
    pub input_refs: BTreeMap<String, String>,
    pub command_args: Vec<String>,
    pub target_replicas: u32,
    pub min_quorum: u32,
    pub max_error_results: u32,
    /// seconds a replica may run before it is timed out
    pub deadline_secs: f64,
    pub state: WuState,
    pub canonical_result_id: Option<ResultId>,
}

impl WorkUnit {
    pub fn validate(&self) -> Result<(), ProtoError> {
        if self.min_quorum == 0 || self.target_replicas == 0 {
            return Err(ProtoError::Config("quorum and replicas must be >= 1".into()));
        }
        if self.min_quorum > self.target_replicas {
            return Err(ProtoError::Config(format!(
                "min_quorum {} > target_replicas {}",
                self.min_quorum, self.target_replicas
            )));
        }
        if self.canonical_result_id.is_some() && self.state != WuState::Over {
            return Err(ProtoError::Config("canonical result on non-Over work unit".into()));
        }
        Ok(())
    }
}

/// One host's execution of a work unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub result_id: ResultId,
    pub wu_id: WuId,
    pub host_id: HostId,
    pub state: ResultState,
    pub output_digest: Option<String>,
    pub cpu_time: f64,
    pub flops_estimate: f64,
    pub assigned_at: f64,
    pub last_heartbeat: f64,
    pub completed_at: Option<f64>,
    pub progress: f64,
}

/// A registered client and its contact history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostRecord {
    pub host_id: HostId,
    pub platform: Platform,
    pub ncpus: u32,
    pub benchmark_flops: f64,
    pub first_contact: f64,
    pub last_contact: f64,
    pub on_fraction: f64,
    pub active_fraction: f64,
    /// cleared when the host has been silent past the dead threshold
    pub active: bool,
}

/// Wrapper-mode job description: which program to run, its files, and the
/// checkpoint / solution-file handshake names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDescriptor {
    pub program: String,
    pub input_files: Vec<String>,
    pub output_files: Vec<String>,
    pub command_args: Vec<String>,
    pub checkpoint_file: String,
    pub solution_file: String,
}

impl JobDescriptor {
    pub fn validate(&self) -> Result<(), ProtoError> {
        if self.input_files.contains(&self.solution_file) {
            return Err(ProtoError::Config("solution file collides with an input".into()));
        }
        if self.output_files.is_empty() {
            return Err(ProtoError::Config("job declares no output files".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wu_quorum_invariant() {
        let mut wu = WorkUnit {
            wu_id: "w1".into(),
            app_id: AppId::EmbeddedGp,
            input_refs: BTreeMap::new(),
            command_args: vec![],
            target_replicas: 2,
            min_quorum: 2,
            max_error_results: 3,
            deadline_secs: 3600.0,
            state: WuState::Unsent,
            canonical_result_id: None,
        };
        wu.validate().unwrap();
        wu.min_quorum = 3;
        assert!(wu.validate().is_err());
    }

    #[test]
    fn job_descriptor_solution_guard() {
        let job = JobDescriptor {
            program: "run.sh".into(),
            input_files: vec!["solution.txt".into()],
            output_files: vec!["out.txt".into()],
            command_args: vec![],
            checkpoint_file: "ckpt".into(),
            solution_file: "solution.txt".into(),
        };
        assert!(job.validate().is_err());
    }
}
