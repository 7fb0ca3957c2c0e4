//! Wire message kinds. Field names here are normative; see `PROTOCOL.md`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::sign::SignedPayload;
use super::{HostId, JobDescriptor, Platform, ResultId, WorkUnit};

pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        STANDARD.encode(bytes).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // AssignWork dominates; messages are transient
pub enum Message {
    Register {
        platform: Platform,
        ncpus: u32,
        benchmark_flops: f64,
    },
    RegisterAck {
        host_id: HostId,
    },
    RequestWork {
        host_id: HostId,
    },
    AssignWork {
        work_unit: WorkUnit,
        result_id: ResultId,
        payloads: BTreeMap<String, SignedPayload>,
        job: Option<JobDescriptor>,
    },
    NoWork,
    Heartbeat {
        host_id: HostId,
        result_id: ResultId,
        progress_fraction: f64,
    },
    HeartbeatAck {
        warning: Option<String>,
    },
    SubmitResult {
        result_id: ResultId,
        #[serde(with = "b64")]
        output: Vec<u8>,
        cpu_time: f64,
        flops_estimate: f64,
        /// set when the client could not produce an output (refused payload,
        /// failed wrapped program); the result is recorded as an error
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    SubmitAck {
        accepted: bool,
    },
    Error {
        reason: String,
    },
}
