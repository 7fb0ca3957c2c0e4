//! Volunteer client: registers with the server, fetches work, executes
//! payloads (embedded GP or a wrapped external program) with checkpoint and
//! restart, heartbeats while computing, and uploads results.
//!
//! The client never executes a payload whose signature does not verify
//! against the project public key; such assignments are reported back as
//! errors without running anything.

pub mod daemon;
pub mod exec;
pub mod wrapped;

pub use daemon::{run_client, ClientHandle};
pub use exec::execute_embedded;
pub use wrapped::{execute_wrapped, WrapperAction};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("config error: {0}")]
    Config(String),
    #[error("payload refused: {0}")]
    PayloadRefused(String),
    #[error("execution failed: {0}")]
    Execution(String),
    #[error(transparent)]
    Gp(#[from] crate::gp::GpError),
    #[error(transparent)]
    Proto(#[from] crate::proto::ProtoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub server_addr: String,
    /// project public key, hex; payload signatures must verify against it
    pub public_key_hex: String,
    pub data_dir: PathBuf,
    pub heartbeat_interval_secs: f64,
    pub ncpus: u32,
    pub benchmark_flops: f64,
}

impl Default for ClientConfig {
    fn default() -> ClientConfig {
        ClientConfig {
            server_addr: "127.0.0.1:7070".into(),
            public_key_hex: String::new(),
            data_dir: PathBuf::from("client-data"),
            heartbeat_interval_secs: 10.0,
            ncpus: 1,
            benchmark_flops: 1e9,
        }
    }
}

impl ClientConfig {
    pub fn from_config_file(text: &str, relative_to: &Path) -> Result<ClientConfig, ClientError> {
        let mut server_addr = None;
        let mut public_key_hex = None;
        let mut data_dir = None;
        let mut heartbeat_interval_secs = 10.0;
        let mut ncpus = 1;
        let mut benchmark_flops = 1e9;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ClientError::Config(format!("line {}: expected key=value", lineno + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            let parse_err = |e| ClientError::Config(format!("line {}: {k}: {e}", lineno + 1));
            match k {
                "server_addr" => server_addr = Some(v.to_string()),
                "public_key" => public_key_hex = Some(v.to_string()),
                "data_dir" => {
                    let p = PathBuf::from(v);
                    data_dir = Some(if p.is_absolute() { p } else { relative_to.join(p) });
                }
                "heartbeat_interval_secs" => {
                    heartbeat_interval_secs = v.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?
                }
                "ncpus" => ncpus = v.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                "benchmark_flops" => {
                    benchmark_flops = v.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?
                }
                _ => return Err(ClientError::Config(format!("line {}: unknown key {k}", lineno + 1))),
            }
        }
        Ok(ClientConfig {
            server_addr: server_addr.ok_or_else(|| ClientError::Config("missing server_addr".into()))?,
            public_key_hex: public_key_hex.ok_or_else(|| ClientError::Config("missing public_key".into()))?,
            data_dir: data_dir.ok_or_else(|| ClientError::Config("missing data_dir".into()))?,
            heartbeat_interval_secs,
            ncpus,
            benchmark_flops,
        })
    }

    pub fn to_config_file(&self) -> String {
        format!(
            "benchmark_flops={}\ndata_dir={}\nheartbeat_interval_secs={}\nncpus={}\npublic_key={}\nserver_addr={}\n",
            self.benchmark_flops,
            self.data_dir.display(),
            self.heartbeat_interval_secs,
            self.ncpus,
            self.public_key_hex,
            self.server_addr,
        )
    }

    /// Scratch directory for one assigned result.
    pub fn slot_dir(&self, result_id: &str) -> PathBuf {
        self.data_dir.join("slots").join(result_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let cfg = ClientConfig {
            server_addr: "127.0.0.1:9001".into(),
            public_key_hex: "ab".repeat(32),
            data_dir: PathBuf::from("/tmp/cdata"),
            heartbeat_interval_secs: 2.5,
            ncpus: 4,
            benchmark_flops: 3.2e9,
        };
        let text = cfg.to_config_file();
        let back = ClientConfig::from_config_file(&text, Path::new("/")).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn relative_data_dir_resolves() {
        let text = "server_addr=127.0.0.1:1\npublic_key=00\ndata_dir=client-data\n";
        let cfg = ClientConfig::from_config_file(text, Path::new("/proj")).unwrap();
        assert_eq!(cfg.data_dir, PathBuf::from("/proj/client-data"));
    }

    #[test]
    fn missing_keys_rejected() {
        assert!(ClientConfig::from_config_file("server_addr=x\n", Path::new("/")).is_err());
        assert!(ClientConfig::from_config_file("bogus=1\n", Path::new("/")).is_err());
    }
}
