//! The flat `key=value` server config file. Relative paths are resolved
//! against the directory containing the config file, so a project
//! directory is fully relocatable.

use std::path::{Path, PathBuf};

use voluntier_core::proto::sign::KeyPair;
use voluntier_core::server::ServerConfig;

pub struct ServerConf {
    pub bind: String,
    pub log: PathBuf,
    pub secret_key: PathBuf,
    pub spool: PathBuf,
    pub transition_secs: f64,
    pub heartbeat_timeout_secs: f64,
    pub dead_threshold_secs: f64,
}

impl ServerConf {
    pub fn default_file() -> &'static str {
        "\
bind = 127.0.0.1:7070
log = events.log
secret_key = secret.key
spool = spool
transition_secs = 2
heartbeat_timeout_secs = 50
dead_threshold_secs = 86400
"
    }

    pub fn load(path: &Path) -> Result<ServerConf, Box<dyn std::error::Error>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut conf = ServerConf {
            bind: "127.0.0.1:7070".into(),
            log: resolve("events.log"),
            secret_key: resolve("secret.key"),
            spool: resolve("spool"),
            transition_secs: 2.0,
            heartbeat_timeout_secs: 50.0,
            dead_threshold_secs: 86400.0,
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(format!("{}: line {}: expected key=value", path.display(), lineno + 1).into());
            };
            let (k, v) = (k.trim(), v.trim());
            let secs = |v: &str| -> Result<f64, String> {
                match v.parse::<f64>() {
                    Ok(x) if x > 0.0 => Ok(x),
                    _ => Err(format!("{}: line {}: {k} must be a positive number", path.display(), lineno + 1)),
                }
            };
            match k {
                "bind" => conf.bind = v.to_string(),
                "log" => conf.log = resolve(v),
                "secret_key" => conf.secret_key = resolve(v),
                "spool" => conf.spool = resolve(v),
                "transition_secs" => conf.transition_secs = secs(v)?,
                "heartbeat_timeout_secs" => conf.heartbeat_timeout_secs = secs(v)?,
                "dead_threshold_secs" => conf.dead_threshold_secs = secs(v)?,
                _ => return Err(format!("{}: line {}: unknown key {k}", path.display(), lineno + 1).into()),
            }
        }
        Ok(conf)
    }

    pub fn server_config(&self) -> ServerConfig {
        ServerConfig {
            heartbeat_timeout_secs: self.heartbeat_timeout_secs,
            dead_threshold_secs: self.dead_threshold_secs,
        }
    }

    pub fn load_key(&self) -> Result<KeyPair, Box<dyn std::error::Error>> {
        let hex = std::fs::read_to_string(&self.secret_key)
            .map_err(|e| format!("{}: {e}", self.secret_key.display()))?;
        Ok(KeyPair::from_secret_hex(hex.trim())?)
    }
}
