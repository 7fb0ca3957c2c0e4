//! Checkpoint encoding and the write-temp-then-rename file sink.
//!
//! Wire layout: one hex SHA-256 line followed by the JSON state. The digest
//! covers the JSON bytes exactly, so any tampering or truncation is caught
//! before a resume is attempted.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::run::GenStats;
use super::tree::ProgramTree;
use super::{EvalReport, GpError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec_digest: String,
    pub generation: usize,
    pub population: Vec<ProgramTree>,
    pub rng: ChaCha8Rng,
    pub best: Option<(ProgramTree, EvalReport)>,
    pub gen_stats: Vec<GenStats>,
    pub evaluations: u64,
}

/// Checkpoint every N generations or after S seconds, whichever comes first.
#[derive(Debug, Clone, Copy)]
pub struct CheckpointPolicy {
    pub every_generations: usize,
    pub every_seconds: f64,
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        CheckpointPolicy { every_generations: 10, every_seconds: 60.0 }
    }
}

pub fn checkpoint_save(cp: &Checkpoint) -> Vec<u8> {
    let state = serde_json::to_vec(cp).expect("checkpoint state serializes");
    let digest = hex::encode(Sha256::digest(&state));
    let mut out = Vec::with_capacity(digest.len() + 1 + state.len());
    out.extend_from_slice(digest.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&state);
    out
}

pub fn checkpoint_load(bytes: &[u8]) -> Result<Checkpoint, GpError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| GpError::CheckpointDecode("missing digest line".into()))?;
    let (digest_line, state) = bytes.split_at(newline);
    let state = &state[1..];
    let expected = std::str::from_utf8(digest_line)
        .map_err(|_| GpError::CheckpointDecode("digest line is not utf-8".into()))?;
    let actual = hex::encode(Sha256::digest(state));
    if actual != expected {
        return Err(GpError::CheckpointDigest);
    }
    serde_json::from_slice(state).map_err(|e| GpError::CheckpointDecode(e.to_string()))
}

pub trait CheckpointSink {
    fn save(&mut self, cp: &Checkpoint) -> std::io::Result<()>;
}

/// Atomic file sink: writes to `<path>.tmp`, then renames over `<path>`.
pub struct FileCheckpointSink {
    path: PathBuf,
}

impl FileCheckpointSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileCheckpointSink { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Load the checkpoint at this path, if one exists and decodes cleanly.
    pub fn load(&self) -> Option<Checkpoint> {
        let bytes = fs::read(&self.path).ok()?;
        checkpoint_load(&bytes).ok()
    }
}

impl CheckpointSink for FileCheckpointSink {
    fn save(&mut self, cp: &Checkpoint) -> std::io::Result<()> {
        let tmp = self.path.with_extension("tmp");
        let bytes = checkpoint_save(cp);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)
    }
}
