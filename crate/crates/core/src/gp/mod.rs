//! Deterministic, checkpointable tree-based genetic programming engine.
//!
//! Two benchmark problems are supported: the Artificial Ant on the Santa Fe
//! trail and the Boolean multiplexer family. Runs are fully determined by
//! `(RunSpec, seed)`: the engine uses a fixed portable PRNG (ChaCha8) whose
//! state is part of every checkpoint, and fitness is integer hit counts, so
//! two hosts executing the same work unit produce byte-identical artifacts.

pub mod artifact;
pub mod breed;
pub mod checkpoint;
pub mod multiplexer;
pub mod params;
pub mod primitives;
pub mod run;
pub mod santa_fe;
pub mod tree;

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CheckpointPolicy, CheckpointSink, FileCheckpointSink};
pub use params::{GpParams, ProblemId, RunSpec};
pub use primitives::PrimitiveSet;
pub use run::{run_gp, GenStats, GpRunResult, GpRunState};
pub use tree::ProgramTree;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported problem size: {0}")]
    Unsupported(String),
    #[error("checkpoint decode error: {0}")]
    CheckpointDecode(String),
    #[error("checkpoint digest mismatch")]
    CheckpointDigest,
    #[error("checkpoint belongs to a different run (params digest mismatch)")]
    CheckpointParamsMismatch,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Fitness triple in Koza's convention: integer hits, raw error count,
/// and adjusted fitness `1 / (1 + raw)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub hits: u64,
    pub raw: f64,
    pub adjusted: f64,
}

impl EvalReport {
    /// Build a report from a hit count out of `total` fitness cases.
    pub fn from_hits(hits: u64, total: u64) -> Self {
        debug_assert!(hits <= total);
        let raw = (total - hits) as f64;
        EvalReport { hits, raw, adjusted: 1.0 / (1.0 + raw) }
    }
}
