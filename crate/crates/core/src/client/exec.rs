//! Embedded GP execution with checkpoint/restart and live progress.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::gp::checkpoint::{CheckpointPolicy, CheckpointSink, FileCheckpointSink};
use crate::gp::params::RunSpec;
use crate::gp::run::GpRunState;
use crate::gp::artifact;

use super::ClientError;

/// Progress fraction shared between the executing task and the heartbeat
/// sender; stores f64 bits so both sides stay lock-free.
#[derive(Debug, Default)]
pub struct ProgressCell(AtomicU64);

impl ProgressCell {
    pub fn set(&self, v: f64) {
        self.0.store(v.to_bits(), Ordering::Relaxed);
    }

    pub fn get(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Relaxed))
    }
}

pub struct EmbeddedOutcome {
    /// canonical result artifact
    pub output: Vec<u8>,
    pub cpu_time: f64,
}

/// Run a GP work unit in the given slot directory, resuming from its
/// checkpoint when one matches the parameter digest. A checkpoint written
/// by an interrupted attempt of the same work unit is picked up; anything
/// else (missing, corrupt, or different digest) means a fresh start.
pub fn execute_embedded(
    slot_dir: &Path,
    spec: &RunSpec,
    progress: &Arc<ProgressCell>,
) -> Result<EmbeddedOutcome, ClientError> {
    std::fs::create_dir_all(slot_dir)?;
    let sink = FileCheckpointSink::new(slot_dir.join("checkpoint.bin"));
    let resume = sink.load().filter(|cp| cp.spec_digest == spec.digest());

    let start = Instant::now();
    let mut state = match resume {
        Some(cp) => GpRunState::resume(spec.clone(), cp)?,
        None => GpRunState::new(spec.clone())?,
    };
    progress.set(state.progress());

    let policy = CheckpointPolicy::default();
    let mut sink = sink;
    let mut last_save = Instant::now();
    let mut gens_since_save = 0usize;
    while !state.finished() {
        state.step();
        progress.set(state.progress());
        gens_since_save += 1;
        let due = gens_since_save >= policy.every_generations
            || last_save.elapsed().as_secs_f64() >= policy.every_seconds;
        if due && !state.finished() {
            sink.save(&state.checkpoint())?;
            gens_since_save = 0;
            last_save = Instant::now();
        }
    }
    let cpu_time = start.elapsed().as_secs_f64();
    let result = state.into_result(cpu_time);
    let output = artifact::render(spec, &result).into_bytes();
    // the artifact is final; a stale checkpoint must not leak into a rerun
    let _ = std::fs::remove_file(slot_dir.join("checkpoint.bin"));
    Ok(EmbeddedOutcome { output, cpu_time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::params::{GpParams, ProblemId};
    use crate::gp::run::run_gp;
    use tempfile::TempDir;

    fn spec(seed: u64) -> RunSpec {
        let params = GpParams { population_size: 20, generations: 4, seed, ..GpParams::default() };
        RunSpec { problem: ProblemId::Multiplexer(1), params }
    }

    #[test]
    fn matches_direct_run_byte_for_byte() {
        let dir = TempDir::new().unwrap();
        let spec = spec(7);
        let progress = Arc::new(ProgressCell::default());
        let out = execute_embedded(dir.path(), &spec, &progress).unwrap();
        let direct = run_gp(&spec, None, None).unwrap();
        assert_eq!(out.output, artifact::render(&spec, &direct).into_bytes());
        assert_eq!(progress.get(), 1.0);
    }

    #[test]
    fn resumes_from_matching_checkpoint() {
        let dir = TempDir::new().unwrap();
        let spec = spec(11);

        // interrupted attempt: run two generations, checkpoint, stop
        let mut state = GpRunState::new(spec.clone()).unwrap();
        state.step();
        state.step();
        let mut sink = FileCheckpointSink::new(dir.path().join("checkpoint.bin"));
        sink.save(&state.checkpoint()).unwrap();

        let progress = Arc::new(ProgressCell::default());
        let out = execute_embedded(dir.path(), &spec, &progress).unwrap();
        let direct = run_gp(&spec, None, None).unwrap();
        assert_eq!(out.output, artifact::render(&spec, &direct).into_bytes());
    }

    #[test]
    fn mismatched_checkpoint_starts_fresh() {
        let dir = TempDir::new().unwrap();
        let other = spec(1);
        let mut state = GpRunState::new(other.clone()).unwrap();
        state.step();
        let mut sink = FileCheckpointSink::new(dir.path().join("checkpoint.bin"));
        sink.save(&state.checkpoint()).unwrap();

        // different seed, so a different digest: checkpoint must be ignored
        let spec = spec(2);
        let progress = Arc::new(ProgressCell::default());
        let out = execute_embedded(dir.path(), &spec, &progress).unwrap();
        let direct = run_gp(&spec, None, None).unwrap();
        assert_eq!(out.output, artifact::render(&spec, &direct).into_bytes());
    }

    #[test]
    fn checkpoint_removed_after_completion() {
        let dir = TempDir::new().unwrap();
        let progress = Arc::new(ProgressCell::default());
        execute_embedded(dir.path(), &spec(3), &progress).unwrap();
        assert!(!dir.path().join("checkpoint.bin").exists());
    }
}
