//! Wrapper mode: run an unmodified external program under the framework's
//! lifecycle.
//!
//! The workflow has four steps: (1) unpack the input payloads into the
//! slot directory; (2) launch the program, passing its checkpoint file
//! when one is already present; (3) wait for the solution (completion
//! marker) file; (4) copy the declared output file out as the result
//! bytes. Every step is recorded in an action trace so the sequence
//! itself is testable.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Child, Command};
use std::time::{Duration, Instant};

use crate::proto::JobDescriptor;

use super::ClientError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WrapperAction {
    Unpack { file: String },
    LaunchFresh,
    LaunchWithCheckpoint,
    WaitSolution,
    CopyOutput { file: String },
}

#[derive(Debug)]
pub struct WrappedOutcome {
    pub output: Vec<u8>,
    pub actions: Vec<WrapperAction>,
}

const POLL: Duration = Duration::from_millis(50);

/// Execute a wrapped job in `slot_dir`. `payloads` maps input file names to
/// verified bytes; `wall_cap` bounds the whole execution (kill on overrun).
pub fn execute_wrapped(
    slot_dir: &Path,
    job: &JobDescriptor,
    payloads: &BTreeMap<String, Vec<u8>>,
    wall_cap: Duration,
) -> Result<WrappedOutcome, ClientError> {
    job.validate()?;
    std::fs::create_dir_all(slot_dir)?;
    let mut actions = Vec::new();

    // step 1: unpack inputs (and the program itself)
    for name in job.input_files.iter().chain(std::iter::once(&job.program)) {
        let bytes = payloads
            .get(name)
            .ok_or_else(|| ClientError::Execution(format!("missing payload for input {name}")))?;
        let path = slot_dir.join(name);
        std::fs::write(&path, bytes)?;
        actions.push(WrapperAction::Unpack { file: name.clone() });
    }
    make_executable(&slot_dir.join(&job.program))?;

    // step 2: launch, resuming from the checkpoint file if one exists
    let checkpoint = slot_dir.join(&job.checkpoint_file);
    let mut cmd = Command::new(slot_dir.join(&job.program).canonicalize()?);
    cmd.current_dir(slot_dir).args(&job.command_args);
    if checkpoint.exists() {
        cmd.arg(&job.checkpoint_file);
        actions.push(WrapperAction::LaunchWithCheckpoint);
    } else {
        actions.push(WrapperAction::LaunchFresh);
    }
    let mut child = cmd.spawn().map_err(|e| ClientError::Execution(format!("launch failed: {e}")))?;

    // step 3: wait for the solution file
    actions.push(WrapperAction::WaitSolution);
    let solution = slot_dir.join(&job.solution_file);
    let deadline = Instant::now() + wall_cap;
    loop {
        if solution.exists() {
            // let the program finish writing its outputs
            wait_with_cap(&mut child, deadline)?;
            break;
        }
        match child.try_wait()? {
            Some(status) if !status.success() => {
                return Err(ClientError::Execution(format!("program exited {status} without a solution file")));
            }
            Some(_) => {
                if !solution.exists() {
                    return Err(ClientError::Execution("program exited without a solution file".into()));
                }
            }
            None => {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(ClientError::Execution("wall-time cap exceeded".into()));
                }
                std::thread::sleep(POLL);
            }
        }
    }

    // step 4: copy the declared output file as the result bytes
    let output_name = job
        .output_files
        .first()
        .ok_or_else(|| ClientError::Execution("job declares no output file".into()))?;
    let output_path = slot_dir.join(output_name);
    if !output_path.exists() {
        return Err(ClientError::Execution(format!("declared output file {output_name} missing")));
    }
    let output = std::fs::read(&output_path)?;
    actions.push(WrapperAction::CopyOutput { file: output_name.clone() });
    Ok(WrappedOutcome { output, actions })
}

fn wait_with_cap(child: &mut Child, deadline: Instant) -> Result<(), ClientError> {
    loop {
        if child.try_wait()?.is_some() {
            return Ok(());
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ClientError::Execution("wall-time cap exceeded".into()));
        }
        std::thread::sleep(POLL);
    }
}

#[cfg(unix)]
fn make_executable(path: &Path) -> std::io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    let mut perms = std::fs::metadata(path)?.permissions();
    perms.set_mode(perms.mode() | 0o755);
    std::fs::set_permissions(path, perms)
}

#[cfg(not(unix))]
fn make_executable(_path: &Path) -> std::io::Result<()> {
    Ok(())
}
