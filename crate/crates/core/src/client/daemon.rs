//! The client work loop: register, fetch, verify, execute, upload.

use std::collections::BTreeMap;
use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::gp::params::RunSpec;
use crate::proto::frame::{read_frame, write_frame};
use crate::proto::messages::Message;
use crate::proto::sign::{verify, SignedPayload};
use crate::proto::{AppId, JobDescriptor, Platform, ProtoError, ResultId, WorkUnit};

use super::exec::{execute_embedded, ProgressCell};
use super::wrapped::execute_wrapped;
use super::{ClientConfig, ClientError};

pub const BACKOFF_BASE_SECS: f64 = 2.0;
pub const BACKOFF_CAP_SECS: f64 = 60.0;

/// One request/reply exchange over a fresh connection.
pub fn exchange(addr: &str, msg: &Message) -> Result<Message, ProtoError> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    write_frame(&mut stream, msg)?;
    read_frame(&mut stream)
}

fn interruptible_sleep(secs: f64, stop: &AtomicBool) {
    let deadline = std::time::Instant::now() + Duration::from_secs_f64(secs);
    while std::time::Instant::now() < deadline && !stop.load(Ordering::Relaxed) {
        std::thread::sleep(Duration::from_millis(50));
    }
}

pub fn register(cfg: &ClientConfig) -> Result<String, ClientError> {
    let reply = exchange(
        &cfg.server_addr,
        &Message::Register {
            platform: Platform::current(),
            ncpus: cfg.ncpus,
            benchmark_flops: cfg.benchmark_flops,
        },
    )?;
    match reply {
        Message::RegisterAck { host_id } => Ok(host_id),
        other => Err(ClientError::Execution(format!("unexpected register reply: {other:?}"))),
    }
}

/// The daemon loop. Returns only when `stop` is raised (or registration is
/// impossible); exponential backoff between 2 s and 60 s on NoWork and on
/// connection failures.
pub fn run_client(cfg: &ClientConfig, stop: &AtomicBool) -> Result<(), ClientError> {
    std::fs::create_dir_all(cfg.data_dir.join("slots"))?;
    let host_id = loop {
        if stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        match register(cfg) {
            Ok(h) => break h,
            Err(e) => {
                log::warn!("registration failed, retrying: {e}");
                interruptible_sleep(BACKOFF_BASE_SECS, stop);
            }
        }
    };
    log::info!("registered as {host_id}");

    let mut backoff = BACKOFF_BASE_SECS;
    while !stop.load(Ordering::Relaxed) {
        match exchange(&cfg.server_addr, &Message::RequestWork { host_id: host_id.clone() }) {
            Ok(Message::AssignWork { work_unit, result_id, payloads, job }) => {
                backoff = BACKOFF_BASE_SECS;
                if let Err(e) = process_assignment(cfg, &host_id, &work_unit, &result_id, &payloads, job.as_ref(), stop) {
                    log::warn!("assignment {result_id} failed: {e}");
                }
            }
            Ok(Message::NoWork) => {
                interruptible_sleep(backoff, stop);
                backoff = (backoff * 2.0).min(BACKOFF_CAP_SECS);
            }
            Ok(other) => {
                log::warn!("unexpected reply to RequestWork: {other:?}");
                interruptible_sleep(backoff, stop);
                backoff = (backoff * 2.0).min(BACKOFF_CAP_SECS);
            }
            Err(e) => {
                log::warn!("server unreachable: {e}");
                interruptible_sleep(backoff, stop);
                backoff = (backoff * 2.0).min(BACKOFF_CAP_SECS);
            }
        }
    }
    Ok(())
}

/// Check every payload signature against the project key. Any failure
/// refuses the whole assignment; nothing gets executed.
pub fn verify_payloads(
    payloads: &BTreeMap<String, SignedPayload>,
    public_key_hex: &str,
) -> Result<BTreeMap<String, Vec<u8>>, ClientError> {
    let mut out = BTreeMap::new();
    for (name, sp) in payloads {
        if !verify(sp, public_key_hex) {
            return Err(ClientError::PayloadRefused(format!("signature verification failed for payload {name}")));
        }
        out.insert(name.clone(), sp.bytes()?);
    }
    Ok(out)
}

/// Execute one assignment end to end and upload the outcome. A refused
/// payload or failed execution is reported to the server as an Error result.
pub fn process_assignment(
    cfg: &ClientConfig,
    host_id: &str,
    wu: &WorkUnit,
    result_id: &ResultId,
    payloads: &BTreeMap<String, SignedPayload>,
    job: Option<&JobDescriptor>,
    stop: &AtomicBool,
) -> Result<(), ClientError> {
    let verified = match verify_payloads(payloads, &cfg.public_key_hex) {
        Ok(v) => v,
        Err(e) => {
            submit_with_retry(cfg, result_id, Vec::new(), 0.0, 0.0, Some(e.to_string()), stop);
            return Err(e);
        }
    };

    let slot = cfg.slot_dir(result_id);
    std::fs::create_dir_all(&slot)?;
    let progress = Arc::new(ProgressCell::default());
    let heartbeat = start_heartbeat(cfg, host_id, result_id, Arc::clone(&progress));

    let outcome = match wu.app_id {
        AppId::EmbeddedGp => verified
            .get("params")
            .ok_or_else(|| ClientError::Execution("embedded work unit without params payload".into()))
            .and_then(|bytes| {
                let text = std::str::from_utf8(bytes)
                    .map_err(|_| ClientError::Execution("params payload is not utf-8".into()))?;
                Ok(RunSpec::from_param_file(text)?)
            })
            .and_then(|spec| execute_embedded(&slot, &spec, &progress))
            .map(|o| (o.output, o.cpu_time, o.cpu_time * cfg.benchmark_flops)),
        AppId::Wrapped => {
            let job = job.ok_or_else(|| ClientError::Execution("wrapped work unit without job descriptor".into()));
            let start = std::time::Instant::now();
            job.and_then(|j| {
                let cap = Duration::from_secs_f64(2.0 * wu.deadline_secs);
                execute_wrapped(&slot, j, &verified, cap)
            })
            .map(|o| {
                let cpu = start.elapsed().as_secs_f64();
                (o.output, cpu, cpu * cfg.benchmark_flops)
            })
        }
    };

    heartbeat.stop();

    let report = match &outcome {
        Ok((output, cpu, flops)) => (output.clone(), *cpu, *flops, None),
        Err(e) => (Vec::new(), 0.0, 0.0, Some(e.to_string())),
    };
    submit_with_retry(cfg, result_id, report.0, report.1, report.2, report.3, stop);
    if outcome.is_ok() {
        let _ = std::fs::remove_dir_all(&slot);
    }
    outcome.map(|_| ())
}

/// Upload the result, retrying with backoff while the server is down; the
/// computed work is never discarded because of a transient network failure.
fn submit_with_retry(
    cfg: &ClientConfig,
    result_id: &ResultId,
    output: Vec<u8>,
    cpu_time: f64,
    flops_estimate: f64,
    error: Option<String>,
    stop: &AtomicBool,
) {
    let msg = Message::SubmitResult {
        result_id: result_id.clone(),
        output,
        cpu_time,
        flops_estimate,
        error,
    };
    let mut backoff = BACKOFF_BASE_SECS;
    while !stop.load(Ordering::Relaxed) {
        match exchange(&cfg.server_addr, &msg) {
            Ok(Message::SubmitAck { accepted }) => {
                if !accepted {
                    log::warn!("result {result_id} not accepted by server");
                }
                return;
            }
            Ok(other) => {
                log::warn!("unexpected reply to SubmitResult: {other:?}");
                return;
            }
            Err(e) => {
                log::warn!("upload of {result_id} failed, retrying: {e}");
                interruptible_sleep(backoff, stop);
                backoff = (backoff * 2.0).min(BACKOFF_CAP_SECS);
            }
        }
    }
}

struct HeartbeatHandle {
    stop: Arc<AtomicBool>,
    thread: std::thread::JoinHandle<()>,
}

impl HeartbeatHandle {
    fn stop(self) {
        self.stop.store(true, Ordering::Relaxed);
        let _ = self.thread.join();
    }
}

fn start_heartbeat(
    cfg: &ClientConfig,
    host_id: &str,
    result_id: &ResultId,
    progress: Arc<ProgressCell>,
) -> HeartbeatHandle {
    let stop = Arc::new(AtomicBool::new(false));
    let addr = cfg.server_addr.clone();
    let interval = cfg.heartbeat_interval_secs;
    let host_id = host_id.to_string();
    let result_id = result_id.clone();
    let stop2 = Arc::clone(&stop);
    let thread = std::thread::spawn(move || {
        while !stop2.load(Ordering::Relaxed) {
            let msg = Message::Heartbeat {
                host_id: host_id.clone(),
                result_id: result_id.clone(),
                progress_fraction: progress.get(),
            };
            // unreachable server never interrupts the computation
            match exchange(&addr, &msg) {
                Ok(Message::HeartbeatAck { warning: Some(w) }) => log::warn!("heartbeat warning: {w}"),
                Ok(_) => {}
                Err(e) => log::debug!("heartbeat failed: {e}"),
            }
            interruptible_sleep(interval, &stop2);
        }
    });
    HeartbeatHandle { stop, thread }
}

/// An in-process client for tests and the churn-free local setups.
pub struct ClientHandle {
    stop: Arc<AtomicBool>,
    thread: std::thread::JoinHandle<Result<(), ClientError>>,
}

impl ClientHandle {
    pub fn spawn(cfg: ClientConfig) -> ClientHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let stop2 = Arc::clone(&stop);
        let thread = std::thread::spawn(move || run_client(&cfg, &stop2));
        ClientHandle { stop, thread }
    }

    pub fn stop(self) -> Result<(), ClientError> {
        self.stop.store(true, Ordering::Relaxed);
        self.thread.join().expect("client thread panicked")
    }
}
