//! TCP front end for the server state machine.
//!
//! One exchange per connection: read a frame, apply it under the state lock
//! with the current wall-clock time, write the reply. A background thread
//! runs the transitioner periodically and picks up sweep files dropped into
//! the spool directory by `sweep submit`.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::proto::frame::{read_frame, write_frame};
use crate::proto::messages::Message;
use crate::proto::sweep::SweepSpec;

use super::log::PersistentServer;

pub fn wall_clock_secs() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock before epoch")
        .as_secs_f64()
}

pub struct NetServer {
    pub addr: SocketAddr,
    server: Arc<Mutex<PersistentServer>>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl NetServer {
    /// Bind and start the accept loop plus the transitioner thread.
    pub fn start(
        bind: &str,
        server: Arc<Mutex<PersistentServer>>,
        transition_interval: Duration,
        spool_dir: Option<PathBuf>,
    ) -> std::io::Result<NetServer> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();

        {
            let server = Arc::clone(&server);
            let stop = Arc::clone(&stop);
            threads.push(std::thread::spawn(move || accept_loop(listener, server, stop)));
        }
        {
            let server = Arc::clone(&server);
            let stop = Arc::clone(&stop);
            threads.push(std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    if let Some(dir) = &spool_dir {
                        pick_up_spool(dir, &server);
                    }
                    {
                        let mut s = server.lock().expect("server lock");
                        if let Err(e) = s.transition(wall_clock_secs()) {
                            log::error!("transition failed: {e}");
                        }
                    }
                    std::thread::sleep(transition_interval);
                }
            }));
        }
        Ok(NetServer { addr, server, stop, threads })
    }

    /// The bound listen address (useful with port 0).
    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn server(&self) -> Arc<Mutex<PersistentServer>> {
        Arc::clone(&self.server)
    }

    pub fn stop(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn accept_loop(listener: TcpListener, server: Arc<Mutex<PersistentServer>>, stop: Arc<AtomicBool>) {
    for conn in listener.incoming() {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        match conn {
            Ok(stream) => {
                let server = Arc::clone(&server);
                std::thread::spawn(move || {
                    if let Err(e) = handle_connection(stream, &server) {
                        log::debug!("connection error: {e}");
                    }
                });
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
}

fn handle_connection(
    mut stream: TcpStream,
    server: &Arc<Mutex<PersistentServer>>,
) -> Result<(), crate::proto::ProtoError> {
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    let msg = match read_frame(&mut stream) {
        Ok(m) => m,
        Err(e) => {
            let _ = write_frame(&mut stream, &Message::Error { reason: e.to_string() });
            return Ok(());
        }
    };
    let reply = {
        let mut s = server.lock().expect("server lock");
        dispatch(&mut s, msg, wall_clock_secs())
    };
    write_frame(&mut stream, &reply)?;
    Ok(())
}

pub fn dispatch(server: &mut PersistentServer, msg: Message, now: f64) -> Message {
    match msg {
        Message::Register { platform, ncpus, benchmark_flops } => {
            match server.register(platform, ncpus, benchmark_flops, now) {
                Ok(host_id) => Message::RegisterAck { host_id },
                Err(e) => Message::Error { reason: e.to_string() },
            }
        }
        Message::RequestWork { host_id } => match server.handle_request_work(&host_id, now) {
            Ok(Some(a)) => Message::AssignWork {
                work_unit: a.work_unit,
                result_id: a.result_id,
                payloads: a.payloads,
                job: a.job,
            },
            Ok(None) => Message::NoWork,
            Err(e) => Message::Error { reason: e.to_string() },
        },
        Message::Heartbeat { host_id, result_id, progress_fraction } => {
            match server.record_heartbeat(&host_id, &result_id, progress_fraction, now) {
                Ok(warning) => Message::HeartbeatAck { warning },
                Err(e) => Message::Error { reason: e.to_string() },
            }
        }
        Message::SubmitResult { result_id, output, cpu_time, flops_estimate, error } => {
            let outcome = match error {
                Some(reason) => server.submit_error(&result_id, &reason, now),
                None => server.submit_result(&result_id, output, cpu_time, flops_estimate, now),
            };
            match outcome {
                Ok(accepted) => Message::SubmitAck { accepted },
                Err(e) => Message::Error { reason: e.to_string() },
            }
        }
        other => Message::Error { reason: format!("unexpected client message: {other:?}") },
    }
}

/// Submit any `*.sweep` files waiting in the spool directory, renaming them
/// to `.submitted` or `.rejected` so they are handled exactly once.
fn pick_up_spool(dir: &std::path::Path, server: &Arc<Mutex<PersistentServer>>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    let mut paths: Vec<PathBuf> = entries
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "sweep"))
        .collect();
    paths.sort();
    for path in paths {
        let outcome = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|text| SweepSpec::from_sweep_file(&text).map_err(|e| e.to_string()))
            .and_then(|spec| {
                let mut s = server.lock().expect("server lock");
                s.submit_sweep(&spec, wall_clock_secs()).map_err(|e| e.to_string())
            });
        let suffix = match &outcome {
            Ok(ids) => {
                log::info!("spool {}: {} work units created", path.display(), ids.len());
                "submitted"
            }
            Err(e) => {
                log::warn!("spool {} rejected: {e}", path.display());
                "rejected"
            }
        };
        let mut renamed = path.clone().into_os_string();
        renamed.push(format!(".{suffix}"));
        let _ = std::fs::rename(&path, renamed);
    }
}
