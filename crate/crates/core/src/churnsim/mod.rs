//! Discrete-event simulator of a volunteer host population.
//!
//! Hosts arrive (Poisson), live (exponential), alternate on/off periods,
//! request work while on and idle, "execute" work units in virtual time
//! `wu_flop / (flops * eff)`, and die mid-task (the task is lost and the
//! server's transitioner reissues it after the deadline). The simulator
//! drives the real [`ServerState`] scheduling and validation code through
//! its injected-time interface; nothing is reimplemented. A run is fully
//! determined by (config, seed).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use thiserror::Error;

use crate::metrics::{computing_power, FactorSet, SECS_PER_DAY};
use crate::proto::sign::KeyPair;
use crate::proto::{AppId, Platform, ResultId, WorkUnit, WuId, WuState};
use crate::server::{ServerConfig, ServerState, StateChange};

#[derive(Debug, Error)]
pub enum ChurnError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Server(#[from] crate::server::ServerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChurnConfig {
    /// Poisson arrival rate, hosts per day (0 disables arrivals)
    pub arrival_per_day: f64,
    /// hosts present at time zero
    pub initial_hosts: u32,
    /// exponential mean lifetime in days; infinity means immortal
    pub mean_life_days: f64,
    /// mean on-period in days
    pub mean_on_days: f64,
    /// mean off-period in days; 0 means always on
    pub mean_off_days: f64,
    /// fraction of on-time spent computing, in (0, 1]
    pub active_fraction: f64,
    /// payload efficiency: achieved FLOPS / benchmark FLOPS, in (0, 1]
    pub eff: f64,
    /// log-normal benchmark FLOPS: median and sigma (0 = deterministic)
    pub flops_median: f64,
    pub flops_sigma: f64,
    pub ncpus: u32,
    /// work per work unit, FLOP
    pub wu_flop: f64,
    /// work units fed to the server (size for no starvation)
    pub n_wus: u32,
    pub target_replicas: u32,
    pub min_quorum: u32,
    pub max_error_results: u32,
    pub deadline_secs: f64,
    /// probability a host submits corrupted output bytes
    pub corrupt_prob: f64,
    pub horizon_days: f64,
    /// virtual-time interval between transitioner sweeps
    pub transition_secs: f64,
    /// retry delay after a NoWork reply
    pub retry_secs: f64,
    pub seed: u64,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        ChurnConfig {
            arrival_per_day: 10.0,
            initial_hosts: 0,
            mean_life_days: 2.0,
            mean_on_days: 0.5,
            mean_off_days: 0.0,
            active_fraction: 1.0,
            eff: 1.0,
            flops_median: 1e9,
            flops_sigma: 0.0,
            ncpus: 1,
            wu_flop: 3600e9,
            n_wus: 1000,
            target_replicas: 1,
            min_quorum: 1,
            max_error_results: 10,
            deadline_secs: 4.0 * 3600.0,
            corrupt_prob: 0.0,
            horizon_days: 10.0,
            transition_secs: 1800.0,
            retry_secs: 600.0,
            seed: 1,
        }
    }
}

impl ChurnConfig {
    pub fn validate(&self) -> Result<(), ChurnError> {
        // `positive` also rejects NaN, unlike `<= 0.0` guards
        let positive = |v: f64| v > 0.0;
        let err = |m: &str| Err(ChurnError::Config(m.into()));
        if !positive(self.horizon_days) {
            return err("horizon must be positive");
        }
        if self.arrival_per_day < 0.0 {
            return err("arrival rate must be non-negative");
        }
        if self.arrival_per_day == 0.0 && self.initial_hosts == 0 {
            return err("no hosts: arrival rate 0 and no initial hosts");
        }
        if !positive(self.mean_life_days) {
            return err("mean lifetime must be positive");
        }
        if !positive(self.mean_on_days) || self.mean_off_days < 0.0 {
            return err("on/off period means must be positive (off may be 0)");
        }
        for (name, v) in [("active_fraction", self.active_fraction), ("eff", self.eff)] {
            if !(positive(v) && v <= 1.0) {
                return Err(ChurnError::Config(format!("{name} must be in (0, 1]")));
            }
        }
        if !positive(self.flops_median) || self.flops_sigma < 0.0 {
            return err("flops distribution parameters out of range");
        }
        if self.ncpus == 0 || self.n_wus == 0 || !positive(self.wu_flop) {
            return err("ncpus, n_wus and wu_flop must be positive");
        }
        if self.min_quorum == 0 || self.min_quorum > self.target_replicas {
            return err("need 1 <= min_quorum <= target_replicas");
        }
        if !positive(self.deadline_secs) || !positive(self.transition_secs) || !positive(self.retry_secs) {
            return err("deadline, transition and retry intervals must be positive");
        }
        if !(0.0..=1.0).contains(&self.corrupt_prob) {
            return err("corrupt_prob must be in [0, 1]");
        }
        Ok(())
    }

    /// Parse the flat `key=value` churn config file.
    pub fn from_config_file(text: &str) -> Result<ChurnConfig, ChurnError> {
        let mut cfg = ChurnConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ChurnError::Config(format!("line {}: expected key=value", lineno + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            let bad = |e: String| ChurnError::Config(format!("line {}: {k}: {e}", lineno + 1));
            let f = |v: &str| v.parse::<f64>().map_err(|e| bad(e.to_string()));
            let u = |v: &str| v.parse::<u32>().map_err(|e| bad(e.to_string()));
            match k {
                "arrival_per_day" => cfg.arrival_per_day = f(v)?,
                "initial_hosts" => cfg.initial_hosts = u(v)?,
                "mean_life_days" => {
                    cfg.mean_life_days = if v == "inf" { f64::INFINITY } else { f(v)? }
                }
                "mean_on_days" => cfg.mean_on_days = f(v)?,
                "mean_off_days" => cfg.mean_off_days = f(v)?,
                "active_fraction" => cfg.active_fraction = f(v)?,
                "eff" => cfg.eff = f(v)?,
                "flops_median" => cfg.flops_median = f(v)?,
                "flops_sigma" => cfg.flops_sigma = f(v)?,
                "ncpus" => cfg.ncpus = u(v)?,
                "wu_flop" => cfg.wu_flop = f(v)?,
                "n_wus" => cfg.n_wus = u(v)?,
                "target_replicas" => cfg.target_replicas = u(v)?,
                "min_quorum" => cfg.min_quorum = u(v)?,
                "max_error_results" => cfg.max_error_results = u(v)?,
                "deadline_secs" => cfg.deadline_secs = f(v)?,
                "corrupt_prob" => cfg.corrupt_prob = f(v)?,
                "horizon_days" => cfg.horizon_days = f(v)?,
                "transition_secs" => cfg.transition_secs = f(v)?,
                "retry_secs" => cfg.retry_secs = f(v)?,
                "seed" => cfg.seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                _ => return Err(ChurnError::Config(format!("line {}: unknown key {k}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The factor set predicted analytically from the configuration.
    /// `x_arrival * x_life` is the expected live host count; pre-seeded
    /// hosts are folded in as arrivals spread over the horizon.
    pub fn analytic_factors(&self) -> FactorSet {
        FactorSet {
            x_arrival: self.arrival_per_day + self.initial_hosts as f64 / self.horizon_days,
            x_life: self.mean_life_days.min(self.horizon_days),
            x_ncpus: self.ncpus as f64,
            x_flops: self.flops_median * (0.5 * self.flops_sigma * self.flops_sigma).exp() / 1e9,
            x_eff: self.eff,
            x_onfrac: if self.mean_off_days == 0.0 {
                1.0
            } else {
                self.mean_on_days / (self.mean_on_days + self.mean_off_days)
            },
            x_active: self.active_fraction,
            // replication divides distinct-WU throughput
            x_redundancy: 1.0 / self.target_replicas as f64,
            x_share: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Arrival,
    Departure,
    Off,
    On,
    Assigned,
    Completed,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    /// (time, kind, host index), time-ordered
    pub events: Vec<(f64, TraceKind, u32)>,
    /// (time, live host count) after every arrival/departure
    pub host_series: Vec<(f64, u32)>,
    /// completion time of each validated work unit's canonical result
    pub wu_completion_times: Vec<f64>,
    pub completed_wus: u64,
    pub useful_flop: f64,
    pub wall_span_secs: f64,
    /// conservation: issued = completed + timed_out + active_at_end
    pub issued_replicas: u64,
    /// uploads the server accepted (not yet timed out)
    pub completed_replicas: u64,
    /// tasks dropped client-side by death or power-off; each eventually
    /// shows up as a server timeout or is still pending at the horizon
    pub lost_replicas: u64,
    pub timed_out_replicas: u64,
    /// server-side Assigned/Running results at the horizon
    pub active_at_end: u64,
}

impl SimTrace {
    /// The host-count-over-time churn curve as CSV.
    pub fn host_series_csv(&self) -> String {
        let mut out = String::from("time_secs,live_hosts\n");
        for (t, n) in &self.host_series {
            out.push_str(&format!("{t:.1},{n}\n"));
        }
        out
    }
}

struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

enum EventKind {
    Arrival,
    Death { host: usize },
    Off { host: usize },
    On { host: usize },
    TaskDone { host: usize, token: u64 },
    RequestWork { host: usize },
    Tick,
}

impl PartialEq for Event {
    fn eq(&self, other: &Event) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Event) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// min-heap ordering: earliest time first, FIFO within a timestamp
impl Ord for Event {
    fn cmp(&self, other: &Event) -> Ordering {
        other
            .time
            .partial_cmp(&self.time)
            .expect("finite event times")
            .then(other.seq.cmp(&self.seq))
    }
}

struct SimHost {
    server_id: String,
    flops: f64,
    alive: bool,
    on: bool,
    /// token -> (result, wu, task duration); cleared on death/power-off
    running: BTreeMap<u64, (ResultId, WuId, f64)>,
}

struct Sim {
    cfg: ChurnConfig,
    server: ServerState,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Event>,
    next_seq: u64,
    next_token: u64,
    hosts: Vec<SimHost>,
    live: u32,
    trace: SimTrace,
    horizon: f64,
}

impl Sim {
    fn push(&mut self, time: f64, kind: EventKind) {
        if time > self.horizon {
            return;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
    }

    fn exp_secs(&mut self, mean_days: f64) -> f64 {
        if mean_days.is_infinite() {
            return f64::INFINITY;
        }
        Exp::new(1.0 / (mean_days * SECS_PER_DAY))
            .expect("positive rate")
            .sample(&mut self.rng)
    }

    fn spawn_host(&mut self, t: f64) {
        let flops = if self.cfg.flops_sigma == 0.0 {
            self.cfg.flops_median
        } else {
            LogNormal::new(self.cfg.flops_median.ln(), self.cfg.flops_sigma)
                .expect("valid lognormal")
                .sample(&mut self.rng)
        };
        let server_id = self.server.register(Platform::LinuxX86_64, self.cfg.ncpus, flops, t);
        let idx = self.hosts.len();
        self.hosts.push(SimHost { server_id, flops, alive: true, on: true, running: BTreeMap::new() });
        self.live += 1;
        self.trace.events.push((t, TraceKind::Arrival, idx as u32));
        self.trace.host_series.push((t, self.live));

        let life = self.exp_secs(self.cfg.mean_life_days);
        if life.is_finite() {
            self.push(t + life, EventKind::Death { host: idx });
        }
        if self.cfg.mean_off_days > 0.0 {
            let on_for = self.exp_secs(self.cfg.mean_on_days);
            self.push(t + on_for, EventKind::Off { host: idx });
        }
        for _ in 0..self.cfg.ncpus {
            self.push(t, EventKind::RequestWork { host: idx });
        }
    }

    fn drop_running(&mut self, idx: usize) {
        let n = self.hosts[idx].running.len() as u64;
        self.trace.lost_replicas += n;
        self.hosts[idx].running.clear();
    }

    fn request_work(&mut self, idx: usize, t: f64) {
        let h = &self.hosts[idx];
        if !h.alive || !h.on || h.running.len() >= self.cfg.ncpus as usize {
            return;
        }
        let server_id = h.server_id.clone();
        match self.server.handle_request_work(&server_id, t).expect("registered host") {
            Some(a) => {
                let duration = self.cfg.wu_flop / (self.hosts[idx].flops * self.cfg.eff);
                let token = self.next_token;
                self.next_token += 1;
                self.hosts[idx]
                    .running
                    .insert(token, (a.result_id, a.work_unit.wu_id, duration));
                self.trace.issued_replicas += 1;
                self.trace.events.push((t, TraceKind::Assigned, idx as u32));
                self.push(t + duration, EventKind::TaskDone { host: idx, token });
            }
            None => {
                self.push(t + self.cfg.retry_secs, EventKind::RequestWork { host: idx });
            }
        }
    }

    fn task_done(&mut self, idx: usize, token: u64, t: f64) {
        let Some((result_id, wu_id, duration)) = self.hosts[idx].running.remove(&token) else {
            // stale event: the host died or powered off with the task
            return;
        };
        let corrupt = self.cfg.corrupt_prob > 0.0 && self.rng.gen_bool(self.cfg.corrupt_prob);
        let output = if corrupt {
            format!("corrupt {wu_id} {result_id}").into_bytes()
        } else {
            format!("output {wu_id}").into_bytes()
        };
        // the server refuses uploads for replicas it already timed out
        if self.server.submit_result(&result_id, output, duration, self.cfg.wu_flop, t) {
            self.trace.completed_replicas += 1;
            self.trace.events.push((t, TraceKind::Completed, idx as u32));
        }
        // idle gap realizing the configured active fraction
        let idle = duration * (1.0 - self.cfg.active_fraction) / self.cfg.active_fraction;
        self.push(t + idle, EventKind::RequestWork { host: idx });
    }

    fn run(&mut self) {
        while let Some(e) = self.heap.pop() {
            let t = e.time;
            match e.kind {
                EventKind::Arrival => {
                    self.spawn_host(t);
                    let gap = self.exp_secs(1.0 / self.cfg.arrival_per_day);
                    self.push(t + gap, EventKind::Arrival);
                }
                EventKind::Death { host } => {
                    if self.hosts[host].alive {
                        self.hosts[host].alive = false;
                        self.drop_running(host);
                        self.live -= 1;
                        self.trace.events.push((t, TraceKind::Departure, host as u32));
                        self.trace.host_series.push((t, self.live));
                    }
                }
                EventKind::Off { host } => {
                    if self.hosts[host].alive && self.hosts[host].on {
                        self.hosts[host].on = false;
                        self.drop_running(host);
                        self.trace.events.push((t, TraceKind::Off, host as u32));
                        let off_for = self.exp_secs(self.cfg.mean_off_days);
                        self.push(t + off_for, EventKind::On { host });
                    }
                }
                EventKind::On { host } => {
                    if self.hosts[host].alive && !self.hosts[host].on {
                        self.hosts[host].on = true;
                        self.trace.events.push((t, TraceKind::On, host as u32));
                        let on_for = self.exp_secs(self.cfg.mean_on_days);
                        self.push(t + on_for, EventKind::Off { host });
                        for _ in 0..self.cfg.ncpus {
                            self.push(t, EventKind::RequestWork { host });
                        }
                    }
                }
                EventKind::RequestWork { host } => self.request_work(host, t),
                EventKind::TaskDone { host, token } => self.task_done(host, token, t),
                EventKind::Tick => {
                    for change in self.server.transition(t) {
                        if let StateChange::ResultTimedOut { .. } = change {
                            self.trace.timed_out_replicas += 1;
                        }
                    }
                    self.push(t + self.cfg.transition_secs, EventKind::Tick);
                }
            }
        }
    }
}

/// The deterministic output bytes an honest simulated host submits.
fn sim_wus(cfg: &ChurnConfig) -> Vec<WorkUnit> {
    (0..cfg.n_wus)
        .map(|i| WorkUnit {
            wu_id: format!("sim_{i:07}"),
            app_id: AppId::EmbeddedGp,
            input_refs: BTreeMap::new(),
            command_args: Vec::new(),
            target_replicas: cfg.target_replicas,
            min_quorum: cfg.min_quorum,
            max_error_results: cfg.max_error_results,
            deadline_secs: cfg.deadline_secs,
            state: WuState::Unsent,
            canonical_result_id: None,
        })
        .collect()
}

pub fn simulate(cfg: &ChurnConfig) -> Result<SimTrace, ChurnError> {
    cfg.validate()?;
    let key = KeyPair::from_secret_hex(&"42".repeat(32)).expect("fixed sim key");
    let mut server = ServerState::new(
        ServerConfig {
            // the simulator does not model heartbeats: loss is detected
            // through work-unit deadlines alone
            heartbeat_timeout_secs: f64::INFINITY,
            dead_threshold_secs: f64::INFINITY,
        },
        key,
    );
    server.submit_raw_wus("sim", sim_wus(cfg))?;

    let horizon = cfg.horizon_days * SECS_PER_DAY;
    let mut sim = Sim {
        cfg: cfg.clone(),
        server,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        heap: BinaryHeap::new(),
        next_seq: 0,
        next_token: 0,
        hosts: Vec::new(),
        live: 0,
        trace: SimTrace {
            events: Vec::new(),
            host_series: Vec::new(),
            wu_completion_times: Vec::new(),
            completed_wus: 0,
            useful_flop: 0.0,
            wall_span_secs: horizon,
            issued_replicas: 0,
            completed_replicas: 0,
            lost_replicas: 0,
            timed_out_replicas: 0,
            active_at_end: 0,
        },
        horizon,
    };
    for _ in 0..cfg.initial_hosts {
        sim.spawn_host(0.0);
    }
    if cfg.arrival_per_day > 0.0 {
        let gap = sim.exp_secs(1.0 / cfg.arrival_per_day);
        sim.push(gap, EventKind::Arrival);
    }
    sim.push(cfg.transition_secs, EventKind::Tick);
    sim.run();

    sim.trace.active_at_end = sim.server.active_result_count() as u64;
    for i in 0..cfg.n_wus {
        let wu_id = format!("sim_{i:07}");
        let Some(wu) = sim.server.work_unit(&wu_id) else { continue };
        if wu.state == WuState::Over {
            if let Some(canonical) = &wu.canonical_result_id {
                let done = sim.server.result(canonical).and_then(|r| r.completed_at);
                if let Some(t) = done {
                    sim.trace.wu_completion_times.push(t);
                }
            }
        }
    }
    sim.trace.wu_completion_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sim.trace.completed_wus = sim.trace.wu_completion_times.len() as u64;
    sim.trace.useful_flop = sim.trace.completed_wus as f64 * cfg.wu_flop;
    Ok(sim.trace)
}

/// Measured throughput in GFLOPS over the post-warm-up window, where
/// warm-up is the ramp to a steady host population (none if immortal).
pub fn measured_cp(cfg: &ChurnConfig, trace: &SimTrace) -> f64 {
    let warmup_days = if cfg.mean_life_days.is_finite() {
        (5.0 * cfg.mean_life_days).min(cfg.horizon_days / 2.0)
    } else {
        0.0
    };
    let warmup = warmup_days * SECS_PER_DAY;
    let window = cfg.horizon_days * SECS_PER_DAY - warmup;
    let completed_in_window = trace
        .wu_completion_times
        .iter()
        .filter(|&&t| t > warmup)
        .count() as f64;
    completed_in_window * cfg.wu_flop / window / 1e9
}

/// Compare the computing-power formula against measured simulator
/// throughput. Returns (cp_formula, cp_sim, ratio) in GFLOPS.
pub fn predicted_vs_simulated(cfg: &ChurnConfig) -> Result<(f64, f64, f64), ChurnError> {
    let trace = simulate(cfg)?;
    let cp_formula = computing_power(&cfg.analytic_factors()).expect("valid factors");
    let cp_sim = measured_cp(cfg, &trace);
    Ok((cp_formula, cp_sim, cp_sim / cp_formula))
}
