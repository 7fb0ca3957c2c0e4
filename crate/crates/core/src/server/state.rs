//! The project server's state machine.
//!
//! Every mutating method takes the current time explicitly. The TCP layer
//! feeds in wall-clock time and the churn simulator feeds in virtual time;
//! the scheduling, quorum-validation and assimilation logic is the same in
//! both. With the same command sequence (including timestamps) the state is
//! fully reproducible, which is what makes event-log replay work.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::gp::artifact;
use crate::metrics::{HostLog, HostLogEntry, ResultSample};
use crate::proto::sign::{sign, KeyPair};
use crate::proto::sweep::{expand_sweep, SweepSpec};
use crate::proto::{
    AppId, HostId, HostRecord, JobDescriptor, Platform, ResultId, ResultRecord, ResultState,
    SignedPayload, WorkUnit, WuId, WuState,
};

use super::ServerError;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Replica considered lost after this long without a heartbeat.
    pub heartbeat_timeout_secs: f64,
    /// Host marked inactive after this long without any contact.
    pub dead_threshold_secs: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            // 5x the client's default 10s heartbeat interval
            heartbeat_timeout_secs: 50.0,
            dead_threshold_secs: 86_400.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepMeta {
    pub spec: SweepSpec,
    pub wu_ids: Vec<WuId>,
    pub submitted_at: f64,
}

/// One assimilated canonical result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssimilationEntry {
    pub sweep: String,
    pub wu_id: WuId,
    pub result_id: ResultId,
    pub host_id: HostId,
    pub hits: u64,
    pub raw: f64,
    pub adjusted: f64,
    pub best_tree: String,
    pub cpu_time: f64,
    pub completed_at: f64,
}

/// State changes reported by [`ServerState::transition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StateChange {
    ResultTimedOut { result_id: ResultId, wu_id: WuId },
    WuValidated { wu_id: WuId, canonical: ResultId },
    WuNeedsMoreReplicas { wu_id: WuId },
    WuFailed { wu_id: WuId },
    WuFlagged { wu_id: WuId, reason: String },
    HostInactive { host_id: HostId },
}

struct WuEntry {
    wu: WorkUnit,
    /// grows by one each time validation asks for an extra replica
    replicas_wanted: u32,
    /// creation sequence number; scheduling is FIFO over this
    seq: u64,
    sweep: String,
    job: Option<JobDescriptor>,
}

pub struct ServerState {
    config: ServerConfig,
    key: KeyPair,
    hosts: BTreeMap<HostId, HostRecord>,
    wus: BTreeMap<WuId, WuEntry>,
    results: BTreeMap<ResultId, ResultRecord>,
    results_by_wu: BTreeMap<WuId, Vec<ResultId>>,
    /// results in Assigned/Running, the only ones transition() must scan
    active_results: BTreeSet<ResultId>,
    /// work units still wanting a replica, in FIFO creation order
    pending: BTreeSet<(u64, WuId)>,
    outputs: BTreeMap<ResultId, Vec<u8>>,
    payloads: BTreeMap<String, SignedPayload>,
    sweeps: BTreeMap<String, SweepMeta>,
    ledger: Vec<AssimilationEntry>,
    flagged: Vec<(WuId, String)>,
    next_result_seq: u64,
    next_host_seq: u64,
    next_wu_seq: u64,
    first_registration: Option<f64>,
    last_upload: Option<f64>,
}

pub struct Assignment {
    pub work_unit: WorkUnit,
    pub result_id: ResultId,
    pub payloads: BTreeMap<String, SignedPayload>,
    pub job: Option<JobDescriptor>,
}

impl ServerState {
    pub fn new(config: ServerConfig, key: KeyPair) -> ServerState {
        ServerState {
            config,
            key,
            hosts: BTreeMap::new(),
            wus: BTreeMap::new(),
            results: BTreeMap::new(),
            results_by_wu: BTreeMap::new(),
            active_results: BTreeSet::new(),
            pending: BTreeSet::new(),
            outputs: BTreeMap::new(),
            payloads: BTreeMap::new(),
            sweeps: BTreeMap::new(),
            ledger: Vec::new(),
            flagged: Vec::new(),
            next_result_seq: 1,
            next_host_seq: 1,
            next_wu_seq: 0,
            first_registration: None,
            last_upload: None,
        }
    }

    pub fn public_key_hex(&self) -> String {
        self.key.public_hex()
    }

    pub fn register(&mut self, platform: Platform, ncpus: u32, benchmark_flops: f64, now: f64) -> HostId {
        let host_id = format!("h{:06}", self.next_host_seq);
        self.next_host_seq += 1;
        self.first_registration.get_or_insert(now);
        self.hosts.insert(
            host_id.clone(),
            HostRecord {
                host_id: host_id.clone(),
                platform,
                ncpus,
                benchmark_flops,
                first_contact: now,
                last_contact: now,
                on_fraction: 1.0,
                active_fraction: 1.0,
                active: true,
            },
        );
        host_id
    }

    /// Persist a sweep's work units. Idempotent: resubmitting an identical
    /// spec creates nothing; a different spec under the same name is refused.
    pub fn submit_sweep(&mut self, spec: &SweepSpec, now: f64) -> Result<Vec<WuId>, ServerError> {
        if let Some(existing) = self.sweeps.get(&spec.name) {
            if existing.spec == *spec {
                return Ok(Vec::new());
            }
            return Err(ServerError::DuplicateSweep(spec.name.clone()));
        }
        let expanded = expand_sweep(spec)?;
        let mut wu_ids = Vec::with_capacity(expanded.len());
        for e in expanded {
            for (name, bytes) in &e.payloads {
                let digest = e.wu.input_refs[name].clone();
                self.payloads.entry(digest).or_insert_with(|| sign(bytes, &self.key));
            }
            let seq = self.next_wu_seq;
            self.next_wu_seq += 1;
            wu_ids.push(e.wu.wu_id.clone());
            self.pending.insert((seq, e.wu.wu_id.clone()));
            let job = (spec.app == AppId::Wrapped).then(default_wrapped_job);
            self.wus.insert(
                e.wu.wu_id.clone(),
                WuEntry {
                    replicas_wanted: e.wu.target_replicas,
                    seq,
                    sweep: spec.name.clone(),
                    wu: e.wu,
                    job,
                },
            );
        }
        self.sweeps.insert(
            spec.name.clone(),
            SweepMeta { spec: spec.clone(), wu_ids: wu_ids.clone(), submitted_at: now },
        );
        Ok(wu_ids)
    }

    /// Ingest pre-built work units directly, bypassing sweep expansion.
    /// Used by the churn simulator and by tests; payload references must
    /// already be present or empty.
    pub fn submit_raw_wus(&mut self, sweep_name: &str, wus: Vec<WorkUnit>) -> Result<Vec<WuId>, ServerError> {
        let mut wu_ids = Vec::with_capacity(wus.len());
        for wu in wus {
            wu.validate()?;
            if self.wus.contains_key(&wu.wu_id) {
                return Err(ServerError::DuplicateSweep(wu.wu_id));
            }
            for digest in wu.input_refs.values() {
                if !self.payloads.contains_key(digest) {
                    return Err(ServerError::Proto(crate::proto::ProtoError::Config(format!(
                        "work unit {} references unknown payload {digest}",
                        wu.wu_id
                    ))));
                }
            }
            let seq = self.next_wu_seq;
            self.next_wu_seq += 1;
            wu_ids.push(wu.wu_id.clone());
            self.pending.insert((seq, wu.wu_id.clone()));
            self.wus.insert(
                wu.wu_id.clone(),
                WuEntry {
                    replicas_wanted: wu.target_replicas,
                    seq,
                    sweep: sweep_name.to_string(),
                    wu,
                    job: None,
                },
            );
        }
        Ok(wu_ids)
    }

    fn touch_host(&mut self, host_id: &HostId, now: f64) {
        if let Some(h) = self.hosts.get_mut(host_id) {
            h.last_contact = h.last_contact.max(now);
            h.active = true;
        }
    }

    fn wu_results(&self, wu_id: &WuId) -> impl Iterator<Item = &ResultRecord> {
        self.results_by_wu
            .get(wu_id)
            .into_iter()
            .flatten()
            .map(|id| &self.results[id])
    }

    /// Count of non-failed replicas (live or validated) for a work unit.
    fn live_replicas(&self, wu_id: &WuId) -> u32 {
        self.wu_results(wu_id)
            .filter(|r| {
                matches!(
                    r.state,
                    ResultState::Assigned | ResultState::Running | ResultState::Uploaded | ResultState::Valid
                )
            })
            .count() as u32
    }

    fn failed_replicas(&self, wu_id: &WuId) -> u32 {
        self.wu_results(wu_id)
            .filter(|r| matches!(r.state, ResultState::TimedOut | ResultState::Invalid | ResultState::Error))
            .count() as u32
    }

    fn host_has_replica(&self, wu_id: &WuId, host_id: &HostId) -> bool {
        self.wu_results(wu_id).any(|r| r.host_id == *host_id)
    }

    /// Re-derive a work unit's membership in the pending queue.
    fn refresh_pending(&mut self, wu_id: &WuId) {
        let entry = &self.wus[wu_id];
        let key = (entry.seq, wu_id.clone());
        if entry.wu.state != WuState::Over && self.live_replicas(wu_id) < entry.replicas_wanted {
            self.pending.insert(key);
        } else {
            self.pending.remove(&key);
        }
    }

    /// FIFO scheduling: the oldest work unit that still wants a replica and
    /// has never been assigned to this host.
    pub fn handle_request_work(&mut self, host_id: &HostId, now: f64) -> Result<Option<Assignment>, ServerError> {
        if !self.hosts.contains_key(host_id) {
            return Err(ServerError::UnknownHost(host_id.clone()));
        }
        self.touch_host(host_id, now);
        let chosen = self
            .pending
            .iter()
            .find(|(_, wu_id)| !self.host_has_replica(wu_id, host_id))
            .map(|(_, wu_id)| wu_id.clone());
        let Some(wu_id) = chosen else { return Ok(None) };

        let result_id = format!("r{:06}", self.next_result_seq);
        self.next_result_seq += 1;
        self.results.insert(
            result_id.clone(),
            ResultRecord {
                result_id: result_id.clone(),
                wu_id: wu_id.clone(),
                host_id: host_id.clone(),
                state: ResultState::Assigned,
                output_digest: None,
                cpu_time: 0.0,
                flops_estimate: 0.0,
                assigned_at: now,
                last_heartbeat: now,
                completed_at: None,
                progress: 0.0,
            },
        );
        self.results_by_wu.entry(wu_id.clone()).or_default().push(result_id.clone());
        self.active_results.insert(result_id.clone());
        let entry = self.wus.get_mut(&wu_id).expect("chosen wu exists");
        if entry.wu.state == WuState::Unsent {
            entry.wu.state = WuState::InProgress;
        }
        let payloads = entry
            .wu
            .input_refs
            .iter()
            .map(|(name, digest)| (name.clone(), self.payloads[digest].clone()))
            .collect();
        let assignment = Assignment {
            work_unit: entry.wu.clone(),
            result_id,
            payloads,
            job: entry.job.clone(),
        };
        self.refresh_pending(&wu_id);
        Ok(Some(assignment))
    }

    /// Returns a warning string for anomalous but tolerated heartbeats.
    pub fn record_heartbeat(
        &mut self,
        host_id: &HostId,
        result_id: &ResultId,
        progress: f64,
        now: f64,
    ) -> Option<String> {
        self.touch_host(host_id, now);
        let Some(r) = self.results.get_mut(result_id) else {
            return Some(format!("unknown result {result_id}"));
        };
        match r.state {
            ResultState::Assigned | ResultState::Running => {
                r.state = ResultState::Running;
                r.last_heartbeat = now;
                if progress < r.progress {
                    // client restarted from a checkpoint; allowed
                    log::warn!("result {result_id}: progress regressed {} -> {progress}", r.progress);
                }
                r.progress = progress;
                None
            }
            state => Some(format!("heartbeat for result {result_id} in state {state:?}")),
        }
    }

    pub fn submit_result(
        &mut self,
        result_id: &ResultId,
        output: Vec<u8>,
        cpu_time: f64,
        flops_estimate: f64,
        now: f64,
    ) -> bool {
        let Some(r) = self.results.get_mut(result_id) else { return false };
        if !matches!(r.state, ResultState::Assigned | ResultState::Running) {
            return false;
        }
        let host_id = r.host_id.clone();
        let wu_id = r.wu_id.clone();
        r.state = ResultState::Uploaded;
        r.output_digest = Some(hex::encode(sha2::Sha256::digest(&output)));
        r.cpu_time = cpu_time;
        r.flops_estimate = flops_estimate;
        r.completed_at = Some(now);
        r.last_heartbeat = now;
        r.progress = 1.0;
        self.active_results.remove(result_id);
        self.outputs.insert(result_id.clone(), output);
        self.touch_host(&host_id, now);
        self.last_upload = Some(self.last_upload.map_or(now, |t| t.max(now)));
        // quorum may already be reached; validation also runs from transition()
        let mut changes = Vec::new();
        self.maybe_validate(&wu_id, &mut changes);
        true
    }

    /// Record a client-reported failure (refused payload, failed program).
    pub fn submit_error(&mut self, result_id: &ResultId, reason: &str, now: f64) -> bool {
        let Some(r) = self.results.get_mut(result_id) else { return false };
        if !matches!(r.state, ResultState::Assigned | ResultState::Running) {
            return false;
        }
        let host_id = r.host_id.clone();
        let wu_id = r.wu_id.clone();
        r.state = ResultState::Error;
        r.completed_at = Some(now);
        r.last_heartbeat = now;
        self.active_results.remove(result_id);
        log::warn!("result {result_id} failed on {host_id}: {reason}");
        self.touch_host(&host_id, now);
        // the error may exhaust the work unit's error budget
        let mut changes = Vec::new();
        self.maybe_validate(&wu_id, &mut changes);
        self.refresh_pending(&wu_id);
        true
    }

    /// Periodic sweep of the work-unit and result state machines.
    pub fn transition(&mut self, now: f64) -> Vec<StateChange> {
        let mut changes = Vec::new();

        // heartbeat timeouts and deadline overruns, live results only
        let timed_out: Vec<(ResultId, WuId)> = self
            .active_results
            .iter()
            .map(|id| &self.results[id])
            .filter(|r| {
                let deadline = self.wus[&r.wu_id].wu.deadline_secs;
                now - r.last_heartbeat > self.config.heartbeat_timeout_secs
                    || now - r.assigned_at > deadline
            })
            .map(|r| (r.result_id.clone(), r.wu_id.clone()))
            .collect();
        for (result_id, wu_id) in timed_out {
            self.results.get_mut(&result_id).unwrap().state = ResultState::TimedOut;
            self.active_results.remove(&result_id);
            // a timeout may trigger validation (budget) or free a replica
            self.maybe_validate(&wu_id, &mut changes);
            self.refresh_pending(&wu_id);
            changes.push(StateChange::ResultTimedOut { result_id, wu_id });
        }

        // silent hosts
        for h in self.hosts.values_mut() {
            if h.active && now - h.last_contact > self.config.dead_threshold_secs {
                h.active = false;
                changes.push(StateChange::HostInactive { host_id: h.host_id.clone() });
            }
        }
        changes
    }

    /// Validation per the quorum rule: group Uploaded results by identical
    /// output bytes; the largest group wins if it reaches min_quorum, its
    /// lowest result_id becoming canonical. Arrival order never matters.
    fn maybe_validate(&mut self, wu_id: &WuId, changes: &mut Vec<StateChange>) {
        let entry = match self.wus.get(wu_id) {
            Some(e) if e.wu.state != WuState::Over => e,
            _ => return,
        };
        let max_extra = entry.wu.max_error_results;
        let min_quorum = entry.wu.min_quorum;
        let target = entry.wu.target_replicas;

        // error bound first: too many failed replicas ends the work unit
        if self.failed_replicas(wu_id) > max_extra {
            let entry = self.wus.get_mut(wu_id).unwrap();
            entry.wu.state = WuState::Over;
            changes.push(StateChange::WuFailed { wu_id: wu_id.clone() });
            self.refresh_pending(wu_id);
            return;
        }

        let uploaded: Vec<&ResultRecord> = self
            .wu_results(wu_id)
            .filter(|r| r.state == ResultState::Uploaded)
            .collect();
        if (uploaded.len() as u32) < min_quorum {
            return;
        }

        // group by output digest; deterministic in (size, lowest member id)
        let mut groups: BTreeMap<&str, Vec<ResultId>> = BTreeMap::new();
        for r in &uploaded {
            groups
                .entry(r.output_digest.as_deref().expect("uploaded result has digest"))
                .or_default()
                .push(r.result_id.clone());
        }
        let mut best: Option<(usize, ResultId, Vec<ResultId>)> = None;
        for (_, mut members) in groups {
            members.sort();
            let candidate = (members.len(), members[0].clone(), members);
            best = Some(match best.take() {
                None => candidate,
                Some(cur) => {
                    if candidate.0 > cur.0 || (candidate.0 == cur.0 && candidate.1 < cur.1) {
                        candidate
                    } else {
                        cur
                    }
                }
            });
        }
        let (size, canonical, members) = best.expect("at least one group");

        if (size as u32) >= min_quorum {
            let ids: Vec<ResultId> = uploaded.iter().map(|r| r.result_id.clone()).collect();
            for id in ids {
                let r = self.results.get_mut(&id).unwrap();
                r.state = if members.contains(&id) { ResultState::Valid } else { ResultState::Invalid };
            }
            let entry = self.wus.get_mut(wu_id).unwrap();
            entry.wu.state = WuState::Over;
            entry.wu.canonical_result_id = Some(canonical.clone());
            changes.push(StateChange::WuValidated { wu_id: wu_id.clone(), canonical: canonical.clone() });
            self.refresh_pending(wu_id);
            self.assimilate(&canonical, changes);
        } else {
            // disagreement: ask for one extra replica if none is already
            // outstanding and the error budget allows it
            let live = self.live_replicas(wu_id);
            let issued_total = live + self.failed_replicas(wu_id);
            if live >= self.wus[wu_id].replicas_wanted && issued_total < target + max_extra {
                self.wus.get_mut(wu_id).unwrap().replicas_wanted += 1;
                changes.push(StateChange::WuNeedsMoreReplicas { wu_id: wu_id.clone() });
                self.refresh_pending(wu_id);
            }
        }
    }

    /// Parse the canonical output and append it to the experiment ledger.
    fn assimilate(&mut self, result_id: &ResultId, changes: &mut Vec<StateChange>) {
        let r = self.results[result_id].clone();
        let sweep = self.wus[&r.wu_id].sweep.clone();
        let output = self.outputs.get(result_id).cloned().unwrap_or_default();
        let text = match std::str::from_utf8(&output) {
            Ok(t) => t,
            Err(_) => {
                self.flagged.push((r.wu_id.clone(), "output is not utf-8".into()));
                changes.push(StateChange::WuFlagged { wu_id: r.wu_id, reason: "output is not utf-8".into() });
                return;
            }
        };
        match artifact::parse(text) {
            Ok(parsed) => self.ledger.push(AssimilationEntry {
                sweep,
                wu_id: r.wu_id,
                result_id: r.result_id,
                host_id: r.host_id,
                hits: parsed.hits,
                raw: parsed.raw,
                adjusted: parsed.adjusted,
                best_tree: parsed.best_tree,
                cpu_time: r.cpu_time,
                completed_at: r.completed_at.unwrap_or(0.0),
            }),
            Err(e) => {
                self.flagged.push((r.wu_id.clone(), e.to_string()));
                changes.push(StateChange::WuFlagged { wu_id: r.wu_id, reason: e.to_string() });
            }
        }
    }

    /// Per-host contact history for factor estimation.
    pub fn export_host_log(&self) -> HostLog {
        let mut samples: BTreeMap<&HostId, Vec<ResultSample>> = BTreeMap::new();
        for r in self.results.values() {
            if r.state == ResultState::Valid {
                samples
                    .entry(&r.host_id)
                    .or_default()
                    .push(ResultSample { cpu_time: r.cpu_time, flops_estimate: r.flops_estimate });
            }
        }
        let entries = self
            .hosts
            .values()
            .map(|h| {
                let results = samples.remove(&h.host_id).unwrap_or_default();
                let busy: f64 = results.iter().map(|s| s.cpu_time).sum();
                let life = (h.last_contact - h.first_contact).max(0.0);
                HostLogEntry {
                    host_id: h.host_id.clone(),
                    first_contact: h.first_contact,
                    last_contact: h.last_contact,
                    ncpus: h.ncpus,
                    benchmark_flops: h.benchmark_flops,
                    on_time: life,
                    busy_time: busy,
                    results,
                }
            })
            .collect();
        HostLog { entries }
    }

    // read-only views used by status/report and tests

    pub fn host(&self, host_id: &HostId) -> Option<&HostRecord> {
        self.hosts.get(host_id)
    }

    pub fn hosts(&self) -> impl Iterator<Item = &HostRecord> {
        self.hosts.values()
    }

    pub fn work_unit(&self, wu_id: &WuId) -> Option<&WorkUnit> {
        self.wus.get(wu_id).map(|e| &e.wu)
    }

    pub fn sweep(&self, name: &str) -> Option<&SweepMeta> {
        self.sweeps.get(name)
    }

    pub fn sweeps(&self) -> impl Iterator<Item = &SweepMeta> {
        self.sweeps.values()
    }

    pub fn results_for_wu<'a>(&'a self, wu_id: &'a WuId) -> impl Iterator<Item = &'a ResultRecord> {
        self.wu_results(wu_id)
    }

    pub fn result(&self, result_id: &ResultId) -> Option<&ResultRecord> {
        self.results.get(result_id)
    }

    pub fn output_bytes(&self, result_id: &ResultId) -> Option<&[u8]> {
        self.outputs.get(result_id).map(|v| v.as_slice())
    }

    pub fn signed_payload(&self, digest: &str) -> Option<&SignedPayload> {
        self.payloads.get(digest)
    }

    /// Results still awaiting upload (Assigned or Running).
    pub fn active_result_count(&self) -> usize {
        self.active_results.len()
    }

    pub fn ledger(&self) -> &[AssimilationEntry] {
        &self.ledger
    }

    pub fn flagged(&self) -> &[(WuId, String)] {
        &self.flagged
    }

    pub fn first_registration(&self) -> Option<f64> {
        self.first_registration
    }

    pub fn last_upload(&self) -> Option<f64> {
        self.last_upload
    }
}

fn default_wrapped_job() -> JobDescriptor {
    JobDescriptor {
        program: "program".into(),
        input_files: vec!["params".into()],
        output_files: vec!["output.txt".into()],
        command_args: vec![],
        checkpoint_file: "checkpoint.dat".into(),
        solution_file: "solution.txt".into(),
    }
}
