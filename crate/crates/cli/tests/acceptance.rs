//! Acceptance suite. Each test covers one acceptance criterion end to end
//! and prints a single PASS line on success (visible with --nocapture);
//! a failed criterion fails its test.

use std::collections::BTreeMap;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voluntier_core::churnsim::{predicted_vs_simulated, ChurnConfig};
use voluntier_core::client::daemon::{exchange, process_assignment, register, verify_payloads};
use voluntier_core::client::{execute_wrapped, ClientConfig, WrapperAction};
use voluntier_core::gp::breed::random_tree;
use voluntier_core::gp::multiplexer::{evaluate_multiplexer, total_cases};
use voluntier_core::gp::params::{GpParams, ProblemId, RunSpec};
use voluntier_core::gp::primitives::PrimitiveSet;
use voluntier_core::gp::run::{run_gp, GpRunState};
use voluntier_core::gp::tree::ProgramTree;
use voluntier_core::gp::{artifact, EvalReport};
use voluntier_core::metrics::speedup;
use voluntier_core::proto::sign::{sign, KeyPair};
use voluntier_core::proto::{expand_sweep, JobDescriptor, Message, ResultState, SweepSpec, WuState};
use voluntier_core::server::{NetServer, PersistentServer, ServerConfig, ServerState};

fn pass(n: u32, what: &str) {
    println!("criterion {n} ({what}): PASS");
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_published_speedup_table() {
    let round = |x: f64, dp: i32| (x * 10f64.powi(dp)).round() / 10f64.powi(dp);
    let table: &[(f64, f64, f64, i32)] = &[
        (4250.0, 1548.0, 2.7455, 4),
        (650.0, 395.0, 1.6456, 4),
        (9200.0, 2356.0, 3.9049, 4),
        (4250.0, 1033.0, 4.1142, 4),
        (9200.0, 1623.0, 5.6685, 4),
        (134078.0, 462259.0, 0.29, 2),
        (1305330.0, 669759.0, 1.95, 2),
        (215.0 * 3600.0, 48.0 * 3600.0, 4.48, 2),
    ];
    for &(t_seq, t_b, printed, dp) in table {
        let acc = speedup(t_seq, t_b).unwrap();
        assert_eq!(round(acc, dp), printed, "speedup({t_seq}, {t_b})");
    }
    pass(1, "published speedup values");
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_fitness_identity() {
    let cases = total_cases(4);
    assert_eq!(cases, 1 << 20);
    let report = EvalReport::from_hits(868_352, cases);
    assert_eq!(report.raw, 180_224.0);
    assert_eq!(format!("{:.5e}", report.adjusted), "5.54862e-6");
    pass(2, "k=4 fitness identity");
}

// ---------------------------------------------------------------- 3

/// Truth-table oracle, independent of the bitmask evaluator: walks the
/// tree once per input assignment. Assignment bit `i` is input variable
/// `i` in terminal order a0..a(k-1), d0..d(2^k-1); the true output is the
/// data bit addressed by the a-bits (a0 least significant).
fn oracle_hits(tree: &ProgramTree, k: u32, pset: &PrimitiveSet) -> u64 {
    fn eval(tree: &ProgramTree, pset: &PrimitiveSet, pos: &mut usize, case: u64) -> bool {
        let id = tree.nodes()[*pos];
        *pos += 1;
        if pset.is_terminal(id) {
            return (case >> pset.terminal_index(id)) & 1 == 1;
        }
        match pset.name(id) {
            "AND" => {
                let a = eval(tree, pset, pos, case);
                let b = eval(tree, pset, pos, case);
                a && b
            }
            "OR" => {
                let a = eval(tree, pset, pos, case);
                let b = eval(tree, pset, pos, case);
                a || b
            }
            "NOT" => !eval(tree, pset, pos, case),
            "IF" => {
                let c = eval(tree, pset, pos, case);
                let t = eval(tree, pset, pos, case);
                let e = eval(tree, pset, pos, case);
                if c {
                    t
                } else {
                    e
                }
            }
            other => panic!("unknown function {other}"),
        }
    }
    let mut hits = 0;
    for case in 0..total_cases(k) {
        let addr = case & ((1 << k) - 1);
        let want = (case >> (k as u64 + addr)) & 1 == 1;
        let mut pos = 0;
        if eval(tree, pset, &mut pos, case) == want {
            hits += 1;
        }
    }
    hits
}

#[test]
fn criterion_03_multiplexer_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for k in [1u32, 2] {
        let pset = PrimitiveSet::multiplexer(k).unwrap();
        for i in 0..500 {
            let depth = 2 + (i % 5);
            let tree = random_tree(&pset, depth, i % 2 == 0, &mut rng);
            let fast = evaluate_multiplexer(&tree, k, &pset).unwrap().hits;
            let slow = oracle_hits(&tree, k, &pset);
            assert_eq!(fast, slow, "k={k} tree {}", tree.to_sexpr(&pset));
        }
    }
    pass(3, "multiplexer oracle equivalence");
}

// ---------------------------------------------------------------- 4

#[test]
#[ignore = "slow: 30 full 11-multiplexer runs at Koza parameters"]
fn criterion_04_perfect_solution_rate() {
    let mut perfect = 0;
    for seed in 1..=30u64 {
        let spec = RunSpec {
            problem: ProblemId::Multiplexer(3),
            params: GpParams {
                population_size: 4000,
                generations: 50,
                seed,
                ..GpParams::default()
            },
        };
        let result = run_gp(&spec, None, None).unwrap();
        if result.best.hits == 2048 {
            perfect += 1;
        }
    }
    assert!(perfect * 10 >= 30 * 4, "only {perfect}/30 runs found hits=2048");
    pass(4, "perfect-solution rate");
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_checkpoint_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..50 {
        let problem = match trial % 3 {
            0 => ProblemId::Multiplexer(1),
            1 => ProblemId::Multiplexer(2),
            _ => ProblemId::SantaFe,
        };
        let generations = rng.gen_range(3..=8);
        let spec = RunSpec {
            problem,
            params: GpParams {
                population_size: rng.gen_range(20..=100),
                generations,
                seed: rng.gen(),
                ..GpParams::default()
            },
        };
        let uninterrupted = run_gp(&spec, None, None).unwrap();
        let straight = artifact::render(&spec, &uninterrupted);

        // run to the kill point, snapshot, resume from the snapshot
        let kill_at = rng.gen_range(1..generations);
        let mut state = GpRunState::new(spec.clone()).unwrap();
        while state.generation() < kill_at {
            state.step();
        }
        let cp = state.checkpoint();
        let resumed = run_gp(&spec, None, Some(cp)).unwrap();
        let rejoined = artifact::render(&spec, &resumed);
        assert_eq!(straight, rejoined, "trial {trial} diverged after resume at gen {kill_at}");
    }
    pass(5, "checkpoint determinism");
}

// ------------------------------------------------------- 6/7 plumbing

struct Cluster {
    net: NetServer,
    clients: Vec<Child>,
    dir: tempfile::TempDir,
    public_key_hex: String,
}

impl Cluster {
    fn start(config: ServerConfig) -> Cluster {
        let dir = tempfile::tempdir().unwrap();
        let key = KeyPair::generate();
        let public_key_hex = key.public_hex();
        let server = PersistentServer::open(&dir.path().join("events.log"), config, key).unwrap();
        let net = NetServer::start(
            "127.0.0.1:0",
            Arc::new(Mutex::new(server)),
            Duration::from_millis(500),
            None,
        )
        .unwrap();
        Cluster { net, clients: Vec::new(), dir, public_key_hex }
    }

    fn spawn_clients(&mut self, n: usize) {
        for i in 0..n {
            let data = self.dir.path().join(format!("client{i}"));
            let conf = ClientConfig {
                server_addr: self.net.addr().to_string(),
                public_key_hex: self.public_key_hex.clone(),
                data_dir: data.clone(),
                heartbeat_interval_secs: 1.0,
                ..ClientConfig::default()
            };
            let conf_path = self.dir.path().join(format!("client{i}.conf"));
            std::fs::write(&conf_path, conf.to_config_file()).unwrap();
            let child = Command::new(env!("CARGO_BIN_EXE_voluntier"))
                .args(["client", "run", "--config"])
                .arg(&conf_path)
                .stdout(Stdio::null())
                .stderr(Stdio::null())
                .spawn()
                .unwrap();
            self.clients.push(child);
        }
    }

    fn submit(&self, spec: &SweepSpec) {
        let server = self.net.server();
        let now = voluntier_core::server::wall_clock_secs();
        server.lock().unwrap().submit_sweep(spec, now).unwrap();
    }

    fn with_state<T>(&self, f: impl FnOnce(&ServerState) -> T) -> T {
        let server = self.net.server();
        let guard = server.lock().unwrap();
        f(&guard.state)
    }

    fn wait_all_over(&self, sweeps: &[&SweepSpec], timeout: Duration) {
        let t0 = Instant::now();
        loop {
            let done = self.with_state(|s| {
                sweeps.iter().all(|spec| {
                    s.sweep(&spec.name)
                        .map(|m| {
                            m.wu_ids
                                .iter()
                                .all(|id| s.work_unit(id).unwrap().state == WuState::Over)
                        })
                        .unwrap_or(false)
                })
            });
            if done {
                return;
            }
            assert!(t0.elapsed() < timeout, "sweeps did not finish within {timeout:?}");
            std::thread::sleep(Duration::from_millis(300));
        }
    }

    fn assert_canonical_outputs_match_standalone(&self, spec: &SweepSpec) {
        for wu in expand_sweep(spec).unwrap() {
            let expected = artifact::render(&wu.run_spec, &run_gp(&wu.run_spec, None, None).unwrap());
            self.with_state(|s| {
                let unit = s.work_unit(&wu.wu.wu_id).unwrap();
                assert_eq!(unit.state, WuState::Over, "{} not Over", wu.wu.wu_id);
                let canonical = unit
                    .canonical_result_id
                    .as_ref()
                    .unwrap_or_else(|| panic!("{} ended without a canonical result", wu.wu.wu_id));
                let bytes = s.output_bytes(canonical).unwrap();
                assert_eq!(
                    bytes,
                    expected.as_bytes(),
                    "{} canonical output differs from standalone run",
                    wu.wu.wu_id
                );
            });
        }
    }

    fn shutdown(mut self) {
        for c in &mut self.clients {
            let _ = c.kill();
            let _ = c.wait();
        }
        self.net.stop();
    }
}

fn mux_sweep(name: &str, k: u32, pop: usize, gens: usize, replicates: u32, target: u32, quorum: u32) -> SweepSpec {
    SweepSpec {
        name: name.into(),
        app: voluntier_core::proto::AppId::EmbeddedGp,
        base: BTreeMap::from([
            ("problem".into(), format!("multiplexer{k}")),
            ("population_size".into(), pop.to_string()),
            ("generations".into(), gens.to_string()),
        ]),
        dims: BTreeMap::new(),
        replicates,
        seed_base: 9000,
        target_replicas: target,
        min_quorum: quorum,
        max_error_results: 5,
        deadline_secs: 600.0,
    }
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_end_to_end_sweep() {
    let mut cluster = Cluster::start(ServerConfig::default());
    // 20-WU 6-mux sweep at quorum 1, 10-WU sweep at 2-of-2
    let single = mux_sweep("e2e-single", 2, 150, 4, 20, 1, 1);
    let quorum = mux_sweep("e2e-quorum", 1, 100, 4, 10, 2, 2);
    cluster.submit(&single);
    cluster.submit(&quorum);
    cluster.spawn_clients(5);
    cluster.wait_all_over(&[&single, &quorum], Duration::from_secs(240));
    cluster.assert_canonical_outputs_match_standalone(&single);
    cluster.assert_canonical_outputs_match_standalone(&quorum);
    cluster.shutdown();
    pass(6, "end-to-end sweep, canonical outputs byte-identical");
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_fault_injection() {
    // tight heartbeat timeout so killed clients' replicas are reissued fast
    let mut cluster = Cluster::start(ServerConfig {
        heartbeat_timeout_secs: 5.0,
        ..ServerConfig::default()
    });
    let sweep = mux_sweep("faulty", 2, 2500, 12, 10, 1, 1);
    cluster.submit(&sweep);
    cluster.spawn_clients(5);

    // wait until all 5 clients hold an active assignment, then kill 2
    let t0 = Instant::now();
    loop {
        let active = cluster.with_state(|s| s.active_result_count());
        if active >= 5 {
            break;
        }
        assert!(t0.elapsed() < Duration::from_secs(120), "clients never loaded up");
        std::thread::sleep(Duration::from_millis(200));
    }
    for mut victim in cluster.clients.drain(0..2) {
        victim.kill().unwrap();
        victim.wait().unwrap();
    }

    cluster.wait_all_over(&[&sweep], Duration::from_secs(240));
    let timed_out = cluster.with_state(|s| {
        let mut n = 0;
        for wu_id in &s.sweep("faulty").unwrap().wu_ids {
            let wu = s.work_unit(wu_id).unwrap();
            assert!(wu.canonical_result_id.is_some(), "{wu_id} ended without a canonical result");
            n += s
                .results_for_wu(wu_id)
                .filter(|r| r.state == ResultState::TimedOut)
                .count();
        }
        n
    });
    assert!(timed_out >= 2, "killing 2 loaded clients must time out their replicas");
    cluster.assert_canonical_outputs_match_standalone(&sweep);
    cluster.shutdown();
    pass(7, "fault injection survived via reissue");
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_08_computing_power_model() {
    // degenerate single-immortal-host case: exact agreement
    let degenerate = ChurnConfig {
        arrival_per_day: 0.0,
        initial_hosts: 1,
        mean_life_days: f64::INFINITY,
        mean_off_days: 0.0,
        active_fraction: 1.0,
        eff: 1.0,
        flops_median: 1e9,
        flops_sigma: 0.0,
        wu_flop: 3600e9,
        n_wus: 30,
        target_replicas: 1,
        min_quorum: 1,
        horizon_days: 1.0,
        seed: 1,
        ..ChurnConfig::default()
    };
    let (formula, sim, ratio) = predicted_vs_simulated(&degenerate).unwrap();
    assert!((formula - 1.0).abs() < 1e-12 && (sim - 1.0).abs() < 1e-12);
    assert_eq!(ratio, 1.0, "degenerate case must agree exactly");

    // 10,000 hosts arriving over 5 days, ~1,000 live in steady state
    for seed in 1..=5u64 {
        let cfg = ChurnConfig {
            arrival_per_day: 2000.0,
            initial_hosts: 0,
            mean_life_days: 0.5,
            mean_on_days: 0.5,
            mean_off_days: 0.0,
            active_fraction: 1.0,
            eff: 1.0,
            flops_median: 1e9,
            flops_sigma: 0.0,
            ncpus: 1,
            wu_flop: 864e9,
            n_wus: 600_000,
            target_replicas: 1,
            min_quorum: 1,
            deadline_secs: 4.0 * 864.0,
            horizon_days: 5.0,
            transition_secs: 600.0,
            retry_secs: 300.0,
            seed,
            ..ChurnConfig::default()
        };
        let (formula, sim, ratio) = predicted_vs_simulated(&cfg).unwrap();
        assert!(
            (0.95..=1.05).contains(&ratio),
            "seed {seed}: formula {formula:.1} vs sim {sim:.1} GFLOPS, ratio {ratio:.4}"
        );
    }
    pass(8, "computing-power formula vs simulation");
}

// ---------------------------------------------------------------- 9

#[test]
#[cfg(unix)]
fn criterion_09_wrapper_golden_trace() {
    let dir = tempfile::tempdir().unwrap();
    let job = JobDescriptor {
        program: "run.sh".into(),
        input_files: vec!["input.txt".into()],
        output_files: vec!["output.txt".into()],
        command_args: vec![],
        checkpoint_file: "checkpoint.dat".into(),
        solution_file: "solution.txt".into(),
    };
    // phase 1: no checkpoint yet; save one and die. phase 2: resume from
    // the checkpoint, produce the output and the solution marker.
    let script = "#!/bin/sh\n\
        if [ -n \"$1\" ]; then\n\
          cat \"$1\" input.txt > output.txt\n\
          touch solution.txt\n\
          exit 0\n\
        fi\n\
        printf resumed- > checkpoint.dat\n\
        exit 1\n";
    let payloads = BTreeMap::from([
        ("run.sh".to_string(), script.as_bytes().to_vec()),
        ("input.txt".to_string(), b"payload".to_vec()),
    ]);
    let cap = Duration::from_secs(30);

    let fresh = execute_wrapped(dir.path(), &job, &payloads, cap);
    assert!(fresh.is_err(), "phase 1 exits non-zero without a solution");

    let outcome = execute_wrapped(dir.path(), &job, &payloads, cap).unwrap();
    assert_eq!(outcome.output, b"resumed-payload");
    assert_eq!(
        outcome.actions,
        vec![
            WrapperAction::Unpack { file: "input.txt".into() },
            WrapperAction::Unpack { file: "run.sh".into() },
            WrapperAction::LaunchWithCheckpoint,
            WrapperAction::WaitSolution,
            WrapperAction::CopyOutput { file: "output.txt".into() },
        ]
    );
    pass(9, "wrapper workflow golden trace");
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_signature_enforcement() {
    let key = KeyPair::generate();
    let spec = RunSpec {
        problem: ProblemId::Multiplexer(1),
        params: GpParams { population_size: 30, generations: 2, seed: 4, ..GpParams::default() },
    };
    let param_bytes = spec.to_param_file().into_bytes();
    let good = sign(&param_bytes, &key);
    assert!(
        verify_payloads(&BTreeMap::from([("params".to_string(), good.clone())]), &key.public_hex()).is_ok()
    );

    // 100 random single-byte flips in the payload, all refused
    use base64::Engine;
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let mut tampered = param_bytes.clone();
        let pos = rng.gen_range(0..tampered.len());
        tampered[pos] ^= rng.gen_range(1..=255u8);
        let mut sp = good.clone();
        sp.payload = b64.encode(&tampered);
        let refused = verify_payloads(&BTreeMap::from([("params".to_string(), sp)]), &key.public_hex());
        assert!(refused.is_err(), "flip at byte {pos} was not refused");
    }

    // end to end: a tampered assignment is refused without execution and
    // reported to the server as an Error result
    let dir = tempfile::tempdir().unwrap();
    let server = PersistentServer::open(
        &dir.path().join("events.log"),
        ServerConfig::default(),
        KeyPair::from_secret_hex(&key.secret_hex()).unwrap(),
    )
    .unwrap();
    let net = NetServer::start(
        "127.0.0.1:0",
        Arc::new(Mutex::new(server)),
        Duration::from_millis(500),
        None,
    )
    .unwrap();
    {
        let server = net.server();
        let mut guard = server.lock().unwrap();
        let sweep = mux_sweep("tampered", 1, 30, 2, 1, 1, 1);
        guard.submit_sweep(&sweep, 0.0).unwrap();
    }
    let cfg = ClientConfig {
        server_addr: net.addr().to_string(),
        public_key_hex: key.public_hex(),
        data_dir: dir.path().join("client"),
        ..ClientConfig::default()
    };
    let host_id = register(&cfg).unwrap();
    let reply = exchange(&cfg.server_addr, &Message::RequestWork { host_id: host_id.clone() }).unwrap();
    let Message::AssignWork { work_unit, result_id, mut payloads, job } = reply else {
        panic!("expected an assignment, got {reply:?}");
    };
    for sp in payloads.values_mut() {
        let mut bytes = sp.bytes().unwrap();
        bytes[0] ^= 0x01;
        sp.payload = b64.encode(&bytes);
    }
    let never = AtomicBool::new(false);
    let outcome = process_assignment(&cfg, &host_id, &work_unit, &result_id, &payloads, job.as_ref(), &never);
    assert!(outcome.is_err(), "tampered payload must not execute");
    assert!(!cfg.slot_dir(&result_id).exists(), "nothing may be staged for a refused payload");
    {
        let server = net.server();
        let guard = server.lock().unwrap();
        assert_eq!(guard.state.result(&result_id).unwrap().state, ResultState::Error);
    }
    net.stop();
    pass(10, "signature enforcement");
}
