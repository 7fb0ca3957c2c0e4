//! `voluntier`: operator command suite for the volunteer-computing
//! framework. One binary covers project setup, the server and client
//! daemons, sweep submission and status, reports, the churn simulator, and
//! the standalone sequential GP baseline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use voluntier_core::churnsim::{self, ChurnConfig};
use voluntier_core::client::{run_client, ClientConfig};
use voluntier_core::gp::artifact;
use voluntier_core::gp::params::RunSpec;
use voluntier_core::gp::run::run_gp;
use voluntier_core::metrics::{self, LedgerRow};
use voluntier_core::proto::sign::KeyPair;
use voluntier_core::proto::{SweepSpec, WuState};
use voluntier_core::server::{replay, NetServer, PersistentServer, ServerState};

mod server_conf;
use server_conf::ServerConf;

#[derive(Parser)]
#[command(name = "voluntier", version, about = "volunteer computing for GP experiments", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Project administration
    Project {
        #[command(subcommand)]
        cmd: ProjectCmd,
    },
    /// Run the project server (long-running)
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Volunteer client commands
    Client {
        #[command(subcommand)]
        cmd: ClientCmd,
    },
    /// Sweep submission and status
    Sweep {
        #[command(subcommand)]
        cmd: SweepCmd,
    },
    /// Per-sweep results table (runs, perfect, T_seq, T_B, Acc)
    Report {
        #[arg(long)]
        config: PathBuf,
        /// restrict to one sweep
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run the host-churn simulator and compare against the CP formula
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// write the live-host-count time series as CSV
        #[arg(long)]
        series: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Standalone GP runs (sequential baseline)
    Gp {
        #[command(subcommand)]
        cmd: GpCmd,
    },
}

#[derive(Subcommand)]
enum ProjectCmd {
    /// Create a project directory: key pair, configs, empty event log
    Init { dir: PathBuf },
}

#[derive(Subcommand)]
enum ClientCmd {
    /// Run the client daemon (long-running)
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum SweepCmd {
    /// Validate a sweep spec and queue it for the server
    Submit {
        spec_file: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Show the work units of a sweep and their states
    Status {
        name: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Subcommand)]
enum GpCmd {
    /// One deterministic GP run; prints the canonical result artifact
    Run {
        #[arg(long)]
        params: PathBuf,
        /// write the artifact here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage problems exit 1; --help and --version exit 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CmdResult = Result<(), Box<dyn std::error::Error>>;

fn run(cli: Cli) -> CmdResult {
    match cli.cmd {
        Cmd::Project { cmd: ProjectCmd::Init { dir } } => project_init(&dir),
        Cmd::Serve { config } => serve(&config),
        Cmd::Client { cmd: ClientCmd::Run { config } } => client_run(&config),
        Cmd::Sweep { cmd: SweepCmd::Submit { spec_file, config } } => sweep_submit(&spec_file, &config),
        Cmd::Sweep { cmd: SweepCmd::Status { name, config, format } } => sweep_status(&name, &config, format),
        Cmd::Report { config, sweep, format } => report(&config, sweep.as_deref(), format),
        Cmd::Simulate { config, series, format } => simulate(&config, series.as_deref(), format),
        Cmd::Gp { cmd: GpCmd::Run { params, out } } => gp_run(&params, out.as_deref()),
    }
}

fn project_init(dir: &Path) -> CmdResult {
    if dir.exists() && dir.read_dir()?.next().is_some() {
        return Err(format!("{} exists and is not empty", dir.display()).into());
    }
    std::fs::create_dir_all(dir.join("spool"))?;
    let key = KeyPair::generate();
    std::fs::write(dir.join("secret.key"), key.secret_hex() + "\n")?;
    std::fs::write(dir.join("public.key"), key.public_hex() + "\n")?;
    std::fs::write(dir.join("events.log"), "")?;
    std::fs::write(dir.join("server.conf"), ServerConf::default_file())?;
    let client = ClientConfig {
        server_addr: "127.0.0.1:7070".into(),
        public_key_hex: key.public_hex(),
        data_dir: PathBuf::from("client-data"),
        ..ClientConfig::default()
    };
    std::fs::write(dir.join("client.conf"), client.to_config_file())?;
    println!("initialized project in {}", dir.display());
    println!("public key: {}", key.public_hex());
    Ok(())
}

fn serve(config_path: &Path) -> CmdResult {
    let conf = ServerConf::load(config_path)?;
    let key = conf.load_key()?;
    let server = PersistentServer::open(&conf.log, conf.server_config(), key)?;
    let server = Arc::new(Mutex::new(server));
    let net = NetServer::start(
        &conf.bind,
        server,
        Duration::from_secs_f64(conf.transition_secs),
        Some(conf.spool.clone()),
    )?;
    println!("listening on {}", net.addr());
    println!("event log {}", conf.log.display());
    println!("sweep spool {}", conf.spool.display());
    // daemon until killed; the write-ahead log makes abrupt death safe
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

fn client_run(config_path: &Path) -> CmdResult {
    let text = std::fs::read_to_string(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let cfg = ClientConfig::from_config_file(&text, base)?;
    println!("client for {} (data in {})", cfg.server_addr, cfg.data_dir.display());
    let never_stop = AtomicBool::new(false);
    run_client(&cfg, &never_stop)?;
    Ok(())
}

fn sweep_submit(spec_file: &Path, config_path: &Path) -> CmdResult {
    let conf = ServerConf::load(config_path)?;
    let text = std::fs::read_to_string(spec_file)?;
    let spec = SweepSpec::from_sweep_file(&text)?;
    spec.validate()?;
    // atomic rename so the server never reads a half-written spec
    std::fs::create_dir_all(&conf.spool)?;
    let tmp = conf.spool.join(format!(".{}.tmp", spec.name));
    std::fs::write(&tmp, &text)?;
    std::fs::rename(&tmp, conf.spool.join(format!("{}.sweep", spec.name)))?;
    println!("queued sweep {} ({} work units)", spec.name, spec.wu_count());
    Ok(())
}

fn open_snapshot(conf: &ServerConf) -> Result<ServerState, Box<dyn std::error::Error>> {
    Ok(replay(&conf.log, conf.server_config(), conf.load_key()?)?)
}

fn wu_state_str(s: WuState) -> &'static str {
    match s {
        WuState::Unsent => "unsent",
        WuState::InProgress => "in_progress",
        WuState::Over => "over",
    }
}

fn sweep_status(name: &str, config_path: &Path, format: Format) -> CmdResult {
    let conf = ServerConf::load(config_path)?;
    let state = open_snapshot(&conf)?;
    let meta = state
        .sweep(name)
        .ok_or_else(|| format!("unknown sweep {name}"))?;
    let mut counts = [0usize; 3];
    let mut lines = Vec::new();
    for wu_id in &meta.wu_ids {
        let wu = state.work_unit(wu_id).expect("sweep lists only known WUs");
        counts[wu.state as usize] += 1;
        lines.push(format!(
            "{},{},{}",
            wu.wu_id,
            wu_state_str(wu.state),
            wu.canonical_result_id.as_deref().unwrap_or("")
        ));
    }
    match format {
        Format::Csv => {
            println!("wu_id,state,canonical_result");
            for l in lines {
                println!("{l}");
            }
        }
        Format::Text => {
            for l in lines {
                let mut parts = l.split(',');
                let (id, st, canon) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
                if canon.is_empty() {
                    println!("{id:24} {st}");
                } else {
                    println!("{id:24} {st:12} canonical {canon}");
                }
            }
            println!(
                "{}: {} work units ({} unsent, {} in progress, {} over)",
                name,
                meta.wu_ids.len(),
                counts[WuState::Unsent as usize],
                counts[WuState::InProgress as usize],
                counts[WuState::Over as usize],
            );
        }
    }
    Ok(())
}

fn report(config_path: &Path, sweep: Option<&str>, format: Format) -> CmdResult {
    let conf = ServerConf::load(config_path)?;
    let state = open_snapshot(&conf)?;
    if let Some(name) = sweep {
        if state.sweep(name).is_none() {
            return Err(format!("unknown sweep {name}").into());
        }
    }
    let rows = state
        .ledger()
        .iter()
        .filter(|e| sweep.is_none_or(|s| e.sweep == s))
        .map(|e| LedgerRow {
            sweep: &e.sweep,
            raw: e.raw,
            cpu_time: e.cpu_time,
            completed_at: e.completed_at,
        });
    let summary = metrics::summarize(rows, state.first_registration());
    match format {
        Format::Csv => print!("{}", metrics::render_csv(&summary)),
        Format::Text => print!("{}", metrics::render_text(&summary)),
    }
    Ok(())
}

fn simulate(config_path: &Path, series: Option<&Path>, format: Format) -> CmdResult {
    let text = std::fs::read_to_string(config_path)?;
    let cfg = ChurnConfig::from_config_file(&text)?;
    let trace = churnsim::simulate(&cfg)?;
    let cp_formula = metrics::computing_power(&cfg.analytic_factors())?;
    let cp_sim = churnsim::measured_cp(&cfg, &trace);
    if let Some(path) = series {
        std::fs::write(path, trace.host_series_csv())?;
    }
    match format {
        Format::Csv => {
            println!("completed_wus,issued_replicas,timed_out_replicas,lost_replicas,cp_formula_gflops,cp_sim_gflops,ratio");
            println!(
                "{},{},{},{},{:.4},{:.4},{:.4}",
                trace.completed_wus,
                trace.issued_replicas,
                trace.timed_out_replicas,
                trace.lost_replicas,
                cp_formula,
                cp_sim,
                cp_sim / cp_formula
            );
        }
        Format::Text => {
            println!("horizon          {} days", cfg.horizon_days);
            println!("work units done  {}", trace.completed_wus);
            println!("replicas issued  {}", trace.issued_replicas);
            println!("  timed out      {}", trace.timed_out_replicas);
            println!("  lost to churn  {}", trace.lost_replicas);
            println!("CP formula       {cp_formula:.2} GFLOPS");
            println!("CP simulated     {cp_sim:.2} GFLOPS");
            println!("ratio            {:.4}", cp_sim / cp_formula);
        }
    }
    Ok(())
}

fn gp_run(params_path: &Path, out: Option<&Path>) -> CmdResult {
    let text = std::fs::read_to_string(params_path)?;
    let spec = RunSpec::from_param_file(&text)?;
    let result = run_gp(&spec, None, None)?;
    let rendered = artifact::render(&spec, &result);
    eprintln!(
        "hits={} raw={:.1} cpu_time={:.3}s evaluations={}",
        result.best.hits, result.best.raw, result.cpu_time, result.evaluations
    );
    match out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}
