//! `swarm-safety` command-line front end.
//!
//! Exit codes: 0 success or gate pass, 1 gate fail, 2 usage or validation
//! error, 3 internal error.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use swarm_safety::barrier::{benchmark_certificates, BarrierParams, BenchmarkRow, FilterMode};
use swarm_safety::model::Vec2;
use swarm_safety::scenario::{add_virtual_robots, ConfigErrors, ConfigViolation, ScenarioConfig};
use swarm_safety::sim::{self, read_csv, read_jsonl, LogError, LogTable, RunOptions, RunStatus};
use swarm_safety::sysid::{dataset_from_log, fit_coefficients, trajectory_error, SysIdError};
use swarm_safety::verification::{verify_with, VerifyOptions};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "swarm-safety", version, about = "Barrier-certificate safety tools for planar robot swarms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Off,
    Centralized,
    Decentralized,
}

impl From<Mode> for FilterMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Off => FilterMode::Off,
            Mode::Centralized => FilterMode::Centralized,
            Mode::Decentralized => FilterMode::Decentralized,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchModes {
    Centralized,
    Decentralized,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trajectory log and summary.
    Simulate {
        config: PathBuf,
        /// Noise seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Append this many virtual robots that hold their position.
        #[arg(long = "virtual", default_value_t = 0)]
        virtual_robots: usize,
        /// Filter mode, overriding the config.
        #[arg(long)]
        mode: Option<Mode>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Monte Carlo safety verification of a scenario.
    Verify {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of rollouts, overriding the thresholds section.
        #[arg(long)]
        runs: Option<usize>,
        /// Filter mode during rollouts, overriding the config.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long = "virtual", default_value_t = 0)]
        virtual_robots: usize,
        /// Report path; defaults to `<name>.report.json` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the safety filter for several swarm sizes.
    Benchmark {
        #[arg(long, value_delimiter = ',', default_value = "10,40,100")]
        n: Vec<usize>,
        #[arg(long, value_enum, default_value = "both")]
        modes: BenchModes,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit per-axis model coefficients to one or more trajectory logs.
    Sysid {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean distance from real trajectory samples to the simulated path.
    TrajError {
        sim: PathBuf,
        real: PathBuf,
        /// Compare only this robot; all shared robots by default.
        #[arg(long)]
        robot: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Config(ConfigErrors),
    Log { path: PathBuf, err: LogError },
    SysId(SysIdError),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 3,
            _ => 2,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Usage(m) => json!({ "error": "usage", "message": m }),
            CliError::Config(e) => json!({ "error": "invalid configuration", "violations": e.violations }),
            CliError::Log { path, err } => {
                let mut v = json!({ "error": "invalid log", "path": path, "message": err.to_string() });
                if let LogError::Schema { line, column, .. } = err {
                    v["line"] = json!(line);
                    v["column"] = json!(column);
                }
                v
            }
            CliError::SysId(e) => json!({ "error": "identification failed", "message": e.to_string() }),
            CliError::Internal(m) => json!({ "error": "internal", "message": m }),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

struct LoadedConfig {
    scenario: ScenarioConfig,
    hash: String,
    dir: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_config(path: &Path, virtual_robots: usize) -> Result<LoadedConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let scenario: ScenarioConfig = toml::from_str(&text).map_err(|e| {
        CliError::Config(ConfigErrors {
            violations: vec![ConfigViolation {
                field: "document".into(),
                message: e.to_string(),
                robots: vec![],
            }],
        })
    })?;
    scenario.validate().map_err(CliError::Config)?;
    let scenario = add_virtual_robots(&scenario, virtual_robots).map_err(|e| {
        CliError::Config(ConfigErrors {
            violations: vec![ConfigViolation {
                field: "virtual".into(),
                message: e.to_string(),
                robots: vec![],
            }],
        })
    })?;
    scenario.validate().map_err(CliError::Config)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let dir = match &scenario.output.dir {
        Some(d) => base.join(d),
        None => base,
    };
    Ok(LoadedConfig {
        scenario,
        hash: sha256_hex(text.as_bytes()),
        dir,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| internal(format!("{}: {e}", parent.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| internal(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(internal)?;
    writeln!(w).map_err(internal)?;
    w.flush().map_err(internal)
}

fn simulate(
    config: &Path,
    seed: Option<u64>,
    virtual_robots: usize,
    mode: Option<Mode>,
    out_dir: Option<PathBuf>,
) -> Result<u8, CliError> {
    let cfg = load_config(config, virtual_robots)?;
    let s = &cfg.scenario;
    let mut opts = RunOptions::for_scenario(s);
    opts.config_hash = Some(cfg.hash.clone());
    if let Some(seed) = seed {
        opts.noise.seed = seed;
    }
    if let Some(m) = mode {
        opts.mode = m.into();
    }
    info!("simulating {} ({} robots, {} ticks)", s.name, s.robot_count(), s.tick_count());
    let log = sim::run_with(s, &opts).map_err(|e| match e {
        sim::SimError::InvalidScenario(c) => CliError::Config(c),
    })?;

    let dir = out_dir.unwrap_or(cfg.dir);
    let mut files = Vec::new();
    if s.output.csv {
        let p = dir.join(format!("{}.csv", s.name));
        let mut w = create(&p)?;
        log.write_csv(&mut w).and_then(|_| w.flush()).map_err(internal)?;
        files.push(p);
    }
    if s.output.jsonl {
        let p = dir.join(format!("{}.jsonl", s.name));
        let mut w = create(&p)?;
        log.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(internal)?;
        files.push(p);
    }
    let (status, code) = match &log.status {
        RunStatus::Completed => (json!("completed"), 0),
        RunStatus::Aborted { tick, reason } => (json!({ "aborted_at_tick": tick, "reason": reason }), 3),
    };
    let summary = json!({
        "version": VERSION,
        "scenario": s.name,
        "config_hash": cfg.hash,
        "seed": opts.noise.seed,
        "filter": opts.mode,
        "robots": log.header.robots,
        "ticks": log.ticks.len(),
        "status": status,
        "min_pair_distance": log.summary.min_pair_distance,
        "contact_events": log.summary.contact_events,
        "robot_contact_events": log.summary.robot_contact_events,
        "wall_contact_events": log.summary.wall_contact_events,
        "total_damage": log.summary.total_energy_loss,
        "robot_contact_damage": log.summary.robot_contact_loss,
        "emergency_stop_ticks": log.summary.emergency_stop_ticks,
        "logs": files,
    });
    let p = dir.join(format!("{}.summary.json", s.name));
    write_json(&p, &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(internal)?);
    Ok(code)
}

fn verify_cmd(
    config: &Path,
    seed: Option<u64>,
    runs: Option<usize>,
    mode: Option<Mode>,
    virtual_robots: usize,
    out: Option<PathBuf>,
) -> Result<u8, CliError> {
    let cfg = load_config(config, virtual_robots)?;
    let s = &cfg.scenario;
    let mut thresholds = s.thresholds;
    if let Some(r) = runs {
        thresholds.runs = r;
    }
    let mut noise = s.noise_or_gate_default();
    if let Some(seed) = seed {
        noise.seed = seed;
    }
    let opts = VerifyOptions {
        mode: mode.map(Into::into),
        config_hash: Some(cfg.hash.clone()),
    };
    info!("verifying {} with {} rollouts", s.name, thresholds.runs);
    let report = verify_with(s, &thresholds, &noise, &opts).map_err(|e| match e {
        sim::SimError::InvalidScenario(c) => CliError::Config(c),
    })?;
    let path = out.unwrap_or_else(|| cfg.dir.join(format!("{}.report.json", s.name)));
    let mut w = create(&path)?;
    w.write_all(report.to_json().as_bytes())
        .and_then(|_| writeln!(w))
        .and_then(|_| w.flush())
        .map_err(internal)?;
    print!("{}", report.to_text());
    println!("report        {}", path.display());
    Ok(if report.passed() { 0 } else { 1 })
}

fn benchmark(n: &[usize], modes: BenchModes, iters: usize, seed: u64, out: Option<PathBuf>) -> Result<u8, CliError> {
    if n.is_empty() || n.contains(&0) {
        return Err(CliError::Usage("--n needs positive swarm sizes".into()));
    }
    if iters == 0 {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    let params = BarrierParams::default();
    let list = match modes {
        BenchModes::Centralized => vec![FilterMode::Centralized],
        BenchModes::Decentralized => vec![FilterMode::Decentralized],
        BenchModes::Both => vec![FilterMode::Centralized, FilterMode::Decentralized],
    };
    let mut rows: Vec<BenchmarkRow> = Vec::new();
    for m in list {
        info!("benchmarking {m:?}");
        rows.extend(benchmark_certificates(n, m, iters, seed, &params));
    }
    let mut text = String::new();
    text.push_str(&format!("# version: {VERSION}\n# seed: {seed}\n# iters: {iters}\n"));
    text.push_str("n,mode,ms_mean,ms_p95\n");
    for r in &rows {
        let mode = serde_json::to_value(r.mode).map_err(internal)?;
        text.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.n,
            mode.as_str().unwrap_or_default(),
            r.ms_mean,
            r.ms_p95
        ));
    }
    match out {
        Some(p) => {
            let mut w = create(&p)?;
            w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(internal)?;
        }
        None => print!("{text}"),
    }
    Ok(0)
}

fn read_log(path: &Path) -> Result<LogTable, CliError> {
    let f = File::open(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let r = BufReader::new(f);
    let jsonl = path.extension().is_some_and(|e| e == "jsonl" || e == "json");
    let table = if jsonl { read_jsonl(r) } else { read_csv(r) };
    table.map_err(|err| CliError::Log {
        path: path.to_path_buf(),
        err,
    })
}

fn sysid(logs: &[PathBuf], out: Option<PathBuf>) -> Result<u8, CliError> {
    let mut data: Option<swarm_safety::sysid::RegressionDataset> = None;
    for p in logs {
        let d = dataset_from_log(&read_log(p)?).map_err(CliError::SysId)?;
        match &mut data {
            Some(acc) => acc.extend(d),
            None => data = Some(d),
        }
    }
    let data = data.ok_or_else(|| CliError::Usage("no logs given".into()))?;
    let fit = fit_coefficients(&data).map_err(CliError::SysId)?;
    let result = json!({
        "version": VERSION,
        "sources": logs,
        "alpha1": fit.alpha1,
        "alpha2": fit.alpha2,
        "alpha3": fit.alpha3,
        "d": fit.d,
        "residuals": fit.residuals,
    });
    if let Some(p) = out {
        write_json(&p, &result)?;
    }
    println!("{}", serde_json::to_string_pretty(&result).map_err(internal)?);
    Ok(0)
}

fn traj_error(sim_path: &Path, real_path: &Path, robot: Option<usize>, out: Option<PathBuf>) -> Result<u8, CliError> {
    let sim_by = read_log(sim_path)?.by_robot();
    let real_by = read_log(real_path)?.by_robot();
    let ids: Vec<usize> = match robot {
        Some(id) => {
            if !sim_by.contains_key(&id) || !real_by.contains_key(&id) {
                return Err(CliError::Usage(format!("robot {id} is not in both logs")));
            }
            vec![id]
        }
        None => sim_by.keys().filter(|k| real_by.contains_key(k)).copied().collect(),
    };
    if ids.is_empty() {
        return Err(CliError::Usage("the logs share no robot ids".into()));
    }
    let path = |rows: &[swarm_safety::sim::LogRow]| -> Vec<Vec2> { rows.iter().map(|r| Vec2::new(r.x1, r.x2)).collect() };
    let mut per_robot = Vec::with_capacity(ids.len());
    for id in &ids {
        let e = trajectory_error(&path(&sim_by[id]), &path(&real_by[id])).map_err(CliError::SysId)?;
        println!("robot {id}: {e:.4} m");
        per_robot.push(json!({ "robot": id, "error": e }));
    }
    let mean = per_robot.iter().map(|v| v["error"].as_f64().unwrap_or(0.0)).sum::<f64>() / ids.len() as f64;
    println!("E = {mean:.4} m");
    if let Some(p) = out {
        write_json(
            &p,
            &json!({
                "version": VERSION,
                "sim": sim_path,
                "real": real_path,
                "robots": per_robot,
                "error": mean,
            }),
        )?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SWARM_SAFETY_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            virtual_robots,
            mode,
            out_dir,
        } => simulate(&config, seed, virtual_robots, mode, out_dir),
        Command::Verify {
            config,
            seed,
            runs,
            mode,
            virtual_robots,
            out,
        } => verify_cmd(&config, seed, runs, mode, virtual_robots, out),
        Command::Benchmark {
            n,
            modes,
            iters,
            seed,
            out,
        } => benchmark(&n, modes, iters, seed, out),
        Command::Sysid { logs, out } => sysid(&logs, out),
        Command::TrajError { sim, real, robot, out } => traj_error(&sim, &real, robot, out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e.to_json()).unwrap_or_default());
            ExitCode::from(e.code())
        }
    }
}
