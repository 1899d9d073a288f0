use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use tsipw::config::{sha256_hex, AnalysisConfig, ConfigError};
use tsipw::dataset::{read_csv, DatasetError};
use tsipw::report::{analyze, truth, ReportError, REPORT_SCHEMA_VERSION, TOOL_VERSION};
use tsipw::simulate::{generate, run_study, SimulationError};

#[derive(Parser)]
#[command(name = "tsipw", version, about = "Time-smoothed IPW estimators for sustained strategies with sparse outcome measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset in long CSV format.
    Simulate(SimulateArgs),
    /// Monte Carlo truth for the configured strategies.
    Truth(TruthArgs),
    /// Fit the configured estimators to a dataset.
    Estimate(EstimateArgs),
    /// Run a replication study and write bias, SE and coverage tables.
    Replicate(ReplicateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    tau: Option<u32>,
}

#[derive(Args)]
struct TruthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of simulated individuals per strategy.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the per-replicate bootstrap (no coverage).
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long)]
    truth_samples: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Data(String),
    Estimation(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Estimation(_) => 4,
            Failure::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Estimation(m) | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<SimulationError> for Failure {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::InvalidConfig(_) => Failure::Config(e.to_string()),
            SimulationError::GuardRailViolation { .. } => Failure::Data(e.to_string()),
            SimulationError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Estimation(e.to_string()),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Config(_) => Failure::Config(e.to_string()),
            ReportError::Simulation(s) => s.into(),
            ReportError::Io(_) | ReportError::Csv(_) | ReportError::Json(_) => {
                Failure::Io(e.to_string())
            }
            _ => Failure::Estimation(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<(AnalysisConfig, String), Failure> {
    match path {
        Some(p) => Ok(AnalysisConfig::load(p)?),
        None => {
            let cfg = AnalysisConfig::default();
            Ok((cfg, sha256_hex(b"")))
        }
    }
}

fn output_dir(cfg: &AnalysisConfig, flag: Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = flag.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(io_err(path))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let (mut cfg, hash) = load_config(a.config.as_deref())?;
    let sim = &mut cfg.simulation;
    if let Some(s) = a.seed {
        sim.seed = s;
    }
    if let Some(n) = a.n {
        sim.n = n;
    }
    if let Some(t) = a.tau {
        sim.tau = t;
    }
    sim.validate()?;
    info!("tsipw {TOOL_VERSION} simulate: config sha256 {hash}, seed {}", sim.seed);
    let d = generate(sim)?;
    let mut buf = Vec::new();
    d.write_csv(&mut buf)?;
    write_file(&a.out, &buf)?;
    info!("data sha256 {}", sha256_hex(&buf));
    Ok(())
}

fn cmd_truth(a: TruthArgs) -> Result<(), Failure> {
    let (cfg, hash) = load_config(a.config.as_deref())?;
    let samples = a.samples.unwrap_or(cfg.study.truth_samples);
    let seed = a.seed.unwrap_or(cfg.study.seed);
    info!("tsipw {TOOL_VERSION} truth: config sha256 {hash}, seed {seed}, samples {samples}");
    let report = truth(&cfg, samples, seed, &hash)?;
    let json = report.to_json()?;
    match a.out {
        Some(p) => write_file(&p, json.as_bytes()),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn cmd_estimate(a: EstimateArgs) -> Result<(), Failure> {
    let (mut cfg, config_hash) = AnalysisConfig::load(&a.config)?;
    let b = &mut cfg.bootstrap;
    if a.no_bootstrap {
        b.enabled = false;
    }
    if let Some(r) = a.replicates {
        b.replicates = r;
    }
    if let Some(s) = a.seed {
        b.seed = s;
    }
    if a.workers.is_some() {
        b.workers = a.workers;
    }
    if let Some(l) = a.level {
        b.level = l;
    }
    b.settings()
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let bytes = fs::read(&a.data).map_err(io_err(&a.data))?;
    let data_hash = sha256_hex(&bytes);
    let d = read_csv(bytes.as_slice(), &cfg.schema())?;
    info!(
        "tsipw {TOOL_VERSION} estimate: config sha256 {config_hash}, data sha256 {data_hash}, bootstrap seed {}, report schema v{REPORT_SCHEMA_VERSION}",
        cfg.bootstrap.seed
    );
    info!(
        "{} individuals, {} rows, tau {}",
        d.n_individuals(),
        d.n_rows(),
        d.tau()
    );
    let report = analyze(&cfg, &d, &config_hash, &data_hash)?;
    let dir = output_dir(&cfg, a.out_dir)?;
    let prefix = &cfg.output.prefix;
    write_file(&dir.join(format!("{prefix}.json")), report.to_json()?.as_bytes())?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_file(&dir.join(format!("{prefix}.csv")), &csv)?;
    for sec in &report.estimators {
        for c in &sec.result.contrasts {
            info!(
                "{} t*={}: {} - {} = {:.4}",
                sec.result.estimator, c.t_star, c.g1, c.g0, c.difference
            );
        }
    }
    Ok(())
}

fn cmd_replicate(a: ReplicateArgs) -> Result<(), Failure> {
    let (mut cfg, hash) = load_config(a.config.as_deref())?;
    let study = &mut cfg.study;
    if let Some(r) = a.replicates {
        study.replicates = r;
    }
    if a.workers.is_some() {
        study.workers = a.workers;
    }
    if let Some(s) = a.seed {
        study.seed = s;
    }
    if let Some(n) = a.truth_samples {
        study.truth_samples = n;
    }
    if a.no_bootstrap {
        study.intervals = false;
    }
    if study.replicates < 2 {
        return Err(Failure::Config("study needs at least 2 replicates".into()));
    }
    study
        .bootstrap
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let estimators = cfg.estimator_configs()?;
    info!(
        "tsipw {TOOL_VERSION} replicate: config sha256 {hash}, seed {}, {} replicates",
        cfg.study.seed, cfg.study.replicates
    );
    let result = run_study(&cfg.simulation, &estimators, &cfg.study)?;
    for (est, failed) in &result.failures {
        if !failed.is_empty() {
            log::warn!("{est}: {} replicates failed", failed.len());
        }
    }
    let dir = output_dir(&cfg, a.out_dir)?;
    let prefix = &cfg.output.prefix;
    let mut table = Vec::new();
    result
        .write_table_csv(&mut table, &cfg.study.t_stars)
        .map_err(Failure::from)?;
    write_file(&dir.join(format!("{prefix}_table.csv")), &table)?;
    let mut summary = Vec::new();
    result.write_summary_csv(&mut summary)?;
    write_file(&dir.join(format!("{prefix}_summary.csv")), &summary)?;
    let mut rows = Vec::new();
    result.write_replicates_csv(&mut rows)?;
    write_file(&dir.join(format!("{prefix}_replicates.csv")), &rows)?;
    print!("{}", String::from_utf8_lossy(&table));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Truth(a) => cmd_truth(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Replicate(a) => cmd_replicate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
