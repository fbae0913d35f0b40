//! Command-line front end: `run`, `compare` and `dump-topology`.
//!
//! Exit status is 0 on success, 2 for unusable configuration and 1 for
//! failures while running.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::engine::{format_float, run_experiment, Experiment, ExperimentConfig, MetricsTable, Paradigm};

pub mod config;

pub use config::{ConfigError, NetworkCondition, SweepSpec};

#[derive(Debug, Parser)]
#[command(
    name = "chisme",
    version,
    about = "Deterministic gossip and decentralized learning simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its per-round metrics.
    Run(RunArgs),
    /// Run a paradigm x seed x network sweep and write a summary.
    Compare(CompareArgs),
    /// Write the experiment's topology as an edge list.
    DumpTopology(TopologyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment file. Defaults apply to every missing key.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paradigm: Option<String>,
    #[arg(long, default_value = config::DEFAULT_OUT_DIR)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Sweep file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the sweep's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Overrides the sweep's loss threshold.
    #[arg(long)]
    pub loss_threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TopologyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for `topology_<seed>.csv`; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

fn parse_paradigm(name: &str) -> Result<Paradigm, CliError> {
    name.parse().map_err(|e: crate::Error| CliError::Usage(e.to_string()))
}

fn load_config(
    path: Option<&Path>,
    seed: Option<u64>,
    paradigm: Option<Paradigm>,
) -> Result<ExperimentConfig, CliError> {
    let text = match path {
        Some(p) => config::read_file(p)?,
        None => String::new(),
    };
    let with_path = |e: ConfigError| ConfigError {
        path: path.map(Path::to_path_buf),
        ..e
    };
    let parsed = config::parse_experiment(&text).map_err(with_path)?;
    Ok(config::apply_overrides(&text, parsed, seed, paradigm).map_err(with_path)?)
}

/// Outcome of `run`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub csv_path: PathBuf,
    pub metrics: MetricsTable,
}

pub fn cmd_run(args: &RunArgs) -> Result<RunOutcome, CliError> {
    let paradigm = args.paradigm.as_deref().map(parse_paradigm).transpose()?;
    let config = load_config(args.config.as_deref(), args.seed, paradigm)?;
    let metrics = run_experiment(&config).map_err(runtime)?;
    let csv_path = args.out.join(format!("{}_{}.csv", config.paradigm, config.seed));
    write_atomic(&csv_path, &metrics.to_csv()).map_err(runtime)?;
    Ok(RunOutcome { csv_path, metrics })
}

pub const SUMMARY_HEADER: &str =
    "paradigm,connectivity,reliability,seed,final_mean_loss,final_std_loss,rounds_to_threshold,total_messages,dataset_digest";

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub paradigm: Paradigm,
    pub condition: NetworkCondition,
    pub seed: u64,
    pub final_mean_loss: f64,
    pub final_std_loss: f64,
    pub rounds_to_threshold: Option<usize>,
    pub total_messages: u64,
    pub dataset_digest: String,
    pub csv_path: PathBuf,
}

impl SummaryRow {
    fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.paradigm,
            self.condition.connectivity,
            self.condition.reliability,
            self.seed,
            format_float(self.final_mean_loss),
            format_float(self.final_std_loss),
            self.rounds_to_threshold.map_or(-1, |r| r as i64),
            self.total_messages,
            self.dataset_digest,
        )
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv_line());
    }
    s
}

pub fn run_file_name(paradigm: Paradigm, condition: NetworkCondition, seed: u64) -> String {
    format!(
        "{paradigm}_conn{}_rel{}_{seed}.csv",
        condition.connectivity, condition.reliability
    )
}

/// Runs every combination in `spec`, writing each run's CSV as it finishes
/// and `summary.csv` at the end. Rows are ordered by condition, then
/// paradigm, then seed, whatever the completion order.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<SummaryRow>, CliError> {
    let mut plan = Vec::new();
    for &condition in &spec.conditions {
        for &paradigm in &spec.paradigms {
            for &seed in &spec.seeds {
                plan.push((paradigm, condition, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(runtime)?;
    let rows = pool.install(|| {
        plan.par_iter()
            .map(|&(paradigm, condition, seed)| {
                let config = spec.run_config(paradigm, seed, condition);
                let metrics = run_experiment(&config)
                    .map_err(|e| CliError::Runtime(format!("{paradigm} seed {seed} at {condition:?}: {e}")))?;
                let csv_path = spec.out.join(run_file_name(paradigm, condition, seed));
                write_atomic(&csv_path, &metrics.to_csv()).map_err(runtime)?;
                let last = metrics.final_round();
                Ok(SummaryRow {
                    paradigm,
                    condition,
                    seed,
                    final_mean_loss: last.mean_loss,
                    final_std_loss: last.std_loss,
                    rounds_to_threshold: metrics.rounds_to_threshold(spec.loss_threshold),
                    total_messages: last.messages_sent,
                    dataset_digest: metrics.dataset_digest.clone(),
                    csv_path,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    write_atomic(&spec.out.join("summary.csv"), &summary_csv(&rows)).map_err(runtime)?;
    Ok(rows)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<Vec<SummaryRow>, CliError> {
    let mut spec = match &args.config {
        Some(p) => config::load_sweep(p)?,
        None => SweepSpec::default(),
    };
    if let Some(out) = &args.out {
        spec.out = out.clone();
    }
    if let Some(t) = args.loss_threshold {
        if !t.is_finite() {
            return Err(CliError::Usage(format!("--loss-threshold {t} must be finite")));
        }
        spec.loss_threshold = t;
    }
    run_sweep(&spec, args.jobs)
}

/// Returns the edge list. Written to `<out>/topology_<seed>.csv` when an
/// output directory is given.
pub fn cmd_dump_topology(args: &TopologyArgs) -> Result<String, CliError> {
    let config = load_config(args.config.as_deref(), args.seed, None)?;
    let exp = Experiment::new(config.clone()).map_err(runtime)?;
    let csv = exp.topology().to_csv();
    if let Some(dir) = &args.out {
        write_atomic(&dir.join(format!("topology_{}.csv", config.seed)), &csv).map_err(runtime)?;
    }
    Ok(csv)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    let out = |e: std::io::Error| CliError::Runtime(e.to_string());
    match &cli.command {
        Command::Run(args) => {
            let r = cmd_run(args)?;
            let last = r.metrics.final_round();
            writeln!(
                stdout,
                "{} rounds={} final_mean_loss={} final_std_loss={} messages={} wrote {}",
                r.metrics.paradigm,
                last.round,
                format_float(last.mean_loss),
                format_float(last.std_loss),
                last.messages_sent,
                r.csv_path.display()
            )
            .map_err(out)?;
        }
        Command::Compare(args) => {
            let rows = cmd_compare(args)?;
            for r in &rows {
                writeln!(
                    stdout,
                    "{} conn={} rel={} seed={} final_mean_loss={} final_std_loss={}",
                    r.paradigm,
                    r.condition.connectivity,
                    r.condition.reliability,
                    r.seed,
                    format_float(r.final_mean_loss),
                    format_float(r.final_std_loss)
                )
                .map_err(out)?;
            }
        }
        Command::DumpTopology(args) => {
            let csv = cmd_dump_topology(args)?;
            if args.out.is_none() {
                stdout.write_all(csv.as_bytes()).map_err(out)?;
            }
        }
    }
    Ok(())
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
