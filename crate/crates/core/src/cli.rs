//! The `irsa-aoi` command line front end.
//!
//! Every subcommand writes one CSV table with a header row. Floats are
//! printed in Rust's shortest round-trip form, so a printed value parses
//! back to the exact `f64` the library returned. Empty fields mean "not
//! applicable". When `--out` names a file, a `<out>.manifest.json` with the
//! command line, configuration, seed, version and wall time is written next
//! to it.
//!
//! Exit codes: 0 success, 1 usage, 2 runtime failure or divergence, 3 I/O.

use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{
    aoi_irsa, aoi_sa_breakdown, irsa_load, sa_optimal_aoi, sa_throughput, AnalysisError, AoiBreakdown,
};
use crate::model::{validate_config, DegreeDistribution, ModelError, Protocol, SystemConfig};
use crate::optimize::{
    aoi_ratio_curves, default_m_grid, optimal_frame_size, optimal_frame_size_refined, sweep_aoi_vs_activity,
    Experiment, SimBudget,
};
use crate::sim::{estimate_plr, simulate_aoi_irsa, simulate_aoi_sa, SimError};

/// Root seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_200_417;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const SIMULATE_HEADER: &str =
    "n,m,pa,lambda,load,plr,plr_stderr,throughput,aoi_formula,aoi_sim,aoi_stderr,frames,seed";
pub const ANALYZE_HEADER: &str = "protocol,n,m,pa,throughput,frame_term,inter_update_term,wait_term,total";
pub const SWEEP_HEADER: &str =
    "protocol,n,m,n_pa,pa,load,plr,plr_stderr,throughput,aoi_formula,aoi_sim,aoi_sim_stderr,seed,flag";
pub const FRAME_HEADER: &str = "n,n_pa,pa,m_star,aoi_star,m_evaluated,flag";
pub const RATIO_HEADER: &str =
    "n,n_pa,pa,m_fixed,m_star,aoi_star,aoi_fixed,aoi_sa_star,ratio_opt_vs_fixed,ratio_irsa_vs_sa,flag";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(e) => e.into(),
            SimError::Domain(m) => CliError::Runtime(m),
        }
    }
}

/// `start:stop:count[:log]`, inclusive of both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub log: bool,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                let t = i as f64 / last;
                if self.log {
                    (self.start.ln() + t * (self.stop.ln() - self.start.ln())).exp()
                } else {
                    self.start + t * (self.stop - self.start)
                }
            })
            .collect()
    }

    /// Values rounded to positive integers, sorted and de-duplicated.
    pub fn integer_values(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.values().iter().map(|v| v.round().max(1.0) as u32).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let log = match parts.as_slice() {
            [_, _, _] => false,
            [_, _, _, "log"] => true,
            [_, _, _, other] => return Err(format!("unknown grid scale `{other}`, expected `log`")),
            _ => return Err(format!("grid `{s}` is not start:stop:count[:log]")),
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("bad grid bound `{x}`"));
        let start = num(parts[0])?;
        let stop = num(parts[1])?;
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| format!("bad grid count `{}`", parts[2]))?;
        if count == 0 {
            return Err("grid is empty (count = 0)".into());
        }
        if !start.is_finite() || !stop.is_finite() {
            return Err("grid bounds must be finite".into());
        }
        if log && !(start > 0.0 && stop > 0.0) {
            return Err("log grid needs positive bounds".into());
        }
        Ok(Self { start, stop, count, log })
    }
}

#[derive(Debug, Parser)]
#[command(name = "irsa-aoi", version, about = "Age of information of slotted ALOHA and IRSA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the closed-form average age for one operating point.
    Analyze(AnalyzeArgs),
    /// Monte Carlo loss rate or time-domain age simulation.
    Simulate(SimulateArgs),
    /// Age against the mean number of active users.
    Sweep(SweepArgs),
    /// Optimum frame size and age ratios.
    Optimize(OptimizeArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub protocol: Protocol,
    #[arg(long)]
    pub n: u32,
    #[arg(long, default_value_t = 1)]
    pub m: u32,
    #[arg(long)]
    pub pa: Option<f64>,
    /// Packet loss rate; the throughput is then `(1 - plr)·G`.
    #[arg(long, conflicts_with = "throughput")]
    pub plr: Option<f64>,
    #[arg(long)]
    pub throughput: Option<f64>,
    /// Slotted ALOHA at its optimal activation probability `1/n`.
    #[arg(long, conflicts_with_all = ["plr", "throughput", "pa"])]
    pub optimal: bool,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Plr,
    Aoi,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Key-value config file; flags given explicitly override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub protocol: Option<Protocol>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub m: Option<u32>,
    #[arg(long)]
    pub pa: Option<f64>,
    /// Degree distribution `deg:prob[,deg:prob...]` (IRSA default `3:1`).
    #[arg(long)]
    pub lambda: Option<DegreeDistribution>,
    /// Frames to simulate; for slotted ALOHA a frame is one slot.
    #[arg(long, visible_alias = "slots")]
    pub frames: Option<u64>,
    /// Initial frames (slots for slotted ALOHA) excluded from age statistics.
    #[arg(long, default_value_t = 10)]
    pub transient: u64,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub protocol: Protocol,
    #[arg(long)]
    pub n: u32,
    /// Frame sizes, comma separated (ignored for slotted ALOHA).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub m: Vec<u32>,
    #[arg(long, default_value = "3:1")]
    pub lambda: DegreeDistribution,
    /// Grid of `n·pa` values.
    #[arg(long)]
    pub npa: GridSpec,
    /// Frames per loss-rate estimate.
    #[arg(long, default_value_t = SimBudget::default().plr_frames)]
    pub frames: u64,
    /// Also run the time-domain age simulation over this many frames.
    #[arg(long)]
    pub aoi_frames: Option<u64>,
    #[arg(long, default_value_t = SimBudget::default().aoi_transient)]
    pub transient: u64,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Frame,
    Ratio,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, value_enum)]
    pub target: Target,
    #[arg(long)]
    pub n: u32,
    #[arg(long, default_value = "3:1")]
    pub lambda: DegreeDistribution,
    #[arg(long)]
    pub npa: GridSpec,
    /// Frame sizes to search (rounded to integers). Default: 32 geometric
    /// points from the maximum degree to 2000.
    #[arg(long)]
    pub m_grid: Option<GridSpec>,
    /// Reference frame size for `--target ratio`.
    #[arg(long, default_value_t = 1000)]
    pub m_fixed: u32,
    #[arg(long, default_value_t = SimBudget::default().plr_frames)]
    pub frames: u64,
    /// Skip the local search around the coarse minimiser.
    #[arg(long)]
    pub no_refine: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: String,
    pub config_snapshot: String,
    pub root_seed: u64,
    pub tool_version: String,
    pub wall_time_secs: f64,
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the exit code. Tables go to `stdout` unless `--out` is given.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                EXIT_OK
            } else {
                let _ = write!(stderr, "{e}");
                EXIT_USAGE
            };
        }
    };
    let command_line = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    match dispatch(cli.command, &command_line, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            e.exit_code()
        }
    }
}

fn dispatch(
    command: Command,
    command_line: &str,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, CliError> {
    match command {
        Command::Analyze(a) => {
            let table = cmd_analyze(&a)?;
            stdout.write_all(table.as_bytes()).map_err(io_err("stdout"))?;
            Ok(EXIT_OK)
        }
        Command::Simulate(a) => {
            let out = Output::open(&a.run)?;
            let started = Instant::now();
            let (cfg, frames) = simulate_config(&a)?;
            let seed = a.run.seed.unwrap_or(DEFAULT_SEED);
            let (table, diverged) = with_jobs(a.run.jobs, || cmd_simulate(&cfg, a.mode, frames, a.transient, seed))?;
            let snapshot = format!(
                "mode={}\n{}frames={frames}\ntransient={}\n",
                if a.mode == Mode::Plr { "plr" } else { "aoi" },
                cfg.to_kv_string(),
                a.transient
            );
            out.finish(&table, command_line, snapshot, seed, started, stdout)?;
            if diverged {
                let _ = writeln!(stderr, "warning: some nodes never delivered; aoi_sim is a lower bound");
                return Ok(EXIT_RUNTIME);
            }
            Ok(EXIT_OK)
        }
        Command::Sweep(a) => {
            let out = Output::open(&a.run)?;
            let started = Instant::now();
            let seed = a.run.seed.unwrap_or(DEFAULT_SEED);
            let table = with_jobs(a.run.jobs, || Ok(cmd_sweep(&a, seed)))?;
            out.finish(&table, command_line, format!("{a:?}"), seed, started, stdout)?;
            Ok(EXIT_OK)
        }
        Command::Optimize(a) => {
            let out = Output::open(&a.run)?;
            let started = Instant::now();
            let seed = a.run.seed.unwrap_or(DEFAULT_SEED);
            let table = with_jobs(a.run.jobs, || cmd_optimize(&a, seed))?;
            out.finish(&table, command_line, format!("{a:?}"), seed, started, stdout)?;
            Ok(EXIT_OK)
        }
    }
}

fn io_err(what: impl fmt::Display) -> impl FnOnce(io::Error) -> CliError {
    move |e| CliError::Io(format!("{what}: {e}"))
}

fn with_jobs<R: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> Result<R, CliError> + Send,
) -> Result<R, CliError> {
    match jobs {
        None => f(),
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?
            .install(f),
    }
}

/// Output target, opened before any work so an unwritable path fails fast.
struct Output {
    file: Option<(PathBuf, File)>,
}

impl Output {
    fn open(run: &RunArgs) -> Result<Self, CliError> {
        let file = match &run.out {
            None => None,
            Some(path) => Some((
                path.clone(),
                File::create(path).map_err(io_err(path.display()))?,
            )),
        };
        Ok(Self { file })
    }

    fn finish(
        self,
        table: &str,
        command_line: &str,
        config_snapshot: String,
        root_seed: u64,
        started: Instant,
        stdout: &mut dyn Write,
    ) -> Result<(), CliError> {
        let Some((path, mut file)) = self.file else {
            return stdout.write_all(table.as_bytes()).map_err(io_err("stdout"));
        };
        file.write_all(table.as_bytes()).map_err(io_err(path.display()))?;
        let manifest = RunManifest {
            command_line: command_line.to_string(),
            config_snapshot,
            root_seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        let manifest_path = manifest_path(&path);
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(&manifest_path, json + "\n").map_err(io_err(manifest_path.display()))
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Flags never contain the field separator or a line break.
fn sanitize(flag: &str) -> String {
    flag.replace([',', '\n', '\r'], ";")
}

fn breakdown_row(protocol: Protocol, n: u32, m: u32, pa: Option<f64>, s: f64, b: &AoiBreakdown) -> String {
    format!(
        "{protocol},{n},{m},{},{},{},{},{},{}\n",
        opt(pa),
        num(s),
        num(b.frame_term),
        num(b.inter_update_term),
        num(b.wait_term),
        num(b.total)
    )
}

fn analysis_err(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::Domain(_) => CliError::Usage(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<String, CliError> {
    let usage = |m: &str| Err(CliError::Usage(m.to_string()));
    if a.n == 0 {
        return usage("--n must be positive");
    }
    let mut table = format!("{ANALYZE_HEADER}\n");
    if a.optimal {
        if a.protocol != Protocol::SlottedAloha {
            return usage("--optimal applies to --protocol sa");
        }
        let opt = sa_optimal_aoi(a.n);
        let s = sa_throughput(a.n, opt.pa_star);
        let b = AoiBreakdown {
            frame_term: 0.5,
            inter_update_term: opt.aoi_star - 0.5,
            wait_term: 0.0,
            total: opt.aoi_star,
        };
        table += &breakdown_row(a.protocol, a.n, 1, Some(opt.pa_star), s, &b);
        return Ok(table);
    }
    if let Some(pa) = a.pa {
        if !(pa > 0.0 && pa <= 1.0) {
            return usage("--pa must lie in (0, 1]");
        }
    }
    let s = match (a.throughput, a.plr) {
        (Some(s), None) => s,
        (None, Some(plr)) => {
            if !(0.0..=1.0).contains(&plr) {
                return usage("--plr must lie in [0, 1]");
            }
            let Some(pa) = a.pa else {
                return usage("--plr needs --pa to compute the load");
            };
            let load = match a.protocol {
                Protocol::SlottedAloha => f64::from(a.n) * pa,
                Protocol::Irsa => irsa_load(a.n, a.m, pa),
            };
            (1.0 - plr) * load
        }
        _ => return usage("exactly one of --plr or --throughput is required"),
    };
    let b = match a.protocol {
        Protocol::SlottedAloha => {
            if a.m != 1 {
                return usage("slotted ALOHA uses m = 1");
            }
            aoi_sa_breakdown(a.n, s).map_err(analysis_err)?
        }
        Protocol::Irsa => {
            let Some(pa) = a.pa else {
                return usage("--protocol irsa needs --pa");
            };
            aoi_irsa(a.n, a.m, pa, s).map_err(analysis_err)?
        }
    };
    table += &breakdown_row(a.protocol, a.n, a.m, a.pa, s, &b);
    Ok(table)
}

fn simulate_config(a: &SimulateArgs) -> Result<(SystemConfig, u64), CliError> {
    let base = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path.display()))?;
            Some(SystemConfig::from_kv_str(&text)?)
        }
        None => None,
    };
    let protocol = a
        .protocol
        .or(base.as_ref().map(|c| c.protocol))
        .unwrap_or(Protocol::Irsa);
    let missing = |flag: &str| CliError::Usage(format!("missing --{flag} (or a --config entry)"));
    let n = a.n.or(base.as_ref().map(|c| c.n)).ok_or_else(|| missing("n"))?;
    let pa = a.pa.or(base.as_ref().map(|c| c.pa)).ok_or_else(|| missing("pa"))?;
    let m = a.m.or(base.as_ref().map(|c| c.m));
    let lambda = a.lambda.clone().or(base.as_ref().map(|c| c.lambda.clone()));
    let cfg = match protocol {
        Protocol::SlottedAloha => SystemConfig {
            m: m.unwrap_or(1),
            lambda: lambda.unwrap_or(DegreeDistribution::regular(1)?),
            ..SystemConfig::sa(n, pa)
        },
        Protocol::Irsa => SystemConfig::irsa(
            n,
            m.ok_or_else(|| missing("m"))?,
            pa,
            lambda.unwrap_or(DegreeDistribution::regular(3)?),
        ),
    };
    let report = validate_config(&cfg);
    if !report.ok {
        return Err(CliError::Usage(report.violations.join("; ")));
    }
    let frames = match (a.frames, a.mode, protocol) {
        (Some(f), _, _) => f,
        (None, Mode::Plr, _) => 10_000,
        (None, Mode::Aoi, Protocol::Irsa) => 20_000,
        (None, Mode::Aoi, Protocol::SlottedAloha) => 1_000_000,
    };
    if frames == 0 {
        return Err(CliError::Usage("--frames must be positive".into()));
    }
    Ok((cfg, frames))
}

fn formula_aoi(cfg: &SystemConfig, s: f64) -> Option<f64> {
    match cfg.protocol {
        Protocol::SlottedAloha => aoi_sa_breakdown(cfg.n, s).ok().map(|b| b.total),
        Protocol::Irsa => aoi_irsa(cfg.n, cfg.m, cfg.pa, s).ok().map(|b| b.total),
    }
}

/// Returns the table and whether the age estimate is only a lower bound.
pub fn cmd_simulate(
    cfg: &SystemConfig,
    mode: Mode,
    frames: u64,
    transient: u64,
    seed: u64,
) -> Result<(String, bool), CliError> {
    let mut table = format!("{SIMULATE_HEADER}\n");
    let prefix = format!("{},{},{},{}", cfg.n, cfg.m, num(cfg.pa), cfg.lambda.to_csv_field());
    let diverged = match mode {
        Mode::Plr => {
            let est = estimate_plr(cfg, frames, seed)?;
            let s = est.throughput();
            let _ = writeln!(
                table,
                "{prefix},{},{},{},{},{},,,{frames},{seed}",
                num(est.load),
                num(est.plr),
                num(est.stderr),
                num(s),
                opt(formula_aoi(cfg, s))
            );
            false
        }
        Mode::Aoi => {
            let stats = match cfg.protocol {
                Protocol::SlottedAloha => simulate_aoi_sa(cfg, frames, seed, transient)?,
                Protocol::Irsa => simulate_aoi_irsa(cfg, frames, seed, transient)?,
            };
            let load = match cfg.protocol {
                Protocol::SlottedAloha => f64::from(cfg.n) * cfg.pa,
                Protocol::Irsa => irsa_load(cfg.n, cfg.m, cfg.pa),
            };
            let s = stats.throughput;
            let _ = writeln!(
                table,
                "{prefix},{},{},,{},{},{},{},{frames},{seed}",
                num(load),
                num(1.0 - s / load),
                num(s),
                opt(formula_aoi(cfg, s)),
                num(stats.network_aoi),
                num(stats.per_node_stderr)
            );
            stats.diverged
        }
    };
    Ok((table, diverged))
}

fn pa_grid(n: u32, npa: &GridSpec) -> Vec<f64> {
    npa.values().into_iter().map(|x| x / f64::from(n)).collect()
}

pub fn cmd_sweep(a: &SweepArgs, seed: u64) -> String {
    let exp = Experiment::new(
        seed,
        SimBudget {
            plr_frames: a.frames,
            aoi_frames: a.aoi_frames,
            aoi_transient: a.transient,
        },
    );
    let grid = pa_grid(a.n.max(1), &a.npa);
    let frame_sizes: Vec<u32> = match a.protocol {
        Protocol::SlottedAloha => vec![1],
        Protocol::Irsa => a.m.clone(),
    };
    let mut table = format!("{SWEEP_HEADER}\n");
    for &m in &frame_sizes {
        for p in sweep_aoi_vs_activity(&exp, a.protocol, a.n, m, &a.lambda, &grid) {
            let _ = writeln!(
                table,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                p.protocol,
                a.n,
                p.m,
                num(p.n_pa),
                num(p.pa),
                num(p.load),
                num(p.plr),
                num(p.plr_stderr),
                num(p.throughput),
                opt(p.aoi_formula),
                opt(p.aoi_sim),
                opt(p.aoi_sim_stderr),
                p.seed,
                p.flag.as_deref().map(sanitize).unwrap_or_default()
            );
        }
    }
    table
}

pub fn cmd_optimize(a: &OptimizeArgs, seed: u64) -> Result<String, CliError> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let exp = Experiment::new(
        seed,
        SimBudget {
            plr_frames: a.frames,
            ..SimBudget::default()
        },
    );
    let grid = pa_grid(a.n, &a.npa);
    let max_degree = a.lambda.max_degree();
    let m_grid: Vec<u32> = match &a.m_grid {
        Some(g) => g.integer_values(),
        None => default_m_grid(max_degree, 2000.max(max_degree), 32),
    };
    let refine = !a.no_refine;
    let mut table = String::new();
    match a.target {
        Target::Frame => {
            table += FRAME_HEADER;
            table.push('\n');
            let rows: Vec<String> = {
                use rayon::prelude::*;
                grid.par_iter()
                    .map(|&pa| {
                        let result = if refine {
                            optimal_frame_size_refined(&exp, a.n, pa, &a.lambda, &m_grid)
                        } else {
                            optimal_frame_size(&exp, a.n, pa, &a.lambda, &m_grid)
                        };
                        let n_pa = num(f64::from(a.n) * pa);
                        match result {
                            Ok(r) => format!(
                                "{},{n_pa},{},{},{},{},{}\n",
                                a.n,
                                num(r.pa),
                                r.m_star,
                                num(r.aoi_star),
                                r.grid_evaluated.len(),
                                r.flag.as_deref().map(sanitize).unwrap_or_default()
                            ),
                            Err(e) => format!("{},{n_pa},{},,,0,{}\n", a.n, num(pa), sanitize(&format!("error: {e}"))),
                        }
                    })
                    .collect()
            };
            rows.iter().for_each(|r| table += r);
        }
        Target::Ratio => {
            table += RATIO_HEADER;
            table.push('\n');
            for p in aoi_ratio_curves(&exp, a.n, &a.lambda, &grid, a.m_fixed, &m_grid, refine) {
                let _ = writeln!(
                    table,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    a.n,
                    num(p.n_pa),
                    num(p.pa),
                    p.m_fixed,
                    p.m_star.map(|m| m.to_string()).unwrap_or_default(),
                    opt(p.aoi_star),
                    opt(p.aoi_fixed),
                    num(p.aoi_sa_star),
                    opt(p.ratio_opt_vs_fixed),
                    opt(p.ratio_irsa_vs_sa),
                    p.flag.as_deref().map(sanitize).unwrap_or_default()
                );
            }
        }
    }
    Ok(table)
}
