//! Command-line front end. Reports are JSON, traces and trajectories CSV.
//!
//! Exit codes: 0 success, 1 solver failure, 2 usage error, 3 malformed
//! input or unwritable output.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::closure::{
    integrate_moments_with, ssa_simulate, ClosureSupport, DimerizationModel, IntegrationOptions,
};
use crate::cont::{
    choose_truncation, lapidoth_moser_lb, solve_grid_kernel, solve_poisson, ContCost,
    ContSolveConfig, GridKernel, PoissonChannelSpec, QuadConfig,
};
use crate::dmc::{
    blahut_arimoto, perturb_and_bound, solve_capacity, CostMode, DiscreteChannel, SolveConfig,
    StoppingMode, TracePoint,
};
use crate::error::Error;
use crate::maxent::{solve_maxent_with, MaxEntMode, MaxEntOptions, MomentData, Support};

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("'{s}' is not a positive number")),
    }
}

fn nonneg_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("'{s}' is not a nonnegative number")),
    }
}

fn unit_open(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("'{s}' is not in (0, 1)")),
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("'{s}' is not a positive integer")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "capax", version, about = "Certified capacity bounds, noisy-moment maximum entropy and moment closure")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Discrete memoryless channels
    #[command(subcommand)]
    Dmc(DmcCommand),
    /// Discrete-time Poisson channel with peak (and optional average) power
    #[command(subcommand)]
    Poisson(PoissonCommand),
    /// Tabulated continuous-input kernel
    #[command(subcommand)]
    Kernel(KernelCommand),
    /// Relative entropy minimization under noisy moments
    #[command(subcommand)]
    Maxent(MaxentCommand),
    /// Dimerization moment closure and stochastic simulation
    #[command(subcommand)]
    Closure(ClosureCommand),
}

#[derive(Debug, Subcommand)]
pub enum DmcCommand {
    /// Capacity interval from the smoothed dual (channel CSV, one row per input)
    Solve(DmcSolveArgs),
    /// Blahut-Arimoto iterations
    Ba(DmcBaArgs),
}

#[derive(Debug, Subcommand)]
pub enum PoissonCommand {
    /// Capacity interval for the truncated Poisson channel
    Bounds(PoissonArgs),
}

#[derive(Debug, Subcommand)]
pub enum KernelCommand {
    /// Capacity interval for a kernel given on an input grid (TOML config)
    Bounds(KernelArgs),
}

#[derive(Debug, Subcommand)]
pub enum MaxentCommand {
    /// Solve a moment problem given as TOML
    Solve(MaxentArgs),
}

#[derive(Debug, Subcommand)]
pub enum ClosureCommand {
    /// Integrate the closed moment equations
    Run(ClosureRunArgs),
    /// Gillespie simulation (worker count capped by CAPAX_THREADS)
    Ssa(ClosureSsaArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Report path; the JSON report goes to stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DmcSolveArgs {
    /// Channel matrix CSV without header
    #[arg(long)]
    pub channel: PathBuf,
    /// A-posteriori target gap [default: 1e-3 unless --iters is given]
    #[arg(long, value_parser = positive_f64, conflicts_with = "iters")]
    pub eps: Option<f64>,
    /// Fixed iteration count with a-priori guarantee
    #[arg(long, value_parser = positive_usize)]
    pub iters: Option<usize>,
    /// Smoothing parameter override
    #[arg(long, value_parser = positive_f64)]
    pub nu: Option<f64>,
    /// Perturbation applied when the channel has zero entries
    #[arg(long, value_parser = positive_f64, default_value_t = 1e-6)]
    pub perturb: f64,
    /// Trace CSV path (k,upper,lower,gap)
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct DmcBaArgs {
    #[arg(long)]
    pub channel: PathBuf,
    #[arg(long, value_parser = positive_usize, default_value_t = 10_000)]
    pub iters: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PoissonArgs {
    /// Peak input intensity
    #[arg(long = "A", value_parser = positive_f64)]
    pub a: f64,
    /// Dark current; must be positive for the dual ball to be bounded
    #[arg(long, value_parser = nonneg_f64)]
    pub eta: f64,
    /// Output truncation level [default: smallest M meeting --target]
    #[arg(long = "M", value_parser = positive_usize)]
    pub m: Option<usize>,
    #[arg(long, value_parser = positive_usize, default_value_t = 40_000)]
    pub iters: usize,
    /// Tail order used by the truncation error
    #[arg(long, value_parser = unit_open, default_value_t = 0.5)]
    pub k: f64,
    /// Smoothing parameter [default: minimizes the a-priori error]
    #[arg(long, value_parser = positive_f64)]
    pub nu: Option<f64>,
    /// Truncation error target used when --M is absent
    #[arg(long, value_parser = positive_f64, default_value_t = 2e-3)]
    pub target: f64,
    /// Average intensity budget, E[X] <= power
    #[arg(long, value_parser = nonneg_f64)]
    pub power: Option<f64>,
    #[arg(long, value_parser = positive_usize, default_value_t = 8)]
    pub quad_order: usize,
    #[arg(long, value_parser = positive_f64, default_value_t = 8.0)]
    pub panels_per_unit: f64,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = positive_usize)]
    pub iters: Option<usize>,
    #[arg(long, value_parser = positive_f64)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct MaxentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Accuracy of the a-priori guarantee
    #[arg(long, value_parser = positive_f64, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long, value_parser = positive_usize)]
    pub iters: Option<usize>,
    /// Fail unless a strictly feasible point certifies the run
    #[arg(long)]
    pub require_apriori: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ClosureRunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = positive_usize)]
    pub mc: Option<usize>,
    #[arg(long, value_parser = positive_f64)]
    pub kappa: Option<f64>,
    #[arg(long, value_parser = positive_f64)]
    pub dt: Option<f64>,
    #[arg(long, value_parser = positive_f64)]
    pub t_end: Option<f64>,
    /// Trajectory CSV path (t,M1,M2,zeta)
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ClosureSsaArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = positive_usize, default_value_t = 100_000)]
    pub traj: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of grid times in [0, T]
    #[arg(long, value_parser = positive_usize, default_value_t = 101)]
    pub grid: usize,
    #[arg(long, value_parser = positive_f64)]
    pub t_end: Option<f64>,
    /// Moment CSV path (t,M1,M2,M3,se_M1,se_M2,se_M3)
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub input_grid: Vec<f64>,
    /// rows[i][k] = W(i | input_grid[k])
    pub rows: Vec<Vec<f64>>,
    pub outputs_m: Option<usize>,
    pub iterations: Option<usize>,
    pub tail_order_k: Option<f64>,
    pub smoothing_nu: Option<f64>,
    pub average_input_budget: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MaxentConfig {
    pub moments: Vec<f64>,
    pub radii: Vec<f64>,
    pub support_interval: Option<[f64; 2]>,
    pub support_points: Option<Vec<f64>>,
    pub reference_weights: Option<Vec<f64>>,
    pub slater_degree: Option<usize>,
    pub iterations: Option<usize>,
    pub check_every: Option<usize>,
    pub pseudo_delta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ClosureConfig {
    pub k1_per_time: f64,
    pub k2_per_time: f64,
    pub m0_molecules: u32,
    pub d0_molecules: u32,
    pub order_mc: Option<usize>,
    pub kappa_moments: Option<f64>,
    pub dt_time: Option<f64>,
    pub t_end_time: Option<f64>,
    pub parity_support: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub input: Value,
    pub result: Value,
    pub trace: Option<PathBuf>,
    pub wall_time_s: f64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Solver(String),
    Input(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Solver(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Input(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Solver(m) | Failure::Input(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Domain(_) => Failure::Usage(msg),
            Error::Input(_) | Error::Io(_) => Failure::Input(msg),
            _ => Failure::Solver(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

pub fn parse<I, T>(args: I) -> std::result::Result<RunConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    RunConfig::try_parse_from(args)
}

/// Parses, dispatches and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match parse(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&config) {
        Ok(()) => 0,
        Err((code, msg)) => {
            eprintln!("capax: {msg}");
            code
        }
    }
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Failure::Input(format!("csv: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(&r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Failure::Input(format!("csv: {e}")))
}

/// Writes an iteration trace with header k,upper,lower,gap.
pub fn emit_trace(points: &[TracePoint], path: &Path) -> crate::Result<()> {
    if points.is_empty() {
        return Err(Error::Input("trace is empty".into()));
    }
    if points.windows(2).any(|w| w[1].k <= w[0].k) {
        return Err(Error::Input("trace iterations are not increasing".into()));
    }
    let rows = points.iter().map(|p| {
        vec![p.k.to_string(), p.upper.to_string(), p.lower.to_string(), (p.upper - p.lower).to_string()]
    });
    let bytes = csv_bytes(&["k", "upper", "lower", "gap"], rows).map_err(|f| Error::Input(f.message().into()))?;
    write_atomic(path, &bytes).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Reads a channel from headerless CSV or from the input echo of an
/// earlier JSON report.
pub fn read_channel(path: &Path) -> crate::Result<DiscreteChannel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let rows = if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_value::<Vec<Vec<f64>>>(v["input"]["channel"].clone())
            .map_err(|e| Error::Input(format!("{}: no channel in report input: {e}", path.display())))?
    } else {
        parse_channel_csv(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
    };
    DiscreteChannel::new(rows).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn parse_channel_csv(text: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| format!("row {i}: {e}"))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, s)| s.parse::<f64>().map_err(|_| format!("row {i} column {j}: '{s}' is not a number")))
            .collect::<std::result::Result<Vec<f64>, String>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| input_err(path, e))?;
    toml::from_str(&text).map_err(|e| input_err(path, e))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn finish(
    command: &str,
    input: Value,
    result: Value,
    trace: Option<&PathBuf>,
    out: &OutputArgs,
    start: Instant,
) -> CliResult<()> {
    let report = RunReport {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        input,
        result,
        trace: trace.cloned(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    match &out.out {
        Some(p) => write_atomic(p, text.as_bytes()).map_err(|e| input_err(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_trace(points: &[TracePoint], path: Option<&PathBuf>) -> CliResult<()> {
    match path {
        Some(p) => emit_trace(points, p).map_err(Failure::from),
        None => Ok(()),
    }
}

/// Runs a parsed command; the error carries the exit code and message.
pub fn dispatch(config: &RunConfig) -> std::result::Result<(), (i32, String)> {
    dispatch_inner(config).map_err(|f| (f.code(), f.message().to_string()))
}

fn dispatch_inner(config: &RunConfig) -> CliResult<()> {
    let start = Instant::now();
    match &config.command {
        Command::Dmc(DmcCommand::Solve(a)) => dmc_solve(a, start),
        Command::Dmc(DmcCommand::Ba(a)) => dmc_ba(a, start),
        Command::Poisson(PoissonCommand::Bounds(a)) => poisson_bounds(a, start),
        Command::Kernel(KernelCommand::Bounds(a)) => kernel_bounds(a, start),
        Command::Maxent(MaxentCommand::Solve(a)) => maxent_solve(a, start),
        Command::Closure(ClosureCommand::Run(a)) => closure_run(a, start),
        Command::Closure(ClosureCommand::Ssa(a)) => closure_ssa(a, start),
    }
}

fn dmc_solve(a: &DmcSolveArgs, start: Instant) -> CliResult<()> {
    let channel = read_channel(&a.channel)?;
    let mut cfg = match (a.iters, a.eps) {
        (Some(n), _) => SolveConfig::iterations(n),
        (None, e) => SolveConfig::target(e.unwrap_or(1e-3)),
    };
    cfg.nu = a.nu;
    if a.trace.is_some() {
        cfg.stopping = StoppingMode::APosteriori;
    }
    let input = json!({ "channel": channel.rows(), "eps": a.eps, "iters": a.iters, "nu": a.nu });
    let (result, trace) = if channel.gamma() > 0.0 {
        let cert = solve_capacity(&channel, None, &cfg)?;
        let t = cert.trace.clone();
        (to_value(&cert), t)
    } else {
        let b = perturb_and_bound(&channel, a.perturb, &cfg)?;
        let t = b.certificate.trace.clone();
        (to_value(&b), t)
    };
    write_trace(&trace, a.trace.as_ref())?;
    finish("dmc solve", input, result, a.trace.as_ref(), &a.output, start)
}

fn dmc_ba(a: &DmcBaArgs, start: Instant) -> CliResult<()> {
    let channel = read_channel(&a.channel)?;
    let (values, p) = blahut_arimoto(&channel, a.iters);
    let result = json!({
        "mutual_information": values.last().copied().unwrap_or(0.0),
        "iterations": a.iters,
        "p": p,
    });
    let input = json!({ "channel": channel.rows(), "iters": a.iters });
    finish("dmc ba", input, result, None, &a.output, start)
}

fn poisson_bounds(a: &PoissonArgs, start: Instant) -> CliResult<()> {
    let spec = PoissonChannelSpec::new(a.a, a.eta)?;
    let m = match a.m {
        Some(m) => m,
        None => choose_truncation(&spec, a.k, a.target)?,
    };
    let cost = a.power.map(|s| ContCost::linear(s, CostMode::Inequality));
    let cfg = ContSolveConfig {
        iters: a.iters,
        nu: a.nu,
        quad: QuadConfig { order: a.quad_order, panels_per_unit: a.panels_per_unit },
        check_every: None,
        eps: None,
    };
    let bounds = solve_poisson(&spec, m, a.k, cost.as_ref(), &cfg)?;
    write_trace(&bounds.trace, a.trace.as_ref())?;
    let mut result = to_value(&bounds);
    result["lapidoth_moser_lower"] = json!(lapidoth_moser_lb(a.a, a.eta)?);
    let input = json!({
        "A": a.a, "eta": a.eta, "M": m, "iters": a.iters, "k": a.k, "nu": a.nu, "power": a.power,
    });
    finish("poisson bounds", input, result, a.trace.as_ref(), &a.output, start)
}

fn kernel_bounds(a: &KernelArgs, start: Instant) -> CliResult<()> {
    let cfg: KernelConfig = read_toml(&a.config)?;
    let kernel = GridKernel::new(cfg.input_grid.clone(), cfg.rows.clone()).map_err(|e| input_err(&a.config, e))?;
    let m = cfg.outputs_m.unwrap_or(kernel.outputs());
    let k = cfg.tail_order_k.unwrap_or(0.5);
    let cost = cfg.average_input_budget.map(|s| ContCost::linear(s, CostMode::Inequality));
    let mut sc = ContSolveConfig::iterations(a.iters.or(cfg.iterations).unwrap_or(20_000));
    sc.nu = a.nu.or(cfg.smoothing_nu);
    let bounds = solve_grid_kernel(kernel, m, k, cost.as_ref(), &sc)?;
    write_trace(&bounds.trace, a.trace.as_ref())?;
    finish("kernel bounds", to_value(&cfg), to_value(&bounds), a.trace.as_ref(), &a.output, start)
}

fn maxent_solve(a: &MaxentArgs, start: Instant) -> CliResult<()> {
    let cfg: MaxentConfig = read_toml(&a.config)?;
    let (support, mode) = match (&cfg.support_interval, &cfg.support_points) {
        (Some([lo, hi]), None) => (Support::Interval { a: *lo, b: *hi }, MaxEntMode::Continuous),
        (None, Some(p)) => {
            let n = p.len().max(1) as f64;
            let w = cfg.reference_weights.clone().unwrap_or_else(|| vec![1.0 / n; p.len()]);
            (Support::Finite { points: p.clone(), weights: w }, MaxEntMode::Finite)
        }
        _ => {
            return Err(input_err(&a.config, "give exactly one of support_interval and support_points"));
        }
    };
    let data = MomentData::new(cfg.moments.clone(), cfg.radii.clone(), support).map_err(|e| input_err(&a.config, e))?;
    let defaults = MaxEntOptions::default();
    let opts = MaxEntOptions {
        slater_degree: cfg.slater_degree,
        max_iters: a.iters.or(cfg.iterations),
        check_every: cfg.check_every,
        pseudo_delta: cfg.pseudo_delta.unwrap_or(defaults.pseudo_delta),
        require_apriori: a.require_apriori,
        ..defaults
    };
    let r = solve_maxent_with(&data, a.eps, mode, &opts)?;
    let mut input = to_value(&cfg);
    input["eps"] = json!(a.eps);
    finish("maxent solve", input, to_value(&r), None, &a.output, start)
}

fn closure_model(cfg: &ClosureConfig) -> CliResult<DimerizationModel> {
    Ok(DimerizationModel::new(cfg.k1_per_time, cfg.k2_per_time, cfg.m0_molecules, cfg.d0_molecules)?)
}

fn closure_run(a: &ClosureRunArgs, start: Instant) -> CliResult<()> {
    let cfg: ClosureConfig = read_toml(&a.config)?;
    let model = closure_model(&cfg)?;
    let mc = a.mc.or(cfg.order_mc).unwrap_or(2);
    let defaults = IntegrationOptions::default();
    let opts = IntegrationOptions {
        kappa: a.kappa.or(cfg.kappa_moments).unwrap_or(defaults.kappa),
        dt: a.dt.or(cfg.dt_time).unwrap_or(defaults.dt),
        t_end: a.t_end.or(cfg.t_end_time).unwrap_or(defaults.t_end),
        support: if cfg.parity_support.unwrap_or(false) { ClosureSupport::Parity } else { ClosureSupport::Full },
    };
    let tr = integrate_moments_with(&model, mc, &opts, None)?;
    if let Some(p) = &a.csv {
        let rows = (0..tr.t.len()).map(|i| {
            vec![tr.t[i].to_string(), tr.mu[i][1].to_string(), tr.mu[i][2].to_string(), tr.zeta[i].to_string()]
        });
        let bytes = csv_bytes(&["t", "M1", "M2", "zeta"], rows)?;
        write_atomic(p, &bytes).map_err(|e| input_err(p, e))?;
    }
    let result = json!({
        "order_mc": mc,
        "options": opts,
        "steps": tr.t.len() - 1,
        "final_time": tr.t.last(),
        "final_moments": tr.last(),
        "final_closure": tr.zeta.last(),
        "trajectory_csv": a.csv,
    });
    finish("closure run", to_value(&cfg), result, None, &a.output, start)
}

fn closure_ssa(a: &ClosureSsaArgs, start: Instant) -> CliResult<()> {
    let cfg: ClosureConfig = read_toml(&a.config)?;
    let model = closure_model(&cfg)?;
    if a.grid < 2 {
        return Err(Failure::Usage("--grid must be at least 2".into()));
    }
    let t_end = a.t_end.or(cfg.t_end_time).unwrap_or(5.0);
    let r = ssa_simulate(&model, t_end, a.grid, a.traj, a.seed)?;
    if let Some(p) = &a.csv {
        let rows = (0..r.t.len()).map(|i| {
            let m = r.moments[i];
            let s = r.stderr[i];
            [r.t[i], m[0], m[1], m[2], s[0], s[1], s[2]].iter().map(|v| v.to_string()).collect()
        });
        let bytes = csv_bytes(&["t", "M1", "M2", "M3", "se_M1", "se_M2", "se_M3"], rows)?;
        write_atomic(p, &bytes).map_err(|e| input_err(p, e))?;
    }
    let result = json!({
        "trajectories": r.n_traj,
        "seed": a.seed,
        "final_time": t_end,
        "final_moments": r.moments.last(),
        "final_stderr": r.stderr.last(),
        "final_histogram": r.final_histogram,
        "moments_csv": a.csv,
    });
    finish("closure ssa", to_value(&cfg), result, None, &a.output, start)
}
