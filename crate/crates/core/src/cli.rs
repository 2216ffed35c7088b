//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 small-gain
//! violation (including a refused verification), 3 inconclusive small-gain
//! verdict, 4 simulation blow-up, 5 failed bound check.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bound_checker::{check_ag, check_gas, check_gs, summary_table, BoundReport};
use crate::dde_sim::{
    build_auxiliary_system, simulate_with, HistoryFunction, InputSignal, SimError, Trajectory,
};
use crate::fixtures::EXAMPLE_CONFIG;
use crate::gain_algebra::{compose, log_space, GridSpec, KFunction};
use crate::gain_graph::{check_cyclic_small_gain, OverallVerdict, SmallGainReport};
use crate::gain_reduction::{closed_loop_input_gains, ClosedLoopGains};
use crate::specdsl::{SystemBundle, SystemConfig};

pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const VIOLATION: i32 = 2;
    pub const INCONCLUSIVE: i32 = 3;
    pub const BLOW_UP: i32 = 4;
    pub const BOUND_FAILED: i32 = 5;
}

#[derive(Debug, Parser)]
#[command(name = "smallgain", version, about = "Cyclic small-gain analysis for interconnected delay systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the cyclic small-gain conditions and build closed-loop gains.
    Analyze(RunArgs),
    /// Integrate the delay equations and export the trajectory.
    Simulate(RunArgs),
    /// Run analysis and simulation, then check the bound estimates.
    Verify(RunArgs),
    /// Print the bundled three-loop example configuration.
    Example {
        /// Write the configuration into this directory instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
struct RunArgs {
    /// Configuration file (JSON).
    #[arg(value_name = "CONFIG")]
    config_pos: Option<PathBuf>,
    #[arg(long, value_name = "CONFIG", conflicts_with = "config_pos")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    tail_fraction: Option<f64>,
    /// Simulate even when the small-gain conditions fail (no verification
    /// claims are made).
    #[arg(long)]
    force_simulate: bool,
    /// `delay:NAME=v1,v2,...` or `gain-scale=f1,f2,...`; runs go to
    /// `OUT/run_XX`.
    #[arg(long)]
    sweep: Option<String>,
    /// Seed for the randomized history checks.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn config_path(&self) -> Option<&Path> {
        self.config.as_deref().or(self.config_pos.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    Analyze,
    Simulate,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "parameter", rename_all = "kebab-case")]
enum SweepPoint {
    Delay { name: String, value: f64 },
    GainScale { value: f64 },
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    subcommand: Mode,
    config: String,
    out: String,
    seed: u64,
    args: &'a RunArgs,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<&'a SweepPoint>,
    artifacts: Vec<String>,
    exit_code: i32,
    notes: Vec<String>,
}

#[derive(Debug, Serialize)]
struct SweepManifest<'a> {
    subcommand: Mode,
    config: String,
    args: &'a RunArgs,
    runs: Vec<SweepRun>,
    exit_code: i32,
}

#[derive(Debug, Serialize)]
struct SweepRun {
    dir: String,
    point: SweepPoint,
    exit_code: i32,
}

/// Accumulates files written into one output directory.
struct Output {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

/// Messages for stdout, collected so that concurrent sweep runs do not
/// interleave.
#[derive(Default)]
struct Log(String);

impl Log {
    fn line(&mut self, s: impl AsRef<str>) {
        self.0.push_str(s.as_ref());
        self.0.push('\n');
    }
}

/// Entry point of the binary.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SMALLGAIN_LOG", "warn")).try_init();
    run(std::env::args_os())
}

/// Runs the command line `args` (including the program name) and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Analyze(a) => run_mode(Mode::Analyze, &a),
        Command::Simulate(a) => run_mode(Mode::Simulate, &a),
        Command::Verify(a) => run_mode(Mode::Verify, &a),
        Command::Example { out } => example(out.as_deref()),
    }
}

fn example(out: Option<&Path>) -> i32 {
    match out {
        None => {
            print!("{EXAMPLE_CONFIG}");
            exit::OK
        }
        Some(dir) => {
            let res = fs::create_dir_all(dir).and_then(|_| fs::write(dir.join("example_three_loop.json"), EXAMPLE_CONFIG));
            match res {
                Ok(()) => exit::OK,
                Err(e) => {
                    eprintln!("error: {e}");
                    exit::CONFIG
                }
            }
        }
    }
}

fn config_error(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    exit::CONFIG
}

fn apply_overrides(cfg: &mut SystemConfig, args: &RunArgs) {
    if let Some(n) = args.grid_points {
        cfg.checks.grid.n_points = n;
    }
    if let Some(t) = args.horizon {
        cfg.simulation.horizon = t;
    }
    if let Some(h) = args.step {
        cfg.simulation.step = h;
    }
    if let Some(f) = args.tail_fraction {
        cfg.checks.tail_fraction = f;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
}

fn parse_sweep(spec: &str, cfg: &SystemConfig) -> Result<Vec<SweepPoint>, String> {
    let (param, values) = spec.split_once('=').ok_or_else(|| format!("sweep '{spec}' must look like PARAM=v1,v2"))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("sweep value '{v}' is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("sweep needs at least one value".into());
    }
    if let Some(name) = param.strip_prefix("delay:") {
        if !cfg.delays.contains_key(name) {
            return Err(format!("sweep over undeclared delay '{name}'"));
        }
        return Ok(values.into_iter().map(|value| SweepPoint::Delay { name: name.to_string(), value }).collect());
    }
    if param == "gain-scale" {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(format!("gain scale {v} must be > 0"));
        }
        return Ok(values.into_iter().map(|value| SweepPoint::GainScale { value }).collect());
    }
    Err(format!("unknown sweep parameter '{param}'; use delay:NAME or gain-scale"))
}

fn run_mode(mode: Mode, args: &RunArgs) -> i32 {
    let Some(path) = args.config_path() else {
        return config_error("no configuration given; pass CONFIG or --config");
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return config_error(format!("cannot read {}: {e}", path.display())),
    };
    let mut cfg = match SystemConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => return config_error(format!("{}: {e}", path.display())),
    };
    apply_overrides(&mut cfg, args);

    let Some(spec) = &args.sweep else {
        let mut log = Log::default();
        let code = single_run(mode, args, path, &cfg, None, &args.out, &mut log);
        print!("{}", log.0);
        return code;
    };
    let points = match parse_sweep(spec, &cfg) {
        Ok(p) => p,
        Err(e) => return config_error(e),
    };
    let results: Vec<(i32, Log)> = std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .iter()
            .enumerate()
            .map(|(idx, point)| {
                let cfg = &cfg;
                scope.spawn(move || {
                    let mut log = Log::default();
                    let dir = args.out.join(format!("run_{idx:02}"));
                    let code = single_run(mode, args, path, cfg, Some(point), &dir, &mut log);
                    (code, log)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep run panicked")).collect()
    });
    let mut runs = Vec::new();
    for (idx, ((code, log), point)) in results.into_iter().zip(points).enumerate() {
        println!("== run_{idx:02} ({point:?}): exit {code}");
        print!("{}", log.0);
        runs.push(SweepRun { dir: format!("run_{idx:02}"), point, exit_code: code });
    }
    let code = runs.iter().map(|r| r.exit_code).max().unwrap_or(exit::OK);
    let manifest = SweepManifest { subcommand: mode, config: path.display().to_string(), args, runs, exit_code: code };
    let res = Output::new(&args.out).and_then(|mut o| o.json("manifest.json", &manifest));
    if let Err(e) = res {
        return config_error(format!("cannot write {}: {e}", args.out.display()));
    }
    code
}

/// One analysis/simulation run writing into `dir`.
fn single_run(
    mode: Mode,
    args: &RunArgs,
    path: &Path,
    cfg: &SystemConfig,
    point: Option<&SweepPoint>,
    dir: &Path,
    log: &mut Log,
) -> i32 {
    let mut cfg = cfg.clone();
    if let Some(SweepPoint::Delay { name, value }) = point {
        cfg.delays.insert(name.clone(), *value);
    }
    let mut bundle = match cfg.build() {
        Ok(b) => b,
        Err(e) => return config_error(format!("{}: {e}", path.display())),
    };
    if let Some(SweepPoint::GainScale { value }) = point {
        let scale = KFunction::linear(*value).expect("validated scale");
        bundle.gains = bundle.gains.map_edges(|g| compose(&scale, g));
    }
    let mut out = match Output::new(dir) {
        Ok(o) => o,
        Err(e) => return config_error(format!("cannot create {}: {e}", dir.display())),
    };
    let mut notes = Vec::new();
    let result = match mode {
        Mode::Analyze => analyze(&bundle, &mut out, log).map(|(code, _)| code),
        Mode::Simulate => simulate_only(&bundle, &mut out, log),
        Mode::Verify => verify(&bundle, args.force_simulate, &mut out, log, &mut notes),
    };
    let code = match result {
        Ok(code) => code,
        Err(RunError::Io(e)) => return config_error(format!("cannot write into {}: {e}", dir.display())),
        Err(RunError::Config(msg)) => {
            eprintln!("error: {msg}");
            exit::CONFIG
        }
    };
    if let Err(e) = out.json("config.json", &cfg) {
        return config_error(format!("cannot write into {}: {e}", dir.display()));
    }
    let mut artifacts = out.artifacts.clone();
    artifacts.push("manifest.json".into());
    artifacts.sort();
    let manifest = Manifest {
        subcommand: mode,
        config: path.display().to_string(),
        out: dir.display().to_string(),
        seed: bundle.config.seed,
        args,
        sweep: point,
        artifacts,
        exit_code: code,
        notes,
    };
    if let Err(e) = out.json("manifest.json", &manifest) {
        return config_error(format!("cannot write into {}: {e}", dir.display()));
    }
    code
}

enum RunError {
    Io(io::Error),
    Config(String),
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        RunError::Config(format!("simulation failed: {e}"))
    }
}

#[derive(Serialize)]
struct GainTable {
    s: Vec<f64>,
    rows: Vec<GainRow>,
}

#[derive(Serialize)]
struct GainRow {
    node: usize,
    asymptotic: Vec<f64>,
    gs_sigma: Vec<f64>,
    gs_input: Vec<f64>,
}

#[derive(Serialize)]
struct ClosedLoopOutput<'a> {
    gains: &'a ClosedLoopGains,
    gas_sigma: KFunction,
    table: GainTable,
    notes: Vec<&'static str>,
}

#[derive(Serialize)]
struct Refusal {
    refused: String,
}

fn gain_table(closed: &ClosedLoopGains) -> GainTable {
    let s = log_space(1e-3, 1e3, 13);
    let eval = |g: Option<&KFunction>| s.iter().map(|&x| g.map_or(0.0, |g| g.eval(x))).collect();
    let rows = closed
        .gs_sigma
        .keys()
        .map(|&i| GainRow {
            node: i,
            asymptotic: eval(closed.asymptotic.get(&i).and_then(Option::as_ref)),
            gs_sigma: eval(closed.gs_sigma.get(&i)),
            gs_input: eval(closed.gs_input.get(&i).and_then(Option::as_ref)),
        })
        .collect();
    GainTable { s, rows }
}

fn small_gain_code(report: &SmallGainReport) -> i32 {
    match report.overall {
        OverallVerdict::Verified => exit::OK,
        OverallVerdict::Violated => exit::VIOLATION,
        OverallVerdict::Inconclusive => exit::INCONCLUSIVE,
    }
}

/// Small-gain check plus closed-loop gains; returns the exit code and the
/// gains when the conditions verified.
fn analyze(bundle: &SystemBundle, out: &mut Output, log: &mut Log) -> Result<(i32, Option<ClosedLoopGains>), RunError> {
    let grid: &GridSpec = &bundle.checks.grid;
    let report = check_cyclic_small_gain(&bundle.gains, grid).map_err(|e| RunError::Config(e.to_string()))?;
    out.json("cycles.json", &report)?;
    log.line(format!("{} cycle(s), overall {:?}", report.cycles.len(), report.overall));
    for r in &report.cycles {
        log.line(format!("  cycle {}: {:?}  composed gain {}", r.cycle, r.verdict, r.composed_gain));
    }
    if let Some(v) = report.first_violation() {
        if let crate::gain_algebra::Verdict::ViolatedAt { s, value } = v.verdict {
            log.line(format!("  witness: cycle {} at s* = {s}: composed gain {value} >= s*", v.cycle));
        }
    }
    let code = small_gain_code(&report);
    if code != exit::OK {
        let reason = format!("cyclic small-gain condition not verified ({:?})", report.overall);
        out.json("closed_loop.json", &Refusal { refused: reason })?;
        return Ok((code, None));
    }
    let closed = match closed_loop_input_gains(&bundle.gains, grid) {
        Ok(c) => c,
        Err(e) => {
            out.json("closed_loop.json", &Refusal { refused: e.to_string() })?;
            log.line(format!("closed-loop reduction refused: {e}"));
            return Ok((exit::VIOLATION, None));
        }
    };
    for (i, g) in &closed.asymptotic {
        match g {
            Some(g) => log.line(format!("  asymptotic gain of x_{i}: {g}")),
            None => log.line(format!("  asymptotic gain of x_{i}: none (bound is 0)")),
        }
    }
    let output = ClosedLoopOutput {
        gains: &closed,
        gas_sigma: closed.gas_sigma(&bundle.gains),
        table: gain_table(&closed),
        notes: vec![
            "gs_sigma comes from eliminating with the initial constant as an extra identity-gain channel",
        ],
    };
    out.json("closed_loop.json", &output)?;
    Ok((exit::OK, Some(closed)))
}

fn write_trajectory(out: &mut Output, traj: &Trajectory, prefix: &str) -> Result<(), RunError> {
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    out.write(&format!("{prefix}.csv"), &csv)?;
    out.json(&format!("{prefix}.json"), &traj.metadata())?;
    Ok(())
}

fn report_trajectory(traj: &Trajectory, log: &mut Log) {
    match traj.blow_up() {
        Some(b) => log.line(format!("blow-up: |x| = {:e} at t = {}", b.norm, b.time)),
        None => {
            let last = traj.state(traj.len() - 1);
            log.line(format!("simulated to t = {}; final state {:?}", traj.end_time(), last));
        }
    }
}

fn simulate_only(bundle: &SystemBundle, out: &mut Output, log: &mut Log) -> Result<i32, RunError> {
    let traj = simulate_with(&bundle.system, &bundle.history, &bundle.input, &bundle.sim)?;
    write_trajectory(out, &traj, "trajectory")?;
    report_trajectory(&traj, log);
    Ok(if traj.blow_up().is_some() { exit::BLOW_UP } else { exit::OK })
}

fn random_history(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> HistoryFunction {
    HistoryFunction::constant(
        dims.iter().map(|&d| (0..d).map(|_| scale * rng.gen_range(-1.0..=1.0)).collect()).collect(),
    )
}

#[derive(Serialize)]
struct LabeledReport<'a> {
    run: &'a str,
    report: &'a BoundReport,
}

fn verify(
    bundle: &SystemBundle,
    force: bool,
    out: &mut Output,
    log: &mut Log,
    notes: &mut Vec<String>,
) -> Result<i32, RunError> {
    let (code, closed) = analyze(bundle, out, log)?;
    let Some(closed) = closed else {
        if force {
            notes.push("small-gain conditions failed; simulated without verification claims".into());
            log.line("forced simulation; no bound checks are made");
            let traj = simulate_with(&bundle.system, &bundle.history, &bundle.input, &bundle.sim)?;
            write_trajectory(out, &traj, "trajectory")?;
            report_trajectory(&traj, log);
        } else {
            log.line("verification refused: the small-gain hypotheses do not hold");
        }
        return Ok(code);
    };

    let sim = &bundle.sim;
    let traj = simulate_with(&bundle.system, &bundle.history, &bundle.input, sim)?;
    write_trajectory(out, &traj, "trajectory")?;
    report_trajectory(&traj, log);
    let checks = &bundle.checks;
    let u_norm = bundle.input.sup_norm(sim.horizon, sim.step);
    let mut reports: Vec<(String, BoundReport)> = Vec::new();
    let bound_err = |e: crate::bound_checker::BoundError| RunError::Config(e.to_string());

    if checks.gs {
        reports.push(("nominal".into(), check_gs(&traj, &bundle.gains, &closed, u_norm)));
    }
    if checks.ag {
        reports.push(("nominal".into(), check_ag(&traj, &closed, u_norm, checks.tail_fraction, checks.ag_tolerance).map_err(bound_err)?));
    }
    if checks.gas {
        let sigma = closed.gas_sigma(&bundle.gains);
        let k = bundle.system.k();
        let (label, gas_traj) = match &bundle.auxiliary {
            Some((rho, d)) => {
                let aux = build_auxiliary_system(&bundle.system, rho, d)?;
                ("auxiliary", simulate_with(&aux, &bundle.history, &InputSignal::zero(k), sim)?)
            }
            None if bundle.input.is_zero() => ("nominal", traj.clone()),
            None => ("unforced", simulate_with(&bundle.system, &bundle.history, &InputSignal::zero(k), sim)?),
        };
        if label != "nominal" {
            write_trajectory(out, &gas_traj, &format!("trajectory_{label}"))?;
        }
        reports.push((label.into(), check_gas(&gas_traj, &sigma, checks.eps, checks.tail_fraction).map_err(bound_err)?));
    }
    if checks.gs && checks.random_histories > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(bundle.config.seed);
        let dims = bundle.system.dims();
        for r in 0..checks.random_histories {
            let hist = random_history(&mut rng, &dims, checks.random_history_scale);
            let t = simulate_with(&bundle.system, &hist, &bundle.input, sim)?;
            reports.push((format!("random_{r:02}"), check_gs(&t, &bundle.gains, &closed, u_norm)));
        }
    }

    let labeled: Vec<LabeledReport> = reports.iter().map(|(run, report)| LabeledReport { run, report }).collect();
    out.json("reports.json", &labeled)?;
    let rows: Vec<(String, &BoundReport)> = reports.iter().map(|(l, r)| (l.clone(), r)).collect();
    log.line(summary_table(&rows).trim_end());
    for (label, r) in &reports {
        if let Some(w) = r.verdict.witness() {
            log.line(format!(
                "  {label} {}: |x| = {} > bound {} at t = {} ({:?}, subsystem {:?})",
                r.kind.label(),
                w.norm,
                w.bound,
                w.t,
                w.kind,
                w.subsystem
            ));
        }
    }

    if traj.blow_up().is_some() {
        return Ok(exit::BLOW_UP);
    }
    Ok(if reports.iter().all(|(_, r)| r.holds()) { exit::OK } else { exit::BOUND_FAILED })
}
