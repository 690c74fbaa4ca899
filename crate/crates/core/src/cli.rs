//! Command-line front end: `demo`, `simulate`, `sweep` and `check-pe`.
//!
//! Exit codes: 0 success, 1 experiment failure (lost excitation, a failed
//! run, a signal that is not exciting), 2 usage or configuration error.
//!
//! Output files (all CSV floats as `{:.16e}`):
//!
//! * `simulate`: `log.csv` (one row per step, see [`bench::log_columns`]),
//!   `plot.csv` (`k, y1, y1_setpoint, u1, u1_setpoint, ...`), `summary.csv`.
//! * `sweep`: `sweep.csv` ([`bench::SWEEP_COLUMNS`]) and
//!   `condition_vs_epsilon.csv` ([`bench::TREND_COLUMNS`]).
//! * `demo`: `demo_case{1,2}_eps{1e-4,0.05518,0.3}.csv` with baseline and
//!   guarded trajectories side by side, `demo_summary.csv` and
//!   `demo_summary.txt`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::bench::{self, fmt_f64, ClosedLoopLog, Mode, Summary};
use crate::config::{self, ExperimentConfig};
use crate::error::{Error, Result};
use crate::hankel::{self, GeometryStatus, Signal};
use crate::linalg::DEFAULT_REL_TOL;
use crate::plant::{self, FourTankCase};

/// Worker-count override for the parallel sweeps and branch solves.
pub const WORKERS_ENV: &str = "PE_MPC_WORKERS";

/// Epsilons shown by `demo`.
pub const DEMO_EPSILONS: [f64; 3] = [1e-4, 0.05518, 0.3];

#[derive(Debug, Parser)]
#[command(name = "pe-mpc", version, about = "Persistently exciting data-driven predictive control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Both plant cases at one seed and three epsilons, baseline vs guarded.
    Demo(RunArgs),
    /// One closed-loop run.
    Simulate(RunArgs),
    /// Seed x epsilon grid of closed-loop runs.
    Sweep(RunArgs),
    /// Test a signal for persistency of excitation.
    CheckPe(CheckPeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML config; omitted keys take the four-tank defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long, value_parser = ["1", "2"])]
    pub case: Option<String>,
    #[arg(long, value_parser = ["p0", "p1"])]
    pub mode: Option<String>,
    /// 100 seeds x 100 epsilons instead of the desk-scale grid.
    #[arg(long)]
    pub full_grid: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CheckPeArgs {
    /// CSV with one sample per row; a non-numeric first row is a header.
    pub signal: PathBuf,
    /// Order `L` to test.
    #[arg(long = "order", short = 'L')]
    pub order: usize,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    pub rel_tol: f64,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = init_workers() {
        eprintln!("error: {e}");
        return 2;
    }
    run(cli.command)
}

/// Size the global worker pool from [`WORKERS_ENV`] if it is set.
pub fn init_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::config(WORKERS_ENV, format!("must be a positive integer, got {raw:?}")))?;
    // a pool may already exist when called twice in one process; keep it
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(command: Command) -> i32 {
    let result = match command {
        Command::Demo(a) => cmd_demo(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::CheckPe(a) => cmd_check_pe(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 1 for failures of the experiment itself, 2 for everything the user can fix
/// in the invocation.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::LostExcitation { .. } | Error::NoFeasibleInput { .. } | Error::SimulationDiverged { .. } => 1,
        _ => 2,
    }
}

/// Load the config (or defaults) and apply command-line overrides, then
/// validate everything before any output is written.
pub fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => config::parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epsilon {
        cfg.epsilon = e;
    }
    if let Some(c) = &args.case {
        cfg.case = c.parse().map_err(|_| Error::config("case", "must be 1 or 2"))?;
    }
    if let Some(m) = &args.mode {
        cfg.mode = m.clone();
    }
    if args.full_grid {
        cfg.full_grid = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::config("out", format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".write-probe");
    File::create(&probe)
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| Error::config("out", format!("{} is not writable: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::config("out", format!("cannot write {}: {e}", path.display())))
}

fn eps_label(e: f64) -> String {
    if e == 1e-4 {
        "1e-4".to_string()
    } else {
        format!("{e}")
    }
}

fn log_failure(log: &ClosedLoopLog) -> Option<String> {
    log.failure.as_ref().map(|f| format!("step {}: {}", f.step, f.reason))
}

pub fn cmd_simulate(args: &RunArgs) -> Result<i32> {
    let cfg = resolve_config(args)?;
    prepare_out(&cfg.out)?;
    let ctrl = cfg.controller(cfg.epsilon)?;
    let model = plant::four_tank_model(cfg.plant_case()?);
    let log = bench::run_closed_loop(&model, &ctrl, cfg.run_mode()?, cfg.seed, cfg.steps, &cfg.excitation_box()?)?;
    bench::write_log_csv(&log, create(&cfg.out.join("log.csv"))?)?;
    write_plot_csv(&log, &cfg, &cfg.out.join("plot.csv"))?;
    let window = cfg.tracking_window.min(log.len());
    let summary = bench::metrics(&log, &cfg.y_setpoint, window)?;
    let cond = bench::metrics(&log, &cfg.y_setpoint, cfg.data_length.min(log.len()))?;
    let mut w = csv::Writer::from_writer(create(&cfg.out.join("summary.csv"))?);
    w.write_record(["tracking_mean", "tracking_max", "pe_fraction", "cond_mean", "cond_min", "cond_max", "failure"])?;
    w.write_record([
        fmt_f64(summary.tracking_mean),
        fmt_f64(summary.tracking_max),
        fmt_f64(cond.pe_fraction),
        fmt_f64(cond.cond_mean),
        fmt_f64(cond.cond_min),
        fmt_f64(cond.cond_max),
        log_failure(&log).unwrap_or_default(),
    ])?;
    w.flush()?;
    println!(
        "case {} {} eps {} seed {}: tracking {:.4e} over {window} steps, pe fraction {:.4}, cond mean {:.4e}",
        cfg.case, cfg.mode, cfg.epsilon, cfg.seed, summary.tracking_mean, cond.pe_fraction, cond.cond_mean
    );
    match log_failure(&log) {
        Some(f) => {
            eprintln!("run failed at {f}");
            Ok(1)
        }
        None => Ok(0),
    }
}

fn write_plot_csv(log: &ClosedLoopLog, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["k".to_string()];
    for i in 1..=cfg.outputs() {
        header.push(format!("y{i}"));
        header.push(format!("y{i}_setpoint"));
    }
    for i in 1..=cfg.inputs() {
        header.push(format!("u{i}"));
        header.push(format!("u{i}_setpoint"));
    }
    w.write_record(&header)?;
    for r in &log.records {
        let mut row = vec![r.k.to_string()];
        for (y, s) in r.y.iter().zip(&cfg.y_setpoint) {
            row.push(fmt_f64(*y));
            row.push(fmt_f64(*s));
        }
        for (u, s) in r.u.iter().zip(&cfg.u_setpoint) {
            row.push(fmt_f64(*u));
            row.push(fmt_f64(*s));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sweep(args: &RunArgs) -> Result<i32> {
    let cfg = resolve_config(args)?;
    prepare_out(&cfg.out)?;
    let spec = cfg.sweep_spec()?;
    let report = bench::sweep(&cfg.controller(cfg.epsilon)?, &spec)?;
    bench::write_sweep_csv(&report, create(&cfg.out.join("sweep.csv"))?)?;
    let trend = report.condition_trend();
    bench::write_trend_csv(&trend, create(&cfg.out.join("condition_vs_epsilon.csv"))?)?;
    for t in &trend {
        println!(
            "eps {:.5}: cond mean {:.4e} min {:.4e} max {:.4e} over {} runs",
            t.epsilon, t.cond_mean, t.cond_min, t.cond_max, t.runs
        );
    }
    let failed = report.failed();
    if failed > 0 {
        for c in report.cells.iter().filter(|c| c.failure.is_some()) {
            eprintln!("seed {} eps {}: {}", c.seed, c.epsilon, c.failure.as_deref().unwrap_or(""));
        }
        eprintln!("{failed} of {} runs failed", report.cells.len());
        return Ok(1);
    }
    Ok(0)
}

/// One row of the demo comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoRow {
    pub case: FourTankCase,
    pub epsilon: f64,
    pub baseline: Summary,
    pub guarded: Summary,
    pub failure: Option<String>,
}

pub fn cmd_demo(args: &RunArgs) -> Result<i32> {
    let cfg = resolve_config(args)?;
    prepare_out(&cfg.out)?;
    let rows = run_demo(&cfg, &cfg.out)?;
    let failed = rows.iter().filter(|r| r.failure.is_some()).count();
    print!("{}", demo_summary_text(&rows));
    Ok(if failed > 0 { 1 } else { 0 })
}

/// Run the eight demo simulations and write their files into `out`.
pub fn run_demo(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<DemoRow>> {
    let cases = [FourTankCase::Constant, FourTankCase::Drift];
    let excitation = cfg.excitation_box()?;
    let mut jobs: Vec<(FourTankCase, Mode, f64)> = Vec::new();
    for &case in &cases {
        jobs.push((case, Mode::P0Baseline, 0.0));
        for &e in &DEMO_EPSILONS {
            jobs.push((case, Mode::P1Algorithm1, e));
        }
    }
    let logs: Vec<Result<ClosedLoopLog>> = jobs
        .par_iter()
        .map(|&(case, mode, e)| {
            let ctrl = cfg.controller(e)?;
            bench::run_closed_loop(&plant::four_tank_model(case), &ctrl, mode, cfg.seed, cfg.steps, &excitation)
        })
        .collect();
    let logs: Vec<ClosedLoopLog> = logs.into_iter().collect::<Result<_>>()?;
    let window = cfg.tracking_window.min(cfg.steps);
    let summarize = |log: &ClosedLoopLog| -> Result<Summary> {
        let w = window.min(log.len());
        let t = cfg.data_length.min(log.len());
        let tail = bench::metrics(log, &cfg.y_setpoint, w)?;
        let steady = bench::metrics(log, &cfg.y_setpoint, t)?;
        Ok(Summary {
            pe_fraction: steady.pe_fraction,
            cond_mean: steady.cond_mean,
            cond_min: steady.cond_min,
            cond_max: steady.cond_max,
            ..tail
        })
    };
    let mut rows = Vec::new();
    for (ci, &case) in cases.iter().enumerate() {
        let base = &logs[ci * 4];
        for (ei, &e) in DEMO_EPSILONS.iter().enumerate() {
            let guarded = &logs[ci * 4 + 1 + ei];
            let path = out.join(format!("demo_case{}_eps{}.csv", case.index(), eps_label(e)));
            write_demo_csv(base, guarded, cfg, &path)?;
            let failure = [log_failure(base), log_failure(guarded)]
                .into_iter()
                .flatten()
                .reduce(|a, b| format!("{a}; {b}"));
            rows.push(DemoRow {
                case,
                epsilon: e,
                baseline: summarize(base)?,
                guarded: summarize(guarded)?,
                failure,
            });
        }
    }
    let mut w = csv::Writer::from_writer(create(&out.join("demo_summary.csv"))?);
    w.write_record([
        "case",
        "epsilon",
        "p0_tracking_mean",
        "p1_tracking_mean",
        "p0_pe_fraction",
        "p1_pe_fraction",
        "p0_cond_mean",
        "p1_cond_mean",
        "failure",
    ])?;
    for r in &rows {
        w.write_record([
            r.case.index().to_string(),
            fmt_f64(r.epsilon),
            fmt_f64(r.baseline.tracking_mean),
            fmt_f64(r.guarded.tracking_mean),
            fmt_f64(r.baseline.pe_fraction),
            fmt_f64(r.guarded.pe_fraction),
            fmt_f64(r.baseline.cond_mean),
            fmt_f64(r.guarded.cond_mean),
            r.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    fs::write(out.join("demo_summary.txt"), demo_summary_text(&rows))?;
    Ok(rows)
}

fn write_demo_csv(base: &ClosedLoopLog, guarded: &ClosedLoopLog, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let (m, p) = (cfg.inputs(), cfg.outputs());
    let mut header = vec!["k".to_string()];
    header.extend((1..=p).map(|i| format!("y{i}_setpoint")));
    header.extend((1..=m).map(|i| format!("u{i}_setpoint")));
    for tag in ["p0", "p1"] {
        header.extend((1..=p).map(|i| format!("{tag}_y{i}")));
        header.extend((1..=m).map(|i| format!("{tag}_u{i}")));
    }
    header.extend(["p1_branch", "p1_pe_rank", "p1_condition"].map(String::from));
    w.write_record(&header)?;
    let steps = base.len().max(guarded.len());
    for i in 0..steps {
        let mut row = vec![(i + 1).to_string()];
        row.extend(cfg.y_setpoint.iter().chain(&cfg.u_setpoint).map(|v| fmt_f64(*v)));
        for log in [base, guarded] {
            match log.records.get(i) {
                Some(r) => row.extend(r.y.iter().chain(&r.u).map(|v| fmt_f64(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), m + p)),
            }
        }
        let r = guarded.records.get(i);
        row.push(r.and_then(|r| r.branch).map(|b| b.as_str().to_string()).unwrap_or_default());
        row.push(r.and_then(|r| r.pe_rank).map(|v| v.to_string()).unwrap_or_default());
        row.push(r.and_then(|r| r.condition).map(fmt_f64).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn demo_summary_text(rows: &[DemoRow]) -> String {
    let mut s = String::new();
    s.push_str("case  epsilon   p0 track   p1 track   p0 pe    p1 pe    p1 cond     status\n");
    for r in rows {
        s.push_str(&format!(
            "{:<5} {:<9} {:<10.4e} {:<10.4e} {:<8.4} {:<8.4} {:<11.4e} {}\n",
            r.case.index(),
            eps_label(r.epsilon),
            r.baseline.tracking_mean,
            r.guarded.tracking_mean,
            r.baseline.pe_fraction,
            r.guarded.pe_fraction,
            r.guarded.cond_mean,
            r.failure.as_deref().unwrap_or("ok"),
        ));
    }
    for r in rows.iter().filter(|r| r.case == FourTankCase::Drift) {
        let verdict = if r.guarded.tracking_mean < r.baseline.tracking_mean {
            "below"
        } else {
            "NOT below"
        };
        s.push_str(&format!(
            "case 2, eps {}: guarded tracking error is {verdict} the fixed-data baseline\n",
            eps_label(r.epsilon)
        ));
    }
    s
}

/// Read a signal CSV: one sample per row, equal row lengths.
pub fn read_signal_csv(path: &Path) -> Result<Signal> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut samples: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => samples.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::invalid(format!("row {}: non-numeric entry", i + 1)));
            }
        }
    }
    let dim = samples.first().map_or(0, Vec::len);
    if samples.is_empty() || dim == 0 {
        return Err(Error::invalid("signal file holds no samples"));
    }
    Signal::from_samples(dim, &samples)
}

pub fn cmd_check_pe(args: &CheckPeArgs) -> Result<i32> {
    let u = read_signal_csv(&args.signal)?;
    let (m, l) = (u.dim(), args.order);
    if l == 0 {
        return Err(Error::invalid("order L must be positive"));
    }
    let need = hankel::min_pe_length(m, l);
    if u.len() < need {
        return Err(Error::invalid(format!(
            "{} samples are too few for order {l}: PE needs T >= (m+1)L-1 = {need}",
            u.len()
        )));
    }
    let (pe, report) = hankel::is_pe(&u, l, args.rel_tol)?;
    println!("{}", if pe { "PE" } else { "not PE" });
    println!("rank {} of {}", report.numerical_rank, m * l);
    println!("singular value gap {:.6e}", report.gap());
    println!("sigma_max {:.6e} sigma_min {:.6e}", report.sigma_max(), report.sigma_min());
    // geometry for the next sample: keep the last T-1 samples
    if u.len() > l {
        let trailing = u.tail(u.len() - 1);
        let blocks = hankel::hankel_blocks(&trailing, l)?;
        let geom = hankel::excitation_geometry(&blocks, args.rel_tol)?;
        println!("next-sample geometry {}", geom.status.as_str());
        if geom.status == GeometryStatus::Hyperplane {
            let (a, c) = geom.hyperplane().expect("hyperplane geometry");
            let a: Vec<String> = a.iter().map(|v| format!("{v:.12e}")).collect();
            println!("nonexciting hyperplane a = [{}], c = {c:.12e}", a.join(", "));
        }
    }
    Ok(if pe { 0 } else { 1 })
}
