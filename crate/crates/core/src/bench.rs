//! Closed-loop experiments on a simulated plant, their summary metrics, and
//! seed/epsilon sweeps.

use std::io::Write;

use rayon::prelude::*;

use crate::controller::{self, BranchChoice, ControllerConfig, DataWindow};
use crate::error::{Error, Result};
use crate::hankel::{self, BoxSet, GeometryStatus, Signal};
use crate::linalg::Vector;
use crate::plant::{self, FourTankCase, PlantModel};
use crate::qp::QpSolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Tracking MPC on the frozen open-loop data.
    P0Baseline,
    /// Sliding-window MPC with the excitation constraint.
    P1Algorithm1,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::P0Baseline => "p0",
            Mode::P1Algorithm1 => "p1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p0" => Ok(Mode::P0Baseline),
            "p1" => Ok(Mode::P1Algorithm1),
            other => Err(Error::invalid(format!("mode must be p0 or p1, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Step index, starting at 1.
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// False during the open-loop excitation phase.
    pub controlled: bool,
    pub geometry: Option<GeometryStatus>,
    pub intersects: Option<bool>,
    pub branch: Option<BranchChoice>,
    pub cost: Option<f64>,
    pub iterations: Option<usize>,
    /// Largest KKT residual of the accepted QP solve.
    pub kkt_residual: Option<f64>,
    pub epsilon_used: Option<f64>,
    pub excitation_unguarded: bool,
    /// Rank of the order-`pe_order` Hankel matrix of the `T` most recent
    /// inputs, from step `T` on.
    pub pe_rank: Option<usize>,
    pub condition: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopLog {
    pub mode: Mode,
    pub seed: u64,
    pub epsilon: f64,
    pub pe_order: usize,
    pub required_rank: usize,
    pub records: Vec<StepRecord>,
    /// Set when the run stopped early; `records` then holds the steps done.
    pub failure: Option<RunFailure>,
}

impl ClosedLoopLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn inputs(&self) -> Signal {
        let dim = self.records.first().map_or(0, |r| r.u.len());
        Signal::new(dim, self.records.iter().flat_map(|r| r.u.iter().copied()).collect())
            .unwrap_or_else(|_| Signal::empty(dim))
    }
}

/// Simulate `n_s` steps: the first `T` apply the seeded excitation drawn from
/// `excitation`, the rest apply the controller selected by `mode`.
pub fn run_closed_loop(
    model: &PlantModel,
    cfg: &ControllerConfig,
    mode: Mode,
    seed: u64,
    n_s: usize,
    excitation: &BoxSet,
) -> Result<ClosedLoopLog> {
    cfg.validate()?;
    if model.inputs() != cfg.inputs() || model.outputs() != cfg.outputs() {
        return Err(Error::invalid("plant dimensions do not match the controller"));
    }
    if excitation.dim() != cfg.inputs() {
        return Err(Error::invalid("excitation range dimension does not match the inputs"));
    }
    let t = cfg.data_length;
    if n_s < t {
        return Err(Error::invalid(format!("N_s = {n_s} is shorter than the data window T = {t}")));
    }
    let u_init = plant::initial_excitation(seed, t, excitation)?;
    let mut log = ClosedLoopLog {
        mode,
        seed,
        epsilon: cfg.epsilon,
        pe_order: cfg.pe_order,
        required_rank: cfg.inputs() * cfg.pe_order,
        records: Vec::with_capacity(n_s),
        failure: None,
    };
    let mut x = model.x0.clone();
    let mut us = Signal::empty(cfg.inputs());
    let mut ys = Signal::empty(cfg.outputs());
    let mut window: Option<DataWindow> = None;
    let mut offline: Option<DataWindow> = None;

    for k in 1..=n_s {
        let mut rec = StepRecord {
            k,
            x: x.as_slice().to_vec(),
            u: Vec::new(),
            y: Vec::new(),
            controlled: k > t,
            geometry: None,
            intersects: None,
            branch: None,
            cost: None,
            iterations: None,
            kkt_residual: None,
            epsilon_used: None,
            excitation_unguarded: false,
            pe_rank: None,
            condition: None,
        };
        let u = if k <= t {
            Vector::from_column_slice(u_init.sample(k - 1))
        } else {
            let w = window.as_ref().expect("window is filled at k = T");
            let res = match mode {
                Mode::P1Algorithm1 => controller::controller_step(cfg, w, k).map(|(u, d)| {
                    rec.geometry = Some(d.geometry.status);
                    rec.intersects = d.intersects;
                    rec.branch = Some(d.outcome.chosen);
                    rec.cost = Some(d.outcome.cost);
                    rec.iterations = Some(d.outcome.iterations());
                    rec.kkt_residual = Some(max_residual(&d.outcome.solution));
                    rec.epsilon_used = d.outcome.half_spaces.as_ref().map(|_| d.outcome.epsilon_used);
                    rec.excitation_unguarded = d.outcome.excitation_unguarded;
                    u
                }),
                Mode::P0Baseline => {
                    let off = offline.as_ref().expect("offline data is frozen at k = T");
                    let recent = w.recent(cfg.order);
                    controller::baseline_p0_step(cfg, off, &recent, k).map(|(u, sol, cost)| {
                        rec.branch = Some(BranchChoice::Unconstrained);
                        rec.cost = Some(cost);
                        rec.iterations = Some(sol.iterations);
                        rec.kkt_residual = Some(max_residual(&sol));
                        u
                    })
                }
            };
            match res {
                Ok(u) => u,
                Err(e) => {
                    log.failure = Some(RunFailure {
                        step: k,
                        reason: e.to_string(),
                    });
                    return Ok(log);
                }
            }
        };
        let (x_next, y) = match plant::plant_step(model, &x, &u, k) {
            Ok(v) => v,
            Err(e) => {
                log.failure = Some(RunFailure {
                    step: k,
                    reason: e.to_string(),
                });
                return Ok(log);
            }
        };
        rec.u = u.as_slice().to_vec();
        rec.y = y.as_slice().to_vec();
        match window.as_mut() {
            Some(w) => w.slide(&rec.u, &rec.y)?,
            None => {
                us.push(&rec.u)?;
                ys.push(&rec.y)?;
                if k == t {
                    let w = DataWindow::new(us.clone(), ys.clone())?;
                    offline = Some(w.clone());
                    window = Some(w);
                }
            }
        }
        if let Some(w) = window.as_ref() {
            let (_, report) = hankel::is_pe(&w.u, cfg.pe_order, cfg.rel_tol)?;
            rec.pe_rank = Some(report.numerical_rank);
            rec.condition = Some(hankel::pe_condition_metric(&w.u, cfg.pe_order)?);
        }
        log.records.push(rec);
        x = x_next;
    }
    Ok(log)
}

fn max_residual(sol: &QpSolution) -> f64 {
    sol.primal_residual.max(sol.dual_residual).max(sol.comp_residual)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    /// Mean of `||y_k - y^S||_inf` over the final window.
    pub tracking_mean: f64,
    pub tracking_max: f64,
    /// Fraction of steps with a recorded rank that reached full rank.
    pub pe_fraction: f64,
    pub cond_mean: f64,
    pub cond_min: f64,
    pub cond_max: f64,
}

impl Summary {
    pub fn pe_maintained(&self) -> bool {
        self.pe_fraction == 1.0
    }
}

/// Tracking and conditioning over the last `final_window` steps, and the
/// full-rank fraction over every step with a recorded rank.
pub fn metrics(log: &ClosedLoopLog, y_setpoint: &[f64], final_window: usize) -> Result<Summary> {
    if final_window == 0 || final_window > log.len() {
        return Err(Error::invalid(format!(
            "final window {final_window} must lie in [1, {}]",
            log.len()
        )));
    }
    let tail = &log.records[log.len() - final_window..];
    let errs: Vec<f64> = tail
        .iter()
        .map(|r| {
            r.y.iter()
                .zip(y_setpoint)
                .map(|(y, s)| (y - s).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let ranked: Vec<usize> = log.records.iter().filter_map(|r| r.pe_rank).collect();
    let full = ranked.iter().filter(|&&r| r == log.required_rank).count();
    let conds: Vec<f64> = tail.iter().filter_map(|r| r.condition).collect();
    let (cond_mean, cond_min, cond_max) = if conds.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            mean(&conds),
            conds.iter().copied().fold(f64::INFINITY, f64::min),
            conds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    Ok(Summary {
        tracking_mean: mean(&errs),
        tracking_max: errs.iter().copied().fold(0.0, f64::max),
        pe_fraction: if ranked.is_empty() { f64::NAN } else { full as f64 / ranked.len() as f64 },
        cond_mean,
        cond_min,
        cond_max,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub case: FourTankCase,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub epsilons: Vec<f64>,
    pub n_s: usize,
    pub excitation: BoxSet,
    /// Steps at the end of the run used for the tracking error.
    pub tracking_window: usize,
    /// Return every closed-loop log alongside the cells.
    pub keep_logs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub seed: u64,
    pub epsilon: f64,
    pub tracking_mean: f64,
    pub tracking_max: f64,
    pub pe_fraction: f64,
    /// Condition statistics over the final `T` steps.
    pub cond_mean: f64,
    pub cond_min: f64,
    pub cond_max: f64,
    pub failure: Option<String>,
}

impl SweepCell {
    pub fn pe_maintained(&self) -> bool {
        self.failure.is_none() && self.pe_fraction == 1.0
    }
}

/// Per-epsilon aggregate over the successful seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionTrend {
    pub epsilon: f64,
    /// Mean of the per-seed means.
    pub cond_mean: f64,
    pub cond_min: f64,
    pub cond_max: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    /// Seed-major, in the order of the input grids.
    pub cells: Vec<SweepCell>,
    pub logs: Vec<ClosedLoopLog>,
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.failure.is_some()).count()
    }

    pub fn condition_trend(&self) -> Vec<ConditionTrend> {
        let mut eps: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !eps.contains(&c.epsilon) {
                eps.push(c.epsilon);
            }
        }
        eps.iter()
            .map(|&e| {
                let ok: Vec<&SweepCell> = self
                    .cells
                    .iter()
                    .filter(|c| c.epsilon == e && c.failure.is_none())
                    .collect();
                let means: Vec<f64> = ok.iter().map(|c| c.cond_mean).collect();
                ConditionTrend {
                    epsilon: e,
                    cond_mean: if ok.is_empty() { f64::NAN } else { mean(&means) },
                    cond_min: ok.iter().map(|c| c.cond_min).fold(f64::INFINITY, f64::min),
                    cond_max: ok.iter().map(|c| c.cond_max).fold(f64::NEG_INFINITY, f64::max),
                    runs: ok.len(),
                }
            })
            .collect()
    }
}

/// Run every `(seed, epsilon)` pair in parallel. A failing run becomes a
/// failed cell; the sweep itself only errors on invalid input.
pub fn sweep(cfg_base: &ControllerConfig, spec: &SweepSpec) -> Result<SweepReport> {
    if spec.seeds.is_empty() || spec.epsilons.is_empty() {
        return Err(Error::invalid("sweep needs at least one seed and one epsilon"));
    }
    if spec.tracking_window == 0 || spec.tracking_window > spec.n_s {
        return Err(Error::invalid("tracking window must lie in [1, N_s]"));
    }
    for &e in &spec.epsilons {
        let mut c = cfg_base.clone();
        c.epsilon = e;
        c.validate()?;
    }
    let model = plant::four_tank_model(spec.case);
    let grid: Vec<(u64, f64)> = spec
        .seeds
        .iter()
        .flat_map(|&s| spec.epsilons.iter().map(move |&e| (s, e)))
        .collect();
    let results: Vec<Result<(SweepCell, ClosedLoopLog)>> = grid
        .par_iter()
        .map(|&(seed, epsilon)| {
            let mut cfg = cfg_base.clone();
            cfg.epsilon = epsilon;
            let log = run_closed_loop(&model, &cfg, spec.mode, seed, spec.n_s, &spec.excitation)?;
            let tail = metrics(&log, cfg.y_setpoint.as_slice(), spec.tracking_window.min(log.len().max(1)));
            let steady = metrics(&log, cfg.y_setpoint.as_slice(), cfg.data_length.min(log.len().max(1)));
            let failure = log.failure.as_ref().map(|f| format!("step {}: {}", f.step, f.reason));
            let cell = match (tail, steady) {
                (Ok(a), Ok(b)) => SweepCell {
                    seed,
                    epsilon,
                    tracking_mean: a.tracking_mean,
                    tracking_max: a.tracking_max,
                    pe_fraction: b.pe_fraction,
                    cond_mean: b.cond_mean,
                    cond_min: b.cond_min,
                    cond_max: b.cond_max,
                    failure,
                },
                (Err(e), _) | (_, Err(e)) => SweepCell {
                    seed,
                    epsilon,
                    tracking_mean: f64::NAN,
                    tracking_max: f64::NAN,
                    pe_fraction: f64::NAN,
                    cond_mean: f64::NAN,
                    cond_min: f64::NAN,
                    cond_max: f64::NAN,
                    failure: Some(failure.unwrap_or_else(|| e.to_string())),
                },
            };
            Ok((cell, log))
        })
        .collect();
    let mut report = SweepReport {
        cells: Vec::with_capacity(grid.len()),
        logs: Vec::new(),
    };
    for r in results {
        let (cell, log) = r?;
        report.cells.push(cell);
        if spec.keep_logs {
            report.logs.push(log);
        }
    }
    Ok(report)
}

/// Fixed-width float text that round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|b| (b as u8).to_string()).unwrap_or_default()
}

/// Column names of [`write_log_csv`] for the given dimensions.
pub fn log_columns(n: usize, m: usize, p: usize) -> Vec<String> {
    let mut cols = vec!["k".to_string(), "controlled".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=m).map(|i| format!("u{i}")));
    cols.extend((1..=p).map(|i| format!("y{i}")));
    for c in [
        "geometry",
        "intersects",
        "branch",
        "v",
        "cost",
        "iterations",
        "kkt_residual",
        "epsilon_used",
        "unguarded",
        "pe_rank",
        "condition",
    ] {
        cols.push(c.to_string());
    }
    cols
}

/// One row per step. Empty cells mean "not applicable at this step".
pub fn write_log_csv<W: Write>(log: &ClosedLoopLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let first = log.records.first();
    let (n, m, p) = first.map_or((0, 0, 0), |r| (r.x.len(), r.u.len(), r.y.len()));
    w.write_record(log_columns(n, m, p))?;
    for r in &log.records {
        let mut row = vec![r.k.to_string(), (r.controlled as u8).to_string()];
        row.extend(r.x.iter().chain(&r.u).chain(&r.y).map(|v| fmt_f64(*v)));
        row.push(r.geometry.map(|g| g.as_str().to_string()).unwrap_or_default());
        row.push(opt_bool(r.intersects));
        row.push(r.branch.map(|b| b.as_str().to_string()).unwrap_or_default());
        row.push(r.branch.and_then(|b| b.binary()).map(|v| v.to_string()).unwrap_or_default());
        row.push(opt_f64(r.cost));
        row.push(r.iterations.map(|i| i.to_string()).unwrap_or_default());
        row.push(opt_f64(r.kkt_residual));
        row.push(opt_f64(r.epsilon_used));
        row.push((r.excitation_unguarded as u8).to_string());
        row.push(r.pe_rank.map(|i| i.to_string()).unwrap_or_default());
        row.push(opt_f64(r.condition));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "seed",
    "epsilon",
    "tracking_mean",
    "tracking_max",
    "pe_fraction",
    "pe_maintained",
    "cond_mean",
    "cond_min",
    "cond_max",
    "failure",
];

pub fn write_sweep_csv<W: Write>(report: &SweepReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for c in &report.cells {
        w.write_record([
            c.seed.to_string(),
            fmt_f64(c.epsilon),
            fmt_f64(c.tracking_mean),
            fmt_f64(c.tracking_max),
            fmt_f64(c.pe_fraction),
            (c.pe_maintained() as u8).to_string(),
            fmt_f64(c.cond_mean),
            fmt_f64(c.cond_min),
            fmt_f64(c.cond_max),
            c.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const TREND_COLUMNS: [&str; 5] = ["epsilon", "cond_mean", "cond_min", "cond_max", "runs"];

pub fn write_trend_csv<W: Write>(trend: &[ConditionTrend], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TREND_COLUMNS)?;
    for t in trend {
        w.write_record([
            fmt_f64(t.epsilon),
            fmt_f64(t.cond_mean),
            fmt_f64(t.cond_min),
            fmt_f64(t.cond_max),
            t.runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
