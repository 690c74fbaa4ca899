//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{brute_force_qp, small_instance, Rng};
use pe_mpc::bench::{self, Mode, SweepReport, SweepSpec};
use pe_mpc::cli;
use pe_mpc::config::ExperimentConfig;
use pe_mpc::controller::{self, assemble_ocp, ControllerConfig};
use pe_mpc::hankel::{self, BoxSet, Branch, GeometryStatus, HalfSpacePair};
use pe_mpc::linalg::{self, Matrix, Vector};
use pe_mpc::plant::FourTankCase;
use pe_mpc::qp::{kkt_residuals, solve_qp, QpInstance, QpSettings, QpStatus};

const KKT_TOL: f64 = 1e-7;
const ORACLE_TOL: f64 = 1e-7;
const MI_TOL: f64 = 1e-6;
const TRACKING_TOL: f64 = 0.15;
const SWEEP_EPSILONS: [f64; 4] = [1e-4, 0.05, 0.05518, 0.3];
const SWEEP_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const N_S: usize = 750;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rank(m: &Matrix) -> usize {
    linalg::numerical_rank(m, 1e-9).unwrap().numerical_rank
}

fn hyperplane_appends() -> Verdict {
    let start = Instant::now();
    let mut rng = Rng::new(1001);
    let (mut planes, mut failures) = (0, 0);
    for _ in 0..200 {
        let m = 1 + rng.index(3);
        let l = 2 + rng.index(4);
        let t = hankel::min_pe_length(m, l);
        let past = rng.signal(m, t - 1, -1.0, 1.0);
        let blocks = hankel::hankel_blocks(&past, l).unwrap();
        let geom = hankel::excitation_geometry(&blocks, 1e-9).unwrap();
        let Some((a, c)) = geom.hyperplane() else { continue };
        planes += 1;
        let u0 = rng.vector(m, -1.0, 1.0);
        let on = &u0 - a * ((a.dot(&u0) + c) / a.norm_squared());
        let level = rng.uniform(1e-3, 1.0) * if rng.unit() < 0.5 { -1.0 } else { 1.0 };
        let off = &on + a * (level / a.norm_squared());
        if rank(&blocks.complete(on.as_slice()).unwrap()) != m * l - 1 {
            failures += 1;
        }
        if rank(&blocks.complete(off.as_slice()).unwrap()) != m * l {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        failures == 0 && secs < 30.0 && planes > 0,
        format!("{planes} hyperplane windows of 200, {failures} failures, {secs:.2} s (limit 30 s)"),
    )
}

fn rank_bounds_windows() -> Verdict {
    let mut rng = Rng::new(1002);
    let (mut tested, mut failures) = (0, 0);
    while tested < 500 {
        let m = 1 + rng.index(3);
        let l = 2 + rng.index(4);
        let t = hankel::min_pe_length(m, l) + rng.index(6);
        let u = rng.signal(m, t, -1.0, 1.0);
        if !hankel::is_pe(&u, l, 1e-9).unwrap().0 {
            continue;
        }
        let blocks = hankel::hankel_blocks(&u.tail(t - 1), l).unwrap();
        let top = rank(&blocks.stacked_rows());
        let left = rank(&blocks.stacked_columns());
        if top != m * l - m || left + 1 < m * l || left > m * l {
            failures += 1;
        }
        tested += 1;
    }
    verdict(failures == 0, format!("{tested} PE windows, {failures} failures"))
}

fn mixed_integer() -> Verdict {
    let mut rng = Rng::new(1003);
    let (mut tested, mut worst, mut failures) = (0, 0.0f64, 0);
    while tested < 100 {
        let inst = small_instance(&mut rng);
        let cfg = &inst.cfg;
        let trailing = inst.window.u.tail(cfg.data_length - 1);
        let blocks = hankel::hankel_blocks(&trailing, cfg.pe_order).unwrap();
        let geom = hankel::excitation_geometry(&blocks, cfg.rel_tol).unwrap();
        if geom.status != GeometryStatus::Hyperplane {
            continue;
        }
        let (a, c) = geom.hyperplane().unwrap();
        let base = assemble_ocp(cfg, &inst.window, &inst.window.recent(cfg.order), None).unwrap();
        let pair = HalfSpacePair::new(a.clone(), c, cfg.epsilon).unwrap();
        let mut best: Option<f64> = None;
        for v in [Branch::Up, Branch::Down] {
            let ocp = base.with_branch(&pair, v).unwrap();
            if let Some((z, _)) = brute_force_qp(&ocp.qp) {
                let cost = ocp.tracking_cost(&z);
                best = Some(best.map_or(cost, |b| b.min(cost)));
            }
        }
        tested += 1;
        let out = controller::solve_branches(cfg, &base, &geom, true, 0);
        match (best, out) {
            (Some(b), Ok(o)) if o.epsilon_used == cfg.epsilon => {
                let rel = (o.cost - b).abs() / b.abs().max(1.0);
                worst = worst.max(rel);
                if rel > MI_TOL {
                    failures += 1;
                }
            }
            (None, Ok(o)) if o.epsilon_used < cfg.epsilon || o.excitation_unguarded => {}
            _ => failures += 1,
        }
    }
    verdict(
        failures == 0,
        format!("{tested} instances, {failures} mismatches, worst relative gap {worst:.2e} (limit {MI_TOL:.0e})"),
    )
}

fn qp_certification(report: &SweepReport) -> Verdict {
    let mut rng = Rng::new(1004);
    let settings = QpSettings::default();
    let (mut optimal, mut kkt_fail, mut eq_fail, mut box_fail) = (0, 0, 0, 0);
    let mut worst_kkt = 0.0f64;
    let check = |qp: &QpInstance, sol: &pe_mpc::qp::QpSolution, worst: &mut f64, fail: &mut usize| {
        if sol.status == QpStatus::Optimal {
            let r = kkt_residuals(qp, sol);
            let m = r.primal.max(r.dual).max(r.comp);
            *worst = worst.max(m);
            if m > KKT_TOL {
                *fail += 1;
            }
            1
        } else {
            0
        }
    };
    for _ in 0..300 {
        let n = 1 + rng.index(30);
        let me = rng.index(n.min(10) + 1);
        let p = rng.spd(n);
        let q = rng.vector(n, -1.0, 1.0);
        let a = rng.matrix(me, n, -1.0, 1.0);
        let b = rng.vector(me, -1.0, 1.0);
        let qp = QpInstance::new(p, q, a, b, Matrix::zeros(0, n), Vector::zeros(0)).unwrap();
        let mut kkt = Matrix::zeros(n + me, n + me);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        kkt.view_mut((n, 0), (me, n)).copy_from(&qp.a);
        kkt.view_mut((0, n), (n, me)).copy_from(&qp.a.transpose());
        let mut rhs = Vector::zeros(n + me);
        rhs.rows_mut(0, n).copy_from(&(-&qp.q));
        rhs.rows_mut(n, me).copy_from(&qp.b);
        let direct = kkt.lu().solve(&rhs).unwrap().rows(0, n).into_owned();
        let sol = solve_qp(&qp, &settings).unwrap();
        optimal += check(&qp, &sol, &mut worst_kkt, &mut kkt_fail);
        if sol.status != QpStatus::Optimal || (&sol.z - &direct).amax() > ORACLE_TOL * (1.0 + direct.amax()) {
            eq_fail += 1;
        }
    }
    for _ in 0..300 {
        let n = 1 + rng.index(15);
        let d = rng.vector(n, 0.2, 4.0);
        let q = rng.vector(n, -3.0, 3.0);
        let lo = rng.vector(n, -2.0, 0.0);
        let hi = &lo + rng.vector(n, 0.1, 2.0);
        let mut g = Matrix::zeros(2 * n, n);
        let mut h = Vector::zeros(2 * n);
        for i in 0..n {
            g[(i, i)] = 1.0;
            h[i] = hi[i];
            g[(n + i, i)] = -1.0;
            h[n + i] = -lo[i];
        }
        let qp = QpInstance::new(Matrix::from_diagonal(&d), q.clone(), Matrix::zeros(0, n), Vector::zeros(0), g, h)
            .unwrap();
        let sol = solve_qp(&qp, &settings).unwrap();
        optimal += check(&qp, &sol, &mut worst_kkt, &mut kkt_fail);
        let bad = (0..n).any(|i| (sol.z[i] - (-q[i] / d[i]).clamp(lo[i], hi[i])).abs() > ORACLE_TOL);
        if sol.status != QpStatus::Optimal || bad {
            box_fail += 1;
        }
    }
    let mut loop_solves = 0;
    for log in &report.logs {
        for r in &log.records {
            if let Some(k) = r.kkt_residual {
                loop_solves += 1;
                worst_kkt = worst_kkt.max(k);
                if k > KKT_TOL {
                    kkt_fail += 1;
                }
            }
        }
    }
    verdict(
        kkt_fail == 0 && eq_fail == 0 && box_fail == 0,
        format!(
            "{} optimal solves ({optimal} random, {loop_solves} closed-loop), worst KKT {worst_kkt:.2e} (limit {KKT_TOL:.0e}); \
             oracle mismatches: equality {eq_fail}/300, box {box_fail}/300",
            optimal + loop_solves
        ),
    )
}

fn run_sweep() -> (SweepReport, f64) {
    let cfg = ControllerConfig::four_tank(SWEEP_EPSILONS[0]);
    let spec = SweepSpec {
        case: FourTankCase::Constant,
        mode: Mode::P1Algorithm1,
        seeds: SWEEP_SEEDS.to_vec(),
        epsilons: SWEEP_EPSILONS.to_vec(),
        n_s: N_S,
        excitation: BoxSet::uniform(2, 0.0, 1.0).unwrap(),
        tracking_window: 100,
        keep_logs: true,
    };
    let start = Instant::now();
    let report = bench::sweep(&cfg, &spec).expect("sweep input is valid");
    (report, start.elapsed().as_secs_f64())
}

fn pe_maintenance(report: &SweepReport, secs: f64) -> Verdict {
    let cfg = ControllerConfig::four_tank(0.0);
    let t = cfg.data_length;
    let (mut checked, mut violations) = (0, 0);
    let mut notes = Vec::new();
    for log in &report.logs {
        if let Some(f) = &log.failure {
            notes.push(format!("seed {} eps {} stopped at step {}", log.seed, log.epsilon, f.step));
            violations += 1;
            continue;
        }
        let u = log.inputs();
        for k in t + 1..=N_S {
            checked += 1;
            if !hankel::is_pe(&u.window(k - t, t), cfg.pe_order, 1e-9).unwrap().0 {
                violations += 1;
            }
        }
    }
    let mut detail = format!(
        "{} runs, {checked} windows of order {} checked, {violations} violations, sweep {secs:.0} s (limit 600 s)",
        report.logs.len(),
        cfg.pe_order
    );
    if !notes.is_empty() {
        detail.push_str(&format!("; {}", notes.join(", ")));
    }
    verdict(violations == 0 && secs <= 600.0 && report.logs.len() == 20, detail)
}

fn condition_trend(report: &SweepReport) -> Verdict {
    let trend = report.condition_trend();
    let at = |e: f64| trend.iter().find(|t| t.epsilon == e).map(|t| t.cond_mean).unwrap_or(f64::NAN);
    let (lo, hi) = (at(1e-4), at(0.3));
    let listing: Vec<String> = trend.iter().map(|t| format!("{}: {:.3e}", t.epsilon, t.cond_mean)).collect();
    verdict(hi < lo, format!("mean condition over the last T steps by epsilon [{}]", listing.join(", ")))
}

fn case1_tracking(report: &SweepReport) -> Verdict {
    let worst = report.cells.iter().map(|c| c.tracking_mean).fold(f64::NEG_INFINITY, |a, b| {
        if b.is_nan() {
            f64::INFINITY
        } else {
            a.max(b)
        }
    });
    verdict(
        worst <= TRACKING_TOL,
        format!(
            "worst final-100 mean tracking error {worst:.4} over {} runs (limit {TRACKING_TOL})",
            report.cells.len()
        ),
    )
}

fn demo_dir(tag: &str) -> (tempfile::TempDir, Vec<cli::DemoRow>, f64) {
    let dir = tempfile::Builder::new().prefix(tag).tempdir().unwrap();
    let cfg = ExperimentConfig {
        out: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let rows = cli::run_demo(&cfg, dir.path()).expect("demo runs");
    (dir, rows, start.elapsed().as_secs_f64())
}

fn drift_comparison(rows: &[cli::DemoRow]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for e in [0.05518, 0.3] {
        match rows.iter().find(|r| r.case == FourTankCase::Drift && r.epsilon == e) {
            Some(r) if r.failure.is_none() => {
                pass &= r.baseline.tracking_mean > r.guarded.tracking_mean;
                parts.push(format!(
                    "eps {e}: P0 {:.4} vs P1 {:.4}",
                    r.baseline.tracking_mean, r.guarded.tracking_mean
                ));
            }
            _ => {
                pass = false;
                parts.push(format!("eps {e}: run failed"));
            }
        }
    }
    verdict(pass, parts.join(", "))
}

fn dir_contents(p: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(p)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn main() {
    let mut results: Vec<(usize, Verdict)> = vec![(1, hyperplane_appends()), (2, rank_bounds_windows()), (3, mixed_integer())];
    let (report, secs) = run_sweep();
    results.push((4, qp_certification(&report)));
    results.push((5, pe_maintenance(&report, secs)));
    results.push((6, condition_trend(&report)));
    results.push((7, case1_tracking(&report)));
    let (a, rows, ta) = demo_dir("demo-a");
    let (b, _, tb) = demo_dir("demo-b");
    results.push((8, drift_comparison(&rows)));
    let (fa, fb) = (dir_contents(a.path()), dir_contents(b.path()));
    let csvs = fa.iter().filter(|(n, _)| n.ends_with(".csv")).count();
    results.push((
        9,
        verdict(
            fa == fb && csvs == 7,
            format!("{csvs} CSVs from two demo runs ({ta:.0} s, {tb:.0} s), identical: {}", fa == fb),
        ),
    ));
    results.sort_by_key(|(i, _)| *i);
    let mut failed = 0;
    for (i, v) in &results {
        println!("criterion {i}: {} - {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += !v.pass as usize;
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
