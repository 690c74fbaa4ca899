//! Data-driven predictive control over a Hankel data window, with the
//! two-branch persistence-of-excitation constraint on the first input.
//!
//! The stacked decision vector `(u_bar, y_bar, alpha, sigma)` is reduced
//! before solving: `u_bar = H_u alpha` and `y_bar = H_y alpha - sigma` are
//! substituted, leaving a strictly convex QP in `(alpha, sigma)`. The
//! [`OcpLayout`] still describes the full vector and [`OcpInstance::full_solution`]
//! rebuilds it.

use crate::error::{Error, Result};
use crate::hankel::{
    self, BoxSet, Branch, ExcitationGeometry, GeometryStatus, HalfSpacePair, Signal,
};
use crate::linalg::{Matrix, Vector, DEFAULT_REL_TOL};
use crate::qp::{self, QpInstance, QpSettings, QpSolution, QpStatus};

/// Costs closer than this pick the upper branch.
pub const TIE_TOL: f64 = 1e-9;
/// Number of times epsilon is halved when both branches are infeasible.
pub const EPSILON_HALVINGS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Prediction horizon `N`.
    pub horizon: usize,
    /// System order `n` used for the initial and terminal segments.
    pub order: usize,
    /// Data window length `T`.
    pub data_length: usize,
    pub q_weight: Matrix,
    pub r_weight: Matrix,
    pub lambda_alpha: f64,
    pub lambda_sigma: f64,
    pub u_setpoint: Vector,
    pub y_setpoint: Vector,
    pub input_box: BoxSet,
    pub output_box: Option<BoxSet>,
    pub epsilon: f64,
    pub rel_tol: f64,
    /// Order of excitation to maintain (`N + 2n` by default).
    pub pe_order: usize,
    pub guard: GuardPolicy,
    pub qp: QpSettings,
}

/// When the controller constrains `u_bar_0` away from a nonexciting hyperplane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardPolicy {
    /// Only when `[H11; H21]` has numerical rank `mL - 1`, i.e. when some
    /// input in the box would actually drop the Hankel rank.
    RankDeficient,
    /// Every step, against the weakest left singular direction of
    /// `[H11; H21]` (the exact nonexciting set when the rank is `mL - 1`).
    EveryStep,
}

impl GuardPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            GuardPolicy::RankDeficient => "rank_deficient",
            GuardPolicy::EveryStep => "every_step",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rank_deficient" => Ok(GuardPolicy::RankDeficient),
            "every_step" => Ok(GuardPolicy::EveryStep),
            other => Err(Error::invalid(format!(
                "guard must be rank_deficient or every_step, got {other:?}"
            ))),
        }
    }
}

impl ControllerConfig {
    /// Four-tank tuning: `N = 30`, `n = 4`, `T = 150`, `Q = 3 I`,
    /// `R = 1e-4 I`, `lambda_alpha = 0.1`, `lambda_sigma = 1000`,
    /// `U = [-1, 1.5]^2`, unconstrained outputs, guard every step.
    pub fn four_tank(epsilon: f64) -> Self {
        let horizon = 30;
        let order = 4;
        ControllerConfig {
            horizon,
            order,
            data_length: 150,
            q_weight: Matrix::identity(2, 2) * 3.0,
            r_weight: Matrix::identity(2, 2) * 1e-4,
            lambda_alpha: 0.1,
            lambda_sigma: 1000.0,
            u_setpoint: Vector::from_column_slice(&[1.0, 1.0]),
            y_setpoint: Vector::from_column_slice(&[0.65, 0.77]),
            input_box: BoxSet::uniform(2, -1.0, 1.5).expect("static box"),
            output_box: None,
            epsilon,
            rel_tol: DEFAULT_REL_TOL,
            pe_order: horizon + 2 * order,
            guard: GuardPolicy::EveryStep,
            qp: QpSettings::default(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.u_setpoint.len()
    }

    pub fn outputs(&self) -> usize {
        self.y_setpoint.len()
    }

    /// Trajectory length `N + n` represented by the data.
    pub fn depth(&self) -> usize {
        self.horizon + self.order
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.inputs();
        let p = self.outputs();
        if m == 0 || p == 0 {
            return Err(Error::invalid("setpoints must be nonempty"));
        }
        if self.horizon == 0 || self.order == 0 || self.pe_order == 0 {
            return Err(Error::invalid("N, n and the PE order must be positive"));
        }
        if self.horizon < self.order {
            return Err(Error::invalid(format!(
                "horizon N = {} must be at least the order n = {}",
                self.horizon, self.order
            )));
        }
        let required = hankel::min_pe_length(m, self.pe_order);
        if self.data_length < required || self.data_length < self.depth() {
            return Err(Error::PeImpossible {
                order: self.pe_order,
                dim: m,
                required: required.max(self.depth()),
                got: self.data_length,
            });
        }
        check_pd(&self.q_weight, p, "Q")?;
        check_pd(&self.r_weight, m, "R")?;
        if !(self.lambda_alpha > 0.0 && self.lambda_sigma > 0.0) {
            return Err(Error::invalid("lambda_alpha and lambda_sigma must be positive"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::invalid("rel_tol must lie in (0, 1)"));
        }
        self.input_box.validate()?;
        if self.input_box.dim() != m {
            return Err(Error::invalid("input box dimension does not match u_setpoint"));
        }
        if let Some(ob) = &self.output_box {
            ob.validate()?;
            if ob.dim() != p {
                return Err(Error::invalid("output box dimension does not match y_setpoint"));
            }
        }
        Ok(())
    }
}

fn check_pd(w: &Matrix, dim: usize, name: &str) -> Result<()> {
    if w.shape() != (dim, dim) {
        return Err(Error::invalid(format!("{name} must be {dim}x{dim}")));
    }
    if (w - w.transpose()).amax() > 1e-12 || w.clone().cholesky().is_none() {
        return Err(Error::invalid(format!("{name} must be symmetric positive definite")));
    }
    Ok(())
}

/// The `T` most recent input and output samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DataWindow {
    pub u: Signal,
    pub y: Signal,
}

impl DataWindow {
    pub fn new(u: Signal, y: Signal) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::invalid(format!(
                "input window has {} samples, output window {}",
                u.len(),
                y.len()
            )));
        }
        Ok(DataWindow { u, y })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Last `n` samples, used to pin the initial segment of the prediction.
    pub fn recent(&self, n: usize) -> InitialTrajectory {
        InitialTrajectory {
            u: self.u.tail(n),
            y: self.y.tail(n),
        }
    }

    pub fn slide(&mut self, u_k: &[f64], y_k: &[f64]) -> Result<()> {
        if u_k.len() != self.u.dim() || y_k.len() != self.y.dim() {
            return Err(Error::invalid("new sample dimensions do not match the window"));
        }
        self.u.slide(u_k)?;
        self.y.slide(y_k)
    }
}

/// Drop the oldest sample pair and append `(u_k, y_k)`.
pub fn update_window(window: &DataWindow, u_k: &[f64], y_k: &[f64]) -> Result<DataWindow> {
    let mut next = window.clone();
    next.slide(u_k, y_k)?;
    Ok(next)
}

/// Measured `u_{[k-n,k-1]}`, `y_{[k-n,k-1]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialTrajectory {
    pub u: Signal,
    pub y: Signal,
}

/// Position of each block inside the stacked `(u_bar, y_bar, alpha, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcpLayout {
    pub u_bar: (usize, usize),
    pub y_bar: (usize, usize),
    pub alpha: (usize, usize),
    pub sigma: (usize, usize),
}

impl OcpLayout {
    pub fn new(cfg: &ControllerConfig, window_len: usize) -> Result<Self> {
        let depth = cfg.depth();
        if window_len < depth {
            return Err(Error::WindowTooShort {
                needed: depth,
                got: window_len,
            });
        }
        let nu = depth * cfg.inputs();
        let ny = depth * cfg.outputs();
        let na = window_len - depth + 1;
        Ok(OcpLayout {
            u_bar: (0, nu),
            y_bar: (nu, ny),
            alpha: (nu + ny, na),
            sigma: (nu + ny + na, ny),
        })
    }

    pub fn full_len(&self) -> usize {
        self.sigma.0 + self.sigma.1
    }

    /// Length of the reduced `(alpha, sigma)` vector handed to the QP solver.
    pub fn reduced_len(&self) -> usize {
        self.alpha.1 + self.sigma.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpInstance {
    /// QP over `(alpha, sigma)`.
    pub qp: QpInstance,
    pub layout: OcpLayout,
    /// Constant dropped from the QP objective; the tracking cost is
    /// `qp.objective(z) + cost_offset`.
    pub cost_offset: f64,
    hu: Matrix,
    hy: Matrix,
    inputs: usize,
    order: usize,
}

impl OcpInstance {
    pub fn alpha<'z>(&self, z: &'z Vector) -> nalgebra::DVectorView<'z, f64> {
        z.rows(0, self.layout.alpha.1)
    }

    pub fn sigma<'z>(&self, z: &'z Vector) -> nalgebra::DVectorView<'z, f64> {
        z.rows(self.layout.alpha.1, self.layout.sigma.1)
    }

    pub fn u_bar(&self, z: &Vector) -> Vector {
        &self.hu * self.alpha(z)
    }

    pub fn y_bar(&self, z: &Vector) -> Vector {
        &self.hy * self.alpha(z) - self.sigma(z)
    }

    /// `u_bar_0`, the input that would be applied now.
    pub fn first_input(&self, z: &Vector) -> Vector {
        self.u_bar(z).rows(self.order * self.inputs, self.inputs).into_owned()
    }

    /// Full stacked `(u_bar, y_bar, alpha, sigma)`.
    pub fn full_solution(&self, z: &Vector) -> Vector {
        let mut out = Vector::zeros(self.layout.full_len());
        out.rows_mut(self.layout.u_bar.0, self.layout.u_bar.1).copy_from(&self.u_bar(z));
        out.rows_mut(self.layout.y_bar.0, self.layout.y_bar.1).copy_from(&self.y_bar(z));
        out.rows_mut(self.layout.alpha.0, self.layout.alpha.1).copy_from(&self.alpha(z));
        out.rows_mut(self.layout.sigma.0, self.layout.sigma.1).copy_from(&self.sigma(z));
        out
    }

    pub fn tracking_cost(&self, z: &Vector) -> f64 {
        self.qp.objective(z) + self.cost_offset
    }

    /// Reduced-space row for `g' u_bar_0`.
    fn first_input_row(&self, g: &Vector) -> Vector {
        let r0 = self.order * self.inputs;
        let mut row = Vector::zeros(self.layout.reduced_len());
        let block = self.hu.rows(r0, self.inputs);
        row.rows_mut(0, self.layout.alpha.1).copy_from(&(block.transpose() * g));
        row
    }

    /// Copy with `g' u_bar_0 <= h` appended.
    pub fn with_first_input_constraint(&self, g: &Vector, h: f64) -> Result<Self> {
        if g.len() != self.inputs {
            return Err(Error::invalid("first-input constraint has the wrong dimension"));
        }
        let mut out = self.clone();
        out.qp = self.qp.with_inequality(&self.first_input_row(g), h)?;
        Ok(out)
    }

    /// Copy with one branch of the excitation constraint appended.
    pub fn with_branch(&self, pair: &HalfSpacePair, branch: Branch) -> Result<Self> {
        let (g, h) = pair.as_leq(branch);
        self.with_first_input_constraint(&g, h)
    }
}

/// `blockdiag(w, ..., w) * x` for square `w`.
fn block_diag_mul(w: &Matrix, x: &Matrix) -> Matrix {
    let b = w.nrows();
    let mut out = Matrix::zeros(x.nrows(), x.ncols());
    for blk in 0..x.nrows() / b {
        let rows = x.rows(blk * b, b);
        out.rows_mut(blk * b, b).copy_from(&(w * rows));
    }
    out
}

fn repeat(v: &Vector, times: usize) -> Vector {
    Vector::from_iterator(v.len() * times, (0..times).flat_map(|_| v.iter().copied()))
}

/// Build the tracking QP on `window` with the initial segment pinned to
/// `recent`. `extra` adds `g' u_bar_0 <= h`.
pub fn assemble_ocp(
    cfg: &ControllerConfig,
    window: &DataWindow,
    recent: &InitialTrajectory,
    extra: Option<(&Vector, f64)>,
) -> Result<OcpInstance> {
    let (m, p) = (cfg.inputs(), cfg.outputs());
    let (big_n, n) = (cfg.horizon, cfg.order);
    if window.u.dim() != m || window.y.dim() != p {
        return Err(Error::invalid(format!(
            "window dims ({}, {}) do not match config ({m}, {p})",
            window.u.dim(),
            window.y.dim()
        )));
    }
    if recent.u.len() != n || recent.y.len() != n || recent.u.dim() != m || recent.y.dim() != p {
        return Err(Error::invalid(format!("initial trajectory must hold {n} samples of each signal")));
    }
    let layout = OcpLayout::new(cfg, window.len())?;
    let depth = cfg.depth();
    let hu = hankel::build_hankel(&window.u, depth)?;
    let hy = hankel::build_hankel(&window.y, depth)?;
    let na = layout.alpha.1;
    let ns = layout.sigma.1;
    let nz = na + ns;

    // prediction rows i = 0..N-1
    let up = hu.rows(n * m, big_n * m).into_owned();
    let yp = hy.rows(n * p, big_n * p).into_owned();
    let us = repeat(&cfg.u_setpoint, big_n);
    let ys = repeat(&cfg.y_setpoint, big_n);
    let r_up = block_diag_mul(&cfg.r_weight, &up);
    let q_yp = block_diag_mul(&cfg.q_weight, &yp);
    let q_ys = block_diag_mul(&cfg.q_weight, &Matrix::from_column_slice(ys.len(), 1, ys.as_slice()));
    let r_us = block_diag_mul(&cfg.r_weight, &Matrix::from_column_slice(us.len(), 1, us.as_slice()));
    let q_ys = q_ys.column(0).into_owned();
    let r_us = r_us.column(0).into_owned();

    let mut hess = Matrix::zeros(nz, nz);
    let mut lin = Vector::zeros(nz);
    {
        let mut haa = up.transpose() * &r_up + yp.transpose() * &q_yp;
        for i in 0..na {
            haa[(i, i)] += cfg.lambda_alpha;
        }
        hess.view_mut((0, 0), (na, na)).copy_from(&(haa * 2.0));
        let sp = n * p; // sigma offset of the prediction rows
        let has = &q_yp * -2.0; // (N p) x na
        hess.view_mut((na + sp, 0), (big_n * p, na)).copy_from(&has);
        hess.view_mut((0, na + sp), (na, big_n * p)).copy_from(&has.transpose());
        for i in 0..ns {
            hess[(na + i, na + i)] += 2.0 * cfg.lambda_sigma;
        }
        let qblk = block_diag_mul(&cfg.q_weight, &Matrix::identity(big_n * p, big_n * p)) * 2.0;
        let mut view = hess.view_mut((na + sp, na + sp), (big_n * p, big_n * p));
        view += qblk;
        lin.rows_mut(0, na)
            .copy_from(&((up.transpose() * &r_us + yp.transpose() * &q_ys) * -2.0));
        lin.rows_mut(na + sp, big_n * p).copy_from(&(&q_ys * 2.0));
    }
    let cost_offset = us.dot(&r_us) + ys.dot(&q_ys);

    // equalities: initial segment, then terminal segment
    let n_eq = 2 * n * (m + p);
    let mut a = Matrix::zeros(n_eq, nz);
    let mut b = Vector::zeros(n_eq);
    let mut row = 0;
    let term_u = repeat(&cfg.u_setpoint, n);
    let term_y = repeat(&cfg.y_setpoint, n);
    let recent_u = recent.u.stacked();
    let recent_y = recent.y.stacked();
    for (block0, u_rhs, y_rhs) in [(0usize, &recent_u, &recent_y), (big_n, &term_u, &term_y)] {
        for i in 0..n * m {
            a.view_mut((row, 0), (1, na)).copy_from(&hu.row(block0 * m + i));
            b[row] = u_rhs[i];
            row += 1;
        }
        for i in 0..n * p {
            let r = block0 * p + i;
            a.view_mut((row, 0), (1, na)).copy_from(&hy.row(r));
            a[(row, na + r)] = -1.0;
            b[row] = y_rhs[i];
            row += 1;
        }
    }

    // box inequalities on the prediction segment
    let mut g_rows: Vec<Vector> = Vec::new();
    let mut h_vals: Vec<f64> = Vec::new();
    for i in 0..big_n {
        for j in 0..m {
            let r = (n + i) * m + j;
            let coeffs = hu.row(r).transpose();
            push_bounds(&mut g_rows, &mut h_vals, nz, &coeffs, None, cfg.input_box.lower[j], cfg.input_box.upper[j]);
        }
        if let Some(ob) = &cfg.output_box {
            for j in 0..p {
                let r = (n + i) * p + j;
                let coeffs = hy.row(r).transpose();
                push_bounds(&mut g_rows, &mut h_vals, nz, &coeffs, Some(na + r), ob.lower[j], ob.upper[j]);
            }
        }
    }
    let mut g = Matrix::zeros(g_rows.len(), nz);
    for (i, r) in g_rows.iter().enumerate() {
        g.row_mut(i).copy_from(&r.transpose());
    }
    let qp = QpInstance::new(hess, lin, a, b, g, Vector::from_vec(h_vals))?;
    let base = OcpInstance {
        qp,
        layout,
        cost_offset,
        hu,
        hy,
        inputs: m,
        order: n,
    };
    match extra {
        Some((gv, h)) => base.with_first_input_constraint(gv, h),
        None => Ok(base),
    }
}

#[allow(clippy::too_many_arguments)]
fn push_bounds(
    g_rows: &mut Vec<Vector>,
    h_vals: &mut Vec<f64>,
    nz: usize,
    coeffs: &Vector,
    sigma_col: Option<usize>,
    lower: f64,
    upper: f64,
) {
    let make = |sign: f64| {
        let mut r = Vector::zeros(nz);
        r.rows_mut(0, coeffs.len()).copy_from(&(coeffs * sign));
        if let Some(c) = sigma_col {
            r[c] = -sign;
        }
        r
    };
    if upper.is_finite() {
        g_rows.push(make(1.0));
        h_vals.push(upper);
    }
    if lower.is_finite() {
        g_rows.push(make(-1.0));
        h_vals.push(-lower);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchChoice {
    Unconstrained,
    Up,
    Down,
}

impl BranchChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            BranchChoice::Unconstrained => "unconstrained",
            BranchChoice::Up => "up",
            BranchChoice::Down => "down",
        }
    }

    /// Binary variable of the mixed-integer form.
    pub fn binary(&self) -> Option<u8> {
        match self {
            BranchChoice::Unconstrained => None,
            BranchChoice::Up => Some(Branch::Up.binary()),
            BranchChoice::Down => Some(Branch::Down.binary()),
        }
    }
}

impl From<Branch> for BranchChoice {
    fn from(b: Branch) -> Self {
        match b {
            Branch::Up => BranchChoice::Up,
            Branch::Down => BranchChoice::Down,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchAttempt {
    pub choice: BranchChoice,
    pub epsilon: f64,
    pub status: QpStatus,
    pub cost: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutcome {
    pub chosen: BranchChoice,
    pub u_applied: Vector,
    /// Tracking cost of the chosen solve.
    pub cost: f64,
    pub per_branch: Vec<BranchAttempt>,
    /// Epsilon of the accepted branch solve (after any halving).
    pub epsilon_used: f64,
    /// Set when every branch was infeasible and the unconstrained problem was
    /// solved instead; excitation is not guaranteed for this step.
    pub excitation_unguarded: bool,
    pub half_spaces: Option<HalfSpacePair>,
    pub solution: QpSolution,
    pub instance: OcpInstance,
}

impl BranchOutcome {
    pub fn v(&self) -> Option<u8> {
        self.chosen.binary()
    }

    pub fn iterations(&self) -> usize {
        self.per_branch.iter().map(|a| a.iterations).sum()
    }
}

fn attempt(
    ocp: &OcpInstance,
    choice: BranchChoice,
    epsilon: f64,
    settings: &QpSettings,
) -> Result<(BranchAttempt, QpSolution)> {
    let sol = qp::solve_qp(&ocp.qp, settings)?;
    let cost = ocp.tracking_cost(&sol.z);
    Ok((
        BranchAttempt {
            choice,
            epsilon,
            status: sol.status,
            cost,
            iterations: sol.iterations,
        },
        sol,
    ))
}

/// Solve the unconstrained problem, or both excitation branches (in
/// parallel) and keep the cheaper optimal one.
pub fn solve_branches(
    cfg: &ControllerConfig,
    base: &OcpInstance,
    geometry: &ExcitationGeometry,
    need_pe: bool,
    step: usize,
) -> Result<BranchOutcome> {
    let hyperplane = geometry.hyperplane().filter(|_| need_pe).map(|(a, c)| (a.clone(), c));
    solve_guarded(cfg, base, hyperplane, step)
}

/// Like [`solve_branches`] with the hyperplane `a'u + c = 0` given directly;
/// `None` solves the unconstrained problem.
///
/// If both branches are infeasible, epsilon is halved up to
/// [`EPSILON_HALVINGS`] times, then the unconstrained problem is solved and
/// the outcome is flagged `excitation_unguarded`.
pub fn solve_guarded(
    cfg: &ControllerConfig,
    base: &OcpInstance,
    hyperplane: Option<(Vector, f64)>,
    step: usize,
) -> Result<BranchOutcome> {
    let unconstrained = |warn: bool, mut history: Vec<BranchAttempt>| -> Result<BranchOutcome> {
        let (att, sol) = attempt(base, BranchChoice::Unconstrained, 0.0, &cfg.qp)?;
        history.push(att.clone());
        if sol.status != QpStatus::Optimal {
            return Err(Error::NoFeasibleInput { step });
        }
        Ok(BranchOutcome {
            chosen: BranchChoice::Unconstrained,
            u_applied: base.first_input(&sol.z),
            cost: att.cost,
            per_branch: history,
            epsilon_used: 0.0,
            excitation_unguarded: warn,
            half_spaces: None,
            solution: sol,
            instance: base.clone(),
        })
    };

    let Some((a, c)) = hyperplane else {
        return unconstrained(false, Vec::new());
    };

    let mut history = Vec::new();
    let mut epsilon = cfg.epsilon;
    for _ in 0..=EPSILON_HALVINGS {
        let pair = HalfSpacePair::new(a.clone(), c, epsilon)?;
        let up = base.with_branch(&pair, Branch::Up)?;
        let down = base.with_branch(&pair, Branch::Down)?;
        let (ru, rd) = rayon::join(
            || attempt(&up, BranchChoice::Up, epsilon, &cfg.qp),
            || attempt(&down, BranchChoice::Down, epsilon, &cfg.qp),
        );
        let (au, su) = ru?;
        let (ad, sd) = rd?;
        history.push(au.clone());
        history.push(ad.clone());
        let ok_u = au.status == QpStatus::Optimal;
        let ok_d = ad.status == QpStatus::Optimal;
        let pick_up = match (ok_u, ok_d) {
            (true, true) => au.cost <= ad.cost + TIE_TOL,
            (true, false) => true,
            (false, true) => false,
            (false, false) => {
                epsilon *= 0.5;
                continue;
            }
        };
        let (choice, att, sol, inst) = if pick_up {
            (BranchChoice::Up, au, su, up)
        } else {
            (BranchChoice::Down, ad, sd, down)
        };
        return Ok(BranchOutcome {
            chosen: choice,
            u_applied: inst.first_input(&sol.z),
            cost: att.cost,
            per_branch: history,
            epsilon_used: epsilon,
            excitation_unguarded: false,
            half_spaces: Some(pair),
            solution: sol,
            instance: inst,
        });
    }
    unconstrained(true, history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub geometry: ExcitationGeometry,
    /// Hyperplane `(a, c)` guarded against this step, if any.
    pub hyperplane: Option<(Vector, f64)>,
    /// Whether that hyperplane meets the input box.
    pub intersects: Option<bool>,
    pub outcome: BranchOutcome,
}

/// One receding-horizon step on the current window: locate the nonexciting
/// hyperplane for `u_k`, decide whether the excitation constraint is needed,
/// solve, and return `u_bar_0`.
pub fn controller_step(cfg: &ControllerConfig, window: &DataWindow, step: usize) -> Result<(Vector, StepDiagnostics)> {
    if window.len() != cfg.data_length {
        return Err(Error::invalid(format!(
            "window holds {} samples, config expects T = {}",
            window.len(),
            cfg.data_length
        )));
    }
    let trailing = window.u.tail(cfg.data_length - 1);
    let blocks = hankel::hankel_blocks(&trailing, cfg.pe_order)?;
    let geometry = hankel::excitation_geometry(&blocks, cfg.rel_tol)?;
    let hyperplane = match (geometry.status, cfg.guard) {
        (GeometryStatus::Deficient, _) => {
            return Err(Error::LostExcitation {
                step,
                rank: geometry.rank_found,
                required: cfg.inputs() * cfg.pe_order - 1,
            })
        }
        (GeometryStatus::Hyperplane, _) => geometry.hyperplane().map(|(a, c)| (a.clone(), c)),
        (GeometryStatus::FullRank, GuardPolicy::EveryStep) => {
            let (a, c, _, _) = hankel::weakest_hyperplane(&blocks)?;
            Some((a, c))
        }
        (GeometryStatus::FullRank, GuardPolicy::RankDeficient) => None,
    };
    let intersects = hyperplane
        .as_ref()
        .map(|(a, c)| hankel::hyperplane_meets_box(a.as_slice(), *c, &cfg.input_box));
    let guarded = match intersects {
        Some(true) => hyperplane.clone(),
        _ => None,
    };
    let recent = window.recent(cfg.order);
    let base = assemble_ocp(cfg, window, &recent, None)?;
    let outcome = solve_guarded(cfg, &base, guarded, step)?;
    let u = outcome.u_applied.clone();
    Ok((
        u,
        StepDiagnostics {
            geometry,
            hyperplane,
            intersects,
            outcome,
        },
    ))
}

/// Fixed-data baseline: solve the tracking problem on offline data with the
/// current initial trajectory, no excitation constraint.
pub fn baseline_p0_step(
    cfg: &ControllerConfig,
    offline: &DataWindow,
    recent: &InitialTrajectory,
    step: usize,
) -> Result<(Vector, QpSolution, f64)> {
    let ocp = assemble_ocp(cfg, offline, recent, None)?;
    let sol = qp::solve_qp(&ocp.qp, &cfg.qp)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::NoFeasibleInput { step });
    }
    let cost = ocp.tracking_cost(&sol.z);
    Ok((ocp.first_input(&sol.z), sol, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{four_tank_model, initial_excitation, plant_step, FourTankCase};
    use approx::assert_relative_eq;

    fn open_loop_window(seed: u64, t: usize) -> DataWindow {
        let model = four_tank_model(FourTankCase::Constant);
        let u = initial_excitation(seed, t, &BoxSet::uniform(2, 0.0, 1.0).unwrap()).unwrap();
        let mut x = model.x0.clone();
        let mut y = Signal::empty(2);
        for (k, uk) in u.samples().enumerate() {
            let (xn, yk) = plant_step(&model, &x, &Vector::from_column_slice(uk), k + 1).unwrap();
            y.push(yk.as_slice()).unwrap();
            x = xn;
        }
        DataWindow::new(u, y).unwrap()
    }

    #[test]
    fn layout_dimensions() {
        let cfg = ControllerConfig::four_tank(0.1);
        let layout = OcpLayout::new(&cfg, 150).unwrap();
        assert_eq!(layout.u_bar.1, 68);
        assert_eq!(layout.y_bar.1, 68);
        assert_eq!(layout.alpha.1, 117);
        assert_eq!(layout.sigma.1, 68);
        assert_eq!(layout.full_len(), 321);
        assert!(matches!(OcpLayout::new(&cfg, 20), Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn config_validation() {
        let cfg = ControllerConfig::four_tank(0.1);
        cfg.validate().unwrap();
        let mut short = cfg.clone();
        short.data_length = 10;
        assert!(matches!(short.validate(), Err(Error::PeImpossible { .. })));
        let mut neg = cfg.clone();
        neg.epsilon = -0.1;
        assert!(neg.validate().is_err());
        let mut bad_r = cfg.clone();
        bad_r.r_weight = Matrix::zeros(2, 2);
        assert!(bad_r.validate().is_err());
    }

    #[test]
    fn stationary_window_tracks_equilibrium() {
        let mut cfg = ControllerConfig::four_tank(0.0);
        let u_eq = [0.8, 0.6];
        let y_eq = [0.5, 0.55];
        cfg.u_setpoint = Vector::from_column_slice(&u_eq);
        cfg.y_setpoint = Vector::from_column_slice(&y_eq);
        let t = cfg.data_length;
        let u = Signal::from_samples(2, &vec![u_eq; t]).unwrap();
        let y = Signal::from_samples(2, &vec![y_eq; t]).unwrap();
        let window = DataWindow::new(u, y).unwrap();
        let ocp = assemble_ocp(&cfg, &window, &window.recent(cfg.order), None).unwrap();
        let sol = qp::solve_qp(&ocp.qp, &cfg.qp).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let ubar = ocp.u_bar(&sol.z);
        for (i, v) in ubar.iter().enumerate() {
            assert!((v - u_eq[i % 2]).abs() < 1e-6, "u_bar[{i}] = {v}");
        }
        let ybar = ocp.y_bar(&sol.z);
        for (i, v) in ybar.iter().enumerate() {
            assert!((v - y_eq[i % 2]).abs() < 1e-6, "y_bar[{i}] = {v}");
        }
    }

    #[test]
    fn cost_matches_direct_evaluation() {
        let cfg = ControllerConfig::four_tank(0.1);
        let window = open_loop_window(3, cfg.data_length);
        let ocp = assemble_ocp(&cfg, &window, &window.recent(cfg.order), None).unwrap();
        let sol = qp::solve_qp(&ocp.qp, &cfg.qp).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let full = ocp.full_solution(&sol.z);
        let l = ocp.layout;
        let (n, big_n) = (cfg.order, cfg.horizon);
        let mut direct = 0.0;
        for i in 0..big_n {
            for j in 0..2 {
                let du = full[l.u_bar.0 + (n + i) * 2 + j] - cfg.u_setpoint[j];
                let dy = full[l.y_bar.0 + (n + i) * 2 + j] - cfg.y_setpoint[j];
                direct += cfg.r_weight[(j, j)] * du * du + cfg.q_weight[(j, j)] * dy * dy;
            }
        }
        direct += cfg.lambda_alpha * full.rows(l.alpha.0, l.alpha.1).norm_squared();
        direct += cfg.lambda_sigma * full.rows(l.sigma.0, l.sigma.1).norm_squared();
        assert_relative_eq!(ocp.tracking_cost(&sol.z), direct, max_relative = 1e-9);

        // equality structure: initial segment pinned, terminal at setpoint
        let recent = window.recent(n);
        for i in 0..n * 2 {
            assert!((full[l.u_bar.0 + i] - recent.u.as_slice()[i]).abs() < 1e-8);
            assert!((full[l.y_bar.0 + i] - recent.y.as_slice()[i]).abs() < 1e-8);
        }
        for i in 0..n {
            for j in 0..2 {
                assert!((full[l.u_bar.0 + (big_n + i) * 2 + j] - cfg.u_setpoint[j]).abs() < 1e-8);
                assert!((full[l.y_bar.0 + (big_n + i) * 2 + j] - cfg.y_setpoint[j]).abs() < 1e-8);
            }
        }
        // data equation
        let hu = hankel::build_hankel(&window.u, cfg.depth()).unwrap();
        let alpha = full.rows(l.alpha.0, l.alpha.1);
        assert!((hu * alpha - full.rows(l.u_bar.0, l.u_bar.1)).amax() < 1e-12);
    }

    #[test]
    fn halfspace_excluding_box_is_infeasible() {
        let cfg = ControllerConfig::four_tank(0.1);
        let window = open_loop_window(5, cfg.data_length);
        let a = Vector::from_column_slice(&[1.0, 0.0]);
        // a'u + c >= 10 with c = 0, written as -a'u <= -10
        let ocp = assemble_ocp(&cfg, &window, &window.recent(cfg.order), Some((&(-&a), -10.0))).unwrap();
        let sol = qp::solve_qp(&ocp.qp, &cfg.qp).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn full_rank_geometry_is_unconstrained() {
        let mut cfg = ControllerConfig::four_tank(0.1);
        cfg.guard = GuardPolicy::RankDeficient;
        let window = open_loop_window(11, cfg.data_length);
        let (u, diag) = controller_step(&cfg, &window, 151).unwrap();
        assert_eq!(diag.geometry.status, GeometryStatus::FullRank);
        assert_eq!(diag.outcome.chosen, BranchChoice::Unconstrained);
        let base = assemble_ocp(&cfg, &window, &window.recent(cfg.order), None).unwrap();
        assert_eq!(base.qp, diag.outcome.instance.qp);
        let (u0, _, _) = baseline_p0_step(&cfg, &window, &window.recent(cfg.order), 151).unwrap();
        assert_eq!(u, u0);
        assert!(cfg.input_box.contains(u.as_slice(), 1e-8));
    }

    #[test]
    fn window_update() {
        let u = Signal::scalar(&[1., 2., 3.]).unwrap();
        let y = Signal::scalar(&[4., 5., 6.]).unwrap();
        let w = DataWindow::new(u, y).unwrap();
        let w1 = update_window(&w, &[7.], &[8.]).unwrap();
        assert_eq!(w1.u.as_slice(), &[2., 3., 7.]);
        assert_eq!(w1.y.as_slice(), &[5., 6., 8.]);
        let w2 = update_window(&w1, &[9.], &[10.]).unwrap();
        assert_eq!(w2.u.as_slice(), &[3., 7., 9.]);
        assert_eq!(w2.len(), w.len());
        assert!(update_window(&w, &[1., 2.], &[1.]).is_err());
    }
}
