//! Dense strictly convex quadratic programming.
//!
//! ```text
//!     minimize    1/2 z'Pz + q'z
//!     subject to  Az  = b
//!                 Gz <= h
//! ```
//!
//! Solved with the Goldfarb-Idnani dual active-set method: start from the
//! unconstrained minimizer and add violated constraints one at a time while
//! keeping dual feasibility. The method needs `P` positive definite, produces
//! exact active sets, and certifies infeasibility when a violated constraint
//! cannot be reached by either a primal or a dual step.
//!
//! The factorization `J = L^{-T} Q` with `J' N = [R; 0]` (`N` the active
//! constraint normals) is updated with Givens rotations on every add/drop.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    pub p: Matrix,
    pub q: Vector,
    pub a: Matrix,
    pub b: Vector,
    pub g: Matrix,
    pub h: Vector,
}

impl QpInstance {
    /// Validates dimensions and symmetrizes `p`.
    pub fn new(p: Matrix, q: Vector, a: Matrix, b: Vector, g: Matrix, h: Vector) -> Result<Self> {
        let n = q.len();
        if n == 0 {
            return Err(Error::invalid("QP needs at least one variable"));
        }
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::invalid(format!("P is {}x{}, expected {n}x{n}", p.nrows(), p.ncols())));
        }
        if a.ncols() != n || a.nrows() != b.len() {
            return Err(Error::invalid(format!(
                "A is {}x{} with b of length {}, expected ?x{n} and matching b",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if g.ncols() != n || g.nrows() != h.len() {
            return Err(Error::invalid(format!(
                "G is {}x{} with h of length {}, expected ?x{n} and matching h",
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        let finite = |x: &[f64]| x.iter().all(|v| v.is_finite());
        if ![p.as_slice(), q.as_slice(), a.as_slice(), b.as_slice(), g.as_slice(), h.as_slice()]
            .into_iter()
            .all(finite)
        {
            return Err(Error::invalid("QP data contains non-finite values"));
        }
        let p = (&p + p.transpose()) * 0.5;
        Ok(QpInstance { p, q, a, b, g, h })
    }

    /// Only a quadratic and linear term.
    pub fn unconstrained(p: Matrix, q: Vector) -> Result<Self> {
        let n = q.len();
        QpInstance::new(p, q, Matrix::zeros(0, n), Vector::zeros(0), Matrix::zeros(0, n), Vector::zeros(0))
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }

    /// Copy with one extra inequality row `g'z <= h`.
    pub fn with_inequality(&self, g: &Vector, h: f64) -> Result<Self> {
        if g.len() != self.n() {
            return Err(Error::invalid("extra inequality has the wrong length"));
        }
        let mi = self.n_ineq();
        let mut gm = self.g.clone().insert_row(mi, 0.0);
        gm.row_mut(mi).copy_from(&g.transpose());
        let hv = self.h.clone().push(h);
        Ok(QpInstance {
            p: self.p.clone(),
            q: self.q.clone(),
            a: self.a.clone(),
            b: self.b.clone(),
            g: gm,
            h: hv,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_comp: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            tol_comp: 1e-8,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: Vector,
    pub cost: f64,
    pub eq_multipliers: Vector,
    pub ineq_multipliers: Vector,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub comp_residual: f64,
    pub iterations: usize,
    /// Indices of inequality rows active at the returned point.
    pub active_inequalities: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub comp: f64,
}

impl KktResiduals {
    pub fn within(&self, s: &QpSettings) -> bool {
        self.primal <= s.tol_primal && self.dual <= s.tol_dual && self.comp <= s.tol_comp
    }
}

/// Infinity-norm KKT residuals of a candidate primal-dual point.
pub fn kkt_residuals(p: &QpInstance, sol: &QpSolution) -> KktResiduals {
    residuals_of(p, &sol.z, &sol.eq_multipliers, &sol.ineq_multipliers)
}

fn residuals_of(p: &QpInstance, z: &Vector, y: &Vector, lambda: &Vector) -> KktResiduals {
    let eq = &p.a * z - &p.b;
    let ineq = &p.g * z - &p.h;
    let primal = eq
        .iter()
        .map(|v| v.abs())
        .chain(ineq.iter().map(|v| v.max(0.0)))
        .fold(0.0, f64::max);
    let stat = &p.p * z + &p.q + p.a.transpose() * y + p.g.transpose() * lambda;
    let dual = stat.amax();
    let comp = lambda
        .iter()
        .zip(ineq.iter())
        .map(|(l, s)| (l * s).abs())
        .fold(0.0, f64::max);
    KktResiduals { primal, dual, comp }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Row {
    /// Equality row `i`, oriented as `sign * a_i' z >= sign * b_i`.
    Eq(usize, f64),
    /// Inequality row `i` written as `-g_i' z >= -h_i`.
    Ineq(usize),
}

/// Relative size of the projected normal below which a new constraint is
/// treated as linearly dependent on the active set.
const DEPENDENCE_TOL: f64 = 1e-11;

struct ActiveSet<'a> {
    qp: &'a QpInstance,
    j: Matrix,
    r: Matrix,
    rows: Vec<Row>,
    u: Vec<f64>,
}

impl<'a> ActiveSet<'a> {
    fn normal(&self, row: Row) -> (Vector, f64) {
        match row {
            Row::Eq(i, s) => (self.qp.a.row(i).transpose() * s, self.qp.b[i] * s),
            Row::Ineq(i) => (-self.qp.g.row(i).transpose(), -self.qp.h[i]),
        }
    }

    fn size(&self) -> usize {
        self.rows.len()
    }

    /// `R^{-1} d[..q]`
    fn dual_direction(&self, d: &Vector) -> Vec<f64> {
        let q = self.size();
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }

    fn rotate_j(&mut self, i: usize, k: usize, c: f64, s: f64) {
        let n = self.j.nrows();
        for row in 0..n {
            let a = self.j[(row, i)];
            let b = self.j[(row, k)];
            self.j[(row, i)] = c * a + s * b;
            self.j[(row, k)] = -s * a + c * b;
        }
    }

    fn add(&mut self, row: Row, mut d: Vector, multiplier: f64) {
        let n = self.j.nrows();
        let q = self.size();
        for jj in (q + 1..n).rev() {
            let (c, s, h) = givens(d[jj - 1], d[jj]);
            if s == 0.0 {
                continue;
            }
            d[jj - 1] = h;
            d[jj] = 0.0;
            self.rotate_j(jj - 1, jj, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.rows.push(row);
        self.u.push(multiplier);
    }

    fn drop(&mut self, k: usize) {
        let q = self.size();
        for col in k..q - 1 {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        let qn = q - 1;
        for jj in k..qn {
            let (c, s, h) = givens(self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            self.r[(jj, jj)] = h;
            self.r[(jj + 1, jj)] = 0.0;
            if s == 0.0 {
                continue;
            }
            for col in jj + 1..qn {
                let a = self.r[(jj, col)];
                let b = self.r[(jj + 1, col)];
                self.r[(jj, col)] = c * a + s * b;
                self.r[(jj + 1, col)] = -s * a + c * b;
            }
            self.rotate_j(jj, jj + 1, c, s);
        }
        for col in 0..q {
            self.r[(qn, col)] = 0.0;
        }
        self.rows.remove(k);
        self.u.remove(k);
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        return (1.0, 0.0, a);
    }
    let h = a.hypot(b);
    (a / h, b / h, h)
}

enum Outcome {
    Optimal,
    Infeasible,
    MaxIterations,
}

pub fn solve_qp(qp: &QpInstance, settings: &QpSettings) -> Result<QpSolution> {
    let n = qp.n();
    let chol = qp
        .p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("P is not positive definite"))?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&Matrix::identity(n, n))
        .ok_or_else(|| Error::invalid("P is not positive definite"))?;
    let mut set = ActiveSet {
        qp,
        j: l_inv.transpose(),
        r: Matrix::zeros(n, n),
        rows: Vec::new(),
        u: Vec::new(),
    };
    let mut x = -chol.solve(&qp.q);
    let feas_tol = 1e-2 * settings.tol_primal;
    let g_norms: Vec<f64> = (0..qp.n_ineq()).map(|i| qp.g.row(i).norm().max(1e-300)).collect();

    let mut iterations = 0usize;
    let mut next_eq = 0usize;
    let outcome = 'outer: loop {
        // pick the next constraint to add
        let row = if next_eq < qp.n_eq() {
            let i = next_eq;
            next_eq += 1;
            let s = qp.a.row(i).dot(&x.transpose()) - qp.b[i];
            Row::Eq(i, if s > 0.0 { -1.0 } else { 1.0 })
        } else {
            let slack = &qp.g * &x - &qp.h;
            let mut worst = None;
            let mut worst_score = 0.0;
            for (i, v) in slack.iter().enumerate() {
                if *v > feas_tol {
                    let score = v / g_norms[i];
                    if score > worst_score {
                        worst_score = score;
                        worst = Some(i);
                    }
                }
            }
            match worst {
                Some(i) => Row::Ineq(i),
                None => break Outcome::Optimal,
            }
        };
        let (np, bp) = set.normal(row);
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > settings.max_iterations {
                break 'outer Outcome::MaxIterations;
            }
            let q = set.size();
            let d = set.j.transpose() * &np;
            let z = set.j.columns(q, n - q) * d.rows(q, n - q);
            let d2 = d.rows(q, n - q).norm();
            let rv = set.dual_direction(&d);
            let sp = np.dot(&x) - bp;

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, (r, act)) in rv.iter().zip(&set.rows).enumerate() {
                if matches!(act, Row::Ineq(_)) && *r > 0.0 {
                    let t = set.u[k] / r;
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(k);
                    }
                }
            }
            let dependent = d2 <= DEPENDENCE_TOL * d.norm().max(1e-300);
            let t2 = if dependent {
                f64::INFINITY
            } else {
                (-sp / z.dot(&np)).max(0.0)
            };

            if dependent && matches!(row, Row::Eq(..)) && sp.abs() <= feas_tol {
                // redundant, consistent equality
                continue 'outer;
            }
            let t = t1.min(t2);
            if t.is_infinite() {
                break 'outer Outcome::Infeasible;
            }
            for (uk, r) in set.u.iter_mut().zip(&rv) {
                *uk -= t * r;
            }
            up += t;
            if t2.is_finite() {
                x += t * &z;
                if t2 <= t1 {
                    set.add(row, d, up);
                    continue 'outer;
                }
            }
            set.drop(drop_at.expect("finite t1 implies a blocking constraint"));
        }
    };

    let status = match outcome {
        Outcome::Optimal => QpStatus::Optimal,
        Outcome::Infeasible => QpStatus::Infeasible,
        Outcome::MaxIterations => QpStatus::MaxIterations,
    };
    let (mut y, mut lambda) = multipliers(qp, &set);
    let mut res = residuals_of(qp, &x, &y, &lambda);
    if status == QpStatus::Optimal && !res.within(settings) {
        if let Some((xp, yp, lp)) = polish(qp, &set) {
            let rp = residuals_of(qp, &xp, &yp, &lp);
            if rp.primal.max(rp.dual) < res.primal.max(res.dual) {
                x = xp;
                y = yp;
                lambda = lp;
                res = rp;
            }
        }
    }
    let active_inequalities = set
        .rows
        .iter()
        .filter_map(|r| match r {
            Row::Ineq(i) => Some(*i),
            Row::Eq(..) => None,
        })
        .collect();
    Ok(QpSolution {
        status,
        cost: qp.objective(&x),
        z: x,
        eq_multipliers: y,
        ineq_multipliers: lambda,
        primal_residual: res.primal,
        dual_residual: res.dual,
        comp_residual: res.comp,
        iterations,
        active_inequalities,
    })
}

fn multipliers(qp: &QpInstance, set: &ActiveSet) -> (Vector, Vector) {
    let mut y = Vector::zeros(qp.n_eq());
    let mut lambda = Vector::zeros(qp.n_ineq());
    for (row, u) in set.rows.iter().zip(&set.u) {
        match *row {
            Row::Eq(i, s) => y[i] = -s * u,
            Row::Ineq(i) => lambda[i] = u.max(0.0),
        }
    }
    (y, lambda)
}

/// Re-solve the KKT system restricted to the final active set.
fn polish(qp: &QpInstance, set: &ActiveSet) -> Option<(Vector, Vector, Vector)> {
    let n = qp.n();
    let k = set.size();
    let mut kkt = Matrix::zeros(n + k, n + k);
    let mut rhs = Vector::zeros(n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    rhs.rows_mut(0, n).copy_from(&(-&qp.q));
    for (c, row) in set.rows.iter().enumerate() {
        let (normal, bound) = match *row {
            Row::Eq(i, _) => (qp.a.row(i).transpose(), qp.b[i]),
            Row::Ineq(i) => (qp.g.row(i).transpose(), qp.h[i]),
        };
        kkt.view_mut((0, n + c), (n, 1)).copy_from(&normal);
        kkt.view_mut((n + c, 0), (1, n)).copy_from(&normal.transpose());
        rhs[n + c] = bound;
    }
    let sol = kkt.lu().solve(&rhs)?;
    let x = sol.rows(0, n).into_owned();
    let mut y = Vector::zeros(qp.n_eq());
    let mut lambda = Vector::zeros(qp.n_ineq());
    for (c, row) in set.rows.iter().enumerate() {
        match *row {
            Row::Eq(i, _) => y[i] = sol[n + c],
            Row::Ineq(i) => lambda[i] = sol[n + c].max(0.0),
        }
    }
    Some((x, y, lambda))
}
