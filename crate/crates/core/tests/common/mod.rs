//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use pe_mpc::controller::{ControllerConfig, DataWindow, GuardPolicy};
use pe_mpc::hankel::{self, BoxSet, Signal};
use pe_mpc::linalg::{Matrix, Vector};
use pe_mpc::plant::{plant_step, InputMatrix, PlantModel};
use pe_mpc::qp::{QpInstance, QpSettings};
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub struct Rng(Xoshiro256StarStar);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn unit(&mut self) -> f64 {
        pe_mpc::plant::unit_f64(self.0.next_u64())
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Integer in `[lo, hi]`.
    pub fn int(&mut self, lo: i64, hi: i64) -> i64 {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as i64
    }

    pub fn index(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    pub fn matrix(&mut self, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| self.uniform(lo, hi))
    }

    pub fn vector(&mut self, n: usize, lo: f64, hi: f64) -> Vector {
        Vector::from_fn(n, |_, _| self.uniform(lo, hi))
    }

    pub fn signal(&mut self, dim: usize, len: usize, lo: f64, hi: f64) -> Signal {
        Signal::new(dim, (0..dim * len).map(|_| self.uniform(lo, hi)).collect()).unwrap()
    }

    /// Symmetric positive definite `n x n` with eigenvalues in `[0.5, 5.5]` or so.
    pub fn spd(&mut self, n: usize) -> Matrix {
        let m = self.matrix(n, n, -1.0, 1.0);
        &m * m.transpose() + Matrix::identity(n, n) * 0.5
    }
}

/// Minimizer of a strictly convex QP by enumerating active inequality sets
/// and solving each KKT system directly. Only for small inequality counts.
pub fn brute_force_qp(qp: &QpInstance) -> Option<(Vector, f64)> {
    let n = qp.n();
    let me = qp.n_eq();
    let mi = qp.n_ineq();
    assert!(mi <= 12, "enumeration oracle is exponential in the inequality count");
    let mut best: Option<(Vector, f64)> = None;
    for mask in 0u32..(1 << mi) {
        let active: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        if me + active.len() > n {
            continue;
        }
        let k = n + me + active.len();
        let mut kkt = Matrix::zeros(k, k);
        let mut rhs = Vector::zeros(k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        rhs.rows_mut(0, n).copy_from(&(-&qp.q));
        for i in 0..me {
            for j in 0..n {
                kkt[(n + i, j)] = qp.a[(i, j)];
                kkt[(j, n + i)] = qp.a[(i, j)];
            }
            rhs[n + i] = qp.b[i];
        }
        for (r, &i) in active.iter().enumerate() {
            let row = n + me + r;
            for j in 0..n {
                kkt[(row, j)] = qp.g[(i, j)];
                kkt[(j, row)] = qp.g[(i, j)];
            }
            rhs[row] = qp.h[i];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else {
            continue;
        };
        if (&kkt * &sol - &rhs).amax() > 1e-8 * (1.0 + rhs.amax()) {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n + me, active.len());
        if lambda.iter().any(|l| *l < -1e-9) {
            continue;
        }
        let slack = &qp.g * &z - &qp.h;
        if slack.iter().any(|s| *s > 1e-9) {
            continue;
        }
        let obj = qp.objective(&z);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((z, obj));
        }
    }
    best
}

pub fn strict_settings() -> QpSettings {
    QpSettings::default()
}

/// Random stable single-output plant with `m` inputs and `states` states.
pub fn random_plant(rng: &mut Rng, m: usize, states: usize) -> PlantModel {
    let mut a = rng.matrix(states, states, -0.5, 0.5);
    for i in 0..states {
        a[(i, i)] = rng.uniform(0.3, 0.8);
    }
    // keep the spectral radius below one
    let scale = a.clone().singular_values()[0].max(1.0) * 1.05;
    let a = a / scale;
    let b = rng.matrix(states, m, -1.0, 1.0);
    let c = rng.matrix(1, states, 0.5, 1.5);
    PlantModel::new(a, InputMatrix::Constant(b), c, Matrix::zeros(1, m), Vector::zeros(states)).unwrap()
}

/// Outputs of `model` driven by `u` from its initial state.
pub fn simulate(model: &PlantModel, u: &Signal) -> Signal {
    simulate_with_state(model, u).0
}

/// Outputs and the state after the last sample.
pub fn simulate_with_state(model: &PlantModel, u: &Signal) -> (Signal, Vector) {
    let mut x = model.x0.clone();
    let mut y = Signal::empty(model.outputs());
    for (k, uk) in u.samples().enumerate() {
        let (xn, yk) = plant_step(model, &x, &Vector::from_column_slice(uk), k + 1).unwrap();
        y.push(yk.as_slice()).unwrap();
        x = xn;
    }
    (y, x)
}

/// Static gain `C (I - A)^-1 B + D`.
pub fn dc_gain(model: &PlantModel) -> Matrix {
    let n = model.states();
    let inv = (Matrix::identity(n, n) - &model.a).try_inverse().unwrap();
    &model.c * inv * model.b.at(0) + &model.d
}

/// A small tracking problem on a window of minimal length
/// `T = (m+1)(N+2n) - 1`, so the geometry for the next input is generically
/// a hyperplane.
pub struct SmallInstance {
    pub cfg: ControllerConfig,
    pub window: DataWindow,
    pub model: PlantModel,
}

pub fn small_instance(rng: &mut Rng) -> SmallInstance {
    let m = 1 + rng.index(2);
    // keeps the inequality count small enough for enumeration; the horizon
    // must exceed the order or the terminal segment pins every input
    let n = if m == 1 { 1 + rng.index(2) } else { 1 };
    let big_n = if m == 1 { n + 1 + rng.index(2) } else { 2 };
    let model = random_plant(rng, m, n);
    let pe_order = big_n + 2 * n;
    let t = hankel::min_pe_length(m, pe_order);
    let u = rng.signal(m, t, -1.0, 1.0);
    let y = simulate(&model, &u);
    let u_s = rng.vector(m, -0.5, 0.5);
    let y_s = dc_gain(&model) * &u_s;
    let cfg = ControllerConfig {
        horizon: big_n,
        order: n,
        data_length: t,
        q_weight: Matrix::identity(1, 1) * rng.uniform(0.5, 3.0),
        r_weight: Matrix::identity(m, m) * rng.uniform(0.01, 0.5),
        lambda_alpha: rng.uniform(0.01, 0.5),
        lambda_sigma: rng.uniform(10.0, 1000.0),
        u_setpoint: u_s,
        y_setpoint: y_s,
        input_box: BoxSet::uniform(m, -rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0)).unwrap(),
        output_box: None,
        epsilon: rng.uniform(0.0, 0.5),
        rel_tol: 1e-9,
        pe_order,
        guard: GuardPolicy::RankDeficient,
        qp: QpSettings::default(),
    };
    SmallInstance {
        cfg,
        window: DataWindow::new(u, y).unwrap(),
        model,
    }
}
