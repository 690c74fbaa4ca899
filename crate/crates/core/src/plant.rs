//! Discrete LTI plants with an optionally drifting input matrix, and the
//! seeded open-loop excitation used to fill the first data window.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{Error, Result};
use crate::hankel::{BoxSet, Signal};
use crate::linalg::{Matrix, Vector};

/// Input matrix as a function of the step index.
#[derive(Debug, Clone, PartialEq)]
pub enum InputMatrix {
    Constant(Matrix),
    /// `base` with entry `(row, col)` replaced by `start + rate * k`.
    LinearDrift {
        base: Matrix,
        row: usize,
        col: usize,
        start: f64,
        rate: f64,
    },
}

impl InputMatrix {
    pub fn at(&self, k: usize) -> Matrix {
        match self {
            InputMatrix::Constant(b) => b.clone(),
            InputMatrix::LinearDrift {
                base,
                row,
                col,
                start,
                rate,
            } => {
                let mut b = base.clone();
                b[(*row, *col)] = start + rate * k as f64;
                b
            }
        }
    }

    fn shape(&self) -> (usize, usize) {
        match self {
            InputMatrix::Constant(b) => b.shape(),
            InputMatrix::LinearDrift { base, .. } => base.shape(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: Matrix,
    pub b: InputMatrix,
    pub c: Matrix,
    pub d: Matrix,
    pub x0: Vector,
}

impl PlantModel {
    pub fn new(a: Matrix, b: InputMatrix, c: Matrix, d: Matrix, x0: Vector) -> Result<Self> {
        let n = a.nrows();
        let (bn, m) = b.shape();
        let p = c.nrows();
        if a.ncols() != n || bn != n || c.ncols() != n || d.shape() != (p, m) || x0.len() != n {
            return Err(Error::invalid("inconsistent plant dimensions"));
        }
        Ok(PlantModel { a, b, c, d, x0 })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.shape().1
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// One step of `x+ = A x + B(k) u`, `y = C x + D u`.
pub fn plant_step(model: &PlantModel, x: &Vector, u: &Vector, k: usize) -> Result<(Vector, Vector)> {
    if x.len() != model.states() || u.len() != model.inputs() {
        return Err(Error::invalid(format!(
            "plant step expects x of length {} and u of length {}, got {} and {}",
            model.states(),
            model.inputs(),
            x.len(),
            u.len()
        )));
    }
    let x_next = &model.a * x + model.b.at(k) * u;
    let y = &model.c * x + &model.d * u;
    if x_next.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::SimulationDiverged { step: k });
    }
    Ok((x_next, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FourTankCase {
    /// `delta(k) = 0.017`
    Constant,
    /// `delta(k) = 0.017 + 1e-5 k`
    Drift,
}

impl FourTankCase {
    pub fn from_index(case: u8) -> Result<Self> {
        match case {
            1 => Ok(FourTankCase::Constant),
            2 => Ok(FourTankCase::Drift),
            other => Err(Error::invalid(format!("four-tank case must be 1 or 2, got {other}"))),
        }
    }

    pub fn index(&self) -> u8 {
        match self {
            FourTankCase::Constant => 1,
            FourTankCase::Drift => 2,
        }
    }
}

/// Linearized four-tank benchmark with the leading input gain `delta(k)`.
pub fn four_tank_model(case: FourTankCase) -> PlantModel {
    #[rustfmt::skip]
    let a = Matrix::from_row_slice(4, 4, &[
        0.921, 0.0,   0.041, 0.0,
        0.0,   0.918, 0.0,   0.033,
        0.0,   0.0,   0.924, 0.0,
        0.0,   0.0,   0.0,   0.937,
    ]);
    #[rustfmt::skip]
    let base = Matrix::from_row_slice(4, 2, &[
        0.017, 0.001,
        0.001, 0.023,
        0.0,   0.061,
        0.072, 0.0,
    ]);
    let b = match case {
        FourTankCase::Constant => InputMatrix::Constant(base),
        FourTankCase::Drift => InputMatrix::LinearDrift {
            base,
            row: 0,
            col: 0,
            start: 0.017,
            rate: 1e-5,
        },
    };
    #[rustfmt::skip]
    let c = Matrix::from_row_slice(2, 4, &[
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
    ]);
    PlantModel {
        a,
        b,
        c,
        d: Matrix::zeros(2, 2),
        x0: Vector::from_column_slice(&[0.4, 0.4, 0.0, 0.0]),
    }
}

/// Map a raw 64-bit draw to `[0, 1)` using its top 53 bits.
pub fn unit_f64(raw: u64) -> f64 {
    (raw >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `len` samples with coordinates drawn i.i.d. uniform over `range`.
///
/// The generator is xoshiro256** seeded through SplitMix64
/// (`Xoshiro256StarStar::seed_from_u64`), so the stream is fully determined by
/// `seed`. Coordinates are drawn sample by sample, coordinate by coordinate,
/// each as `lower + (upper - lower) * unit_f64(next_u64())`.
pub fn initial_excitation(seed: u64, len: usize, range: &BoxSet) -> Result<Signal> {
    range.validate()?;
    if len == 0 {
        return Err(Error::invalid("excitation length must be positive"));
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let dim = range.dim();
    let mut data = Vec::with_capacity(len * dim);
    for _ in 0..len {
        for (lo, hi) in range.lower.iter().zip(&range.upper) {
            data.push(lo + (hi - lo) * unit_f64(rng.next_u64()));
        }
    }
    Signal::new(dim, data)
}
