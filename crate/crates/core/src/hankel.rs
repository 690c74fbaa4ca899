//! Hankel matrices of input signals, persistence-of-excitation tests and the
//! geometry of the nonexciting input set.
//!
//! For a window `u_{[k-T+1,k]}` the depth-`L` Hankel matrix splits as
//!
//! ```text
//!     [ H11  H12 ]
//!     [ H21  u_k ]
//! ```
//!
//! where only the bottom-right block depends on the next input `u_k`. When the
//! stacked column block `[H11; H21]` has a one-dimensional left null space
//! spanned by `z = (b, a)`, every `u_k` on the hyperplane `a'u + c = 0` with
//! `c = b' H12` destroys full row rank; any other choice keeps it.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, RankReport, Vector};

/// Time-ordered vector samples, oldest first, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    dim: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("signal dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "signal data length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("signal contains non-finite samples"));
        }
        Ok(Signal { dim, data })
    }

    pub fn from_samples<S: AsRef<[f64]>>(dim: usize, samples: &[S]) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * samples.len());
        for (i, s) in samples.iter().enumerate() {
            let s = s.as_ref();
            if s.len() != dim {
                return Err(Error::invalid(format!(
                    "sample {i} has length {}, expected {dim}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        Signal::new(dim, data)
    }

    /// Scalar signal.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Signal::new(1, values.to_vec())
    }

    pub fn empty(dim: usize) -> Self {
        Signal { dim, data: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Samples `start..start+len` as a new signal.
    pub fn window(&self, start: usize, len: usize) -> Signal {
        Signal {
            dim: self.dim,
            data: self.data[start * self.dim..(start + len) * self.dim].to_vec(),
        }
    }

    /// The last `len` samples.
    pub fn tail(&self, len: usize) -> Signal {
        self.window(self.len() - len, len)
    }

    /// Stacked column vector of all samples.
    pub fn stacked(&self) -> Vector {
        Vector::from_column_slice(&self.data)
    }

    pub fn push(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.dim {
            return Err(Error::invalid(format!(
                "sample length {} does not match signal dim {}",
                sample.len(),
                self.dim
            )));
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        self.data.extend_from_slice(sample);
        Ok(())
    }

    /// Drop the oldest sample and append `sample`; length is unchanged.
    pub fn slide(&mut self, sample: &[f64]) -> Result<()> {
        self.push(sample)?;
        self.data.drain(..self.dim);
        Ok(())
    }
}

/// Depth-`depth` block Hankel matrix: block `(i, j)` is sample `i + j`.
pub fn build_hankel(u: &Signal, depth: usize) -> Result<Matrix> {
    let t = u.len();
    if depth == 0 {
        return Err(Error::invalid("Hankel depth must be positive"));
    }
    if t < depth {
        return Err(Error::WindowTooShort { needed: depth, got: t });
    }
    let m = u.dim();
    let cols = t - depth + 1;
    Ok(Matrix::from_fn(m * depth, cols, |r, c| {
        let (block, coord) = (r / m, r % m);
        u.sample(block + c)[coord]
    }))
}

/// Partition of the depth-`L` Hankel matrix of `[window, u_k]` into the
/// blocks that do not depend on the next input `u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlocks {
    /// `m(L-1) x (T-L)`
    pub h11: Matrix,
    /// `m(L-1) x 1`
    pub h12: Matrix,
    /// `m x (T-L)`
    pub h21: Matrix,
    pub depth: usize,
    pub dim: usize,
}

impl HankelBlocks {
    /// `[h11; h21]`, the columns shared with the previous step's Hankel matrix.
    pub fn stacked_columns(&self) -> Matrix {
        let rows = self.h11.nrows() + self.h21.nrows();
        let mut out = Matrix::zeros(rows, self.h11.ncols());
        out.rows_mut(0, self.h11.nrows()).copy_from(&self.h11);
        out.rows_mut(self.h11.nrows(), self.h21.nrows()).copy_from(&self.h21);
        out
    }

    /// `[h11, h12]`, the rows shared with the previous step's Hankel matrix.
    pub fn stacked_rows(&self) -> Matrix {
        let cols = self.h11.ncols() + 1;
        let mut out = Matrix::zeros(self.h11.nrows(), cols);
        out.columns_mut(0, self.h11.ncols()).copy_from(&self.h11);
        out.column_mut(cols - 1).copy_from(&self.h12.column(0));
        out
    }

    /// The full Hankel matrix obtained by choosing `u_k`.
    pub fn complete(&self, u_k: &[f64]) -> Result<Matrix> {
        if u_k.len() != self.dim {
            return Err(Error::invalid(format!(
                "candidate input has length {}, expected {}",
                u_k.len(),
                self.dim
            )));
        }
        let top = self.h11.nrows();
        let cols = self.h11.ncols() + 1;
        let mut out = Matrix::zeros(top + self.dim, cols);
        out.view_mut((0, 0), (top, cols - 1)).copy_from(&self.h11);
        out.view_mut((0, cols - 1), (top, 1)).copy_from(&self.h12);
        out.view_mut((top, 0), (self.dim, cols - 1)).copy_from(&self.h21);
        for (i, v) in u_k.iter().enumerate() {
            out[(top + i, cols - 1)] = *v;
        }
        Ok(out)
    }
}

/// Blocks of the depth-`depth` Hankel matrix of `window` extended by one
/// not-yet-chosen sample. `window` holds the `T-1` samples before `u_k`.
pub fn hankel_blocks(window: &Signal, depth: usize) -> Result<HankelBlocks> {
    if depth == 0 {
        return Err(Error::invalid("Hankel depth must be positive"));
    }
    if window.len() < depth {
        return Err(Error::WindowTooShort {
            needed: depth,
            got: window.len(),
        });
    }
    let m = window.dim();
    let t_minus_one = window.len();
    let cols = t_minus_one + 1 - depth; // T - L
    let top = m * (depth - 1);
    let h11 = Matrix::from_fn(top, cols, |r, c| window.sample(r / m + c)[r % m]);
    let h12 = Matrix::from_fn(top, 1, |r, _| window.sample(r / m + cols)[r % m]);
    let h21 = Matrix::from_fn(m, cols, |r, c| window.sample(depth - 1 + c)[r]);
    Ok(HankelBlocks {
        h11,
        h12,
        h21,
        depth,
        dim: m,
    })
}

/// Minimum number of samples for an order-`depth` PE test on a `dim`-input
/// signal (the Hankel matrix must have at least as many columns as rows).
pub fn min_pe_length(dim: usize, depth: usize) -> usize {
    (dim + 1) * depth - 1
}

/// Rank-based persistence of excitation of order `depth`.
pub fn is_pe(u: &Signal, depth: usize, rel_tol: f64) -> Result<(bool, RankReport)> {
    let required = min_pe_length(u.dim(), depth);
    if u.len() < required {
        return Err(Error::PeImpossible {
            order: depth,
            dim: u.dim(),
            required,
            got: u.len(),
        });
    }
    let report = linalg::numerical_rank(&build_hankel(u, depth)?, rel_tol)?;
    Ok((report.numerical_rank == u.dim() * depth, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryStatus {
    /// `[H11; H21]` already has full row rank; every `u_k` keeps excitation.
    FullRank,
    /// Nonexciting inputs form the hyperplane `a'u + c = 0`.
    Hyperplane,
    /// Rank dropped by more than one; the window was not exciting before.
    Deficient,
}

impl GeometryStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            GeometryStatus::FullRank => "full_rank",
            GeometryStatus::Hyperplane => "hyperplane",
            GeometryStatus::Deficient => "deficient",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationGeometry {
    pub status: GeometryStatus,
    /// Normal of the nonexciting hyperplane (present iff `Hyperplane`).
    pub a: Option<Vector>,
    pub c: Option<f64>,
    /// Full unit null vector `(b, a)` (present iff `Hyperplane`).
    pub z: Option<Vector>,
    pub sigma_min: f64,
    pub rank_found: usize,
    pub rank_report: RankReport,
}

impl ExcitationGeometry {
    pub fn hyperplane(&self) -> Option<(&Vector, f64)> {
        match (&self.a, self.c) {
            (Some(a), Some(c)) => Some((a, c)),
            _ => None,
        }
    }
}

/// Classify the nonexciting input set for the next sample.
pub fn excitation_geometry(blocks: &HankelBlocks, rel_tol: f64) -> Result<ExcitationGeometry> {
    let m = blocks.dim;
    let full = m * blocks.depth;
    let stacked = blocks.stacked_columns();
    let report = linalg::numerical_rank(&stacked, rel_tol)?;
    let rank_found = report.numerical_rank;
    if rank_found == full {
        return Ok(ExcitationGeometry {
            status: GeometryStatus::FullRank,
            a: None,
            c: None,
            z: None,
            sigma_min: report.sigma_min(),
            rank_found,
            rank_report: report,
        });
    }
    if rank_found + 1 < full {
        return Ok(ExcitationGeometry {
            status: GeometryStatus::Deficient,
            a: None,
            c: None,
            z: None,
            sigma_min: if stacked.ncols() < full { 0.0 } else { report.sigma_min() },
            rank_found,
            rank_report: report,
        });
    }
    let (a, c, z, sigma_min) = split_direction(blocks, &stacked)?;
    Ok(ExcitationGeometry {
        status: GeometryStatus::Hyperplane,
        a: Some(a),
        c: Some(c),
        z: Some(z),
        sigma_min,
        rank_found,
        rank_report: report,
    })
}

fn split_direction(blocks: &HankelBlocks, stacked: &Matrix) -> Result<(Vector, f64, Vector, f64)> {
    let (z, sigma_min) = linalg::left_null_vector(stacked)?;
    let split = blocks.dim * (blocks.depth - 1);
    let a: Vector = z.rows(split, blocks.dim).into_owned();
    let c = z.rows(0, split).dot(&blocks.h12.column(0));
    Ok((a, c, z, sigma_min))
}

/// Hyperplane `a'u + c = 0` built from the weakest left singular direction
/// `z = (b, a)` of `[H11; H21]`, whatever its rank. When the rank is `mL - 1`
/// this is exactly the nonexciting set; when it is full, inputs on this
/// hyperplane are the ones that add the least excitation along `z`.
///
/// Returns `(a, c, z, sigma_min)`.
pub fn weakest_hyperplane(blocks: &HankelBlocks) -> Result<(Vector, f64, Vector, f64)> {
    split_direction(blocks, &blocks.stacked_columns())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `a'u + c >= +margin`, binary `v = 0`.
    Up,
    /// `a'u + c <= -margin`, binary `v = 1`.
    Down,
}

impl Branch {
    pub fn binary(&self) -> u8 {
        match self {
            Branch::Up => 0,
            Branch::Down => 1,
        }
    }
}

/// The two disjoint half-spaces that keep `u_k` at least `epsilon` away from
/// the nonexciting hyperplane.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpacePair {
    pub a: Vector,
    pub c: f64,
    /// `||a|| * epsilon`
    pub margin: f64,
}

impl HalfSpacePair {
    /// Signed value `a'u + c`.
    pub fn level(&self, u: &[f64]) -> f64 {
        self.a.iter().zip(u).map(|(a, u)| a * u).sum::<f64>() + self.c
    }

    pub fn contains(&self, branch: Branch, u: &[f64]) -> bool {
        let v = self.level(u);
        match branch {
            Branch::Up => v >= self.margin,
            Branch::Down => v <= -self.margin,
        }
    }

    /// Row `g` and bound `h` such that the branch reads `g'u <= h`.
    pub fn as_leq(&self, branch: Branch) -> (Vector, f64) {
        match branch {
            Branch::Up => (-self.a.clone(), self.c - self.margin),
            Branch::Down => (self.a.clone(), -self.margin - self.c),
        }
    }
}

impl HalfSpacePair {
    pub fn new(a: Vector, c: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        let margin = a.norm() * epsilon;
        Ok(HalfSpacePair { a, c, margin })
    }
}

pub fn pe_constraint_pair(geometry: &ExcitationGeometry, epsilon: f64) -> Result<HalfSpacePair> {
    let (a, c) = geometry.hyperplane().ok_or_else(|| {
        Error::Misuse(format!(
            "PE constraints need a hyperplane geometry, got {}",
            geometry.status.as_str()
        ))
    })?;
    HalfSpacePair::new(a.clone(), c, epsilon)
}

/// Per-coordinate interval `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = BoxSet { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        BoxSet::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::invalid("box bounds must be nonempty and of equal length"));
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::invalid(format!("empty box in coordinate {i}: [{l}, {u}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }
}

/// Straddle slack below which the hyperplane is reported as touching the box.
pub const TANGENCY_TOL: f64 = 1e-12;

/// Whether the nonexciting hyperplane meets the input box, i.e. whether
/// `min |a'u + c|` over the box is zero. Solved by interval arithmetic.
pub fn intersects_input_set(geometry: &ExcitationGeometry, input_box: &BoxSet) -> Result<bool> {
    input_box.validate()?;
    let (a, c) = geometry.hyperplane().ok_or_else(|| {
        Error::Misuse(format!(
            "intersection check needs a hyperplane geometry, got {}",
            geometry.status.as_str()
        ))
    })?;
    if a.len() != input_box.dim() {
        return Err(Error::invalid(format!(
            "hyperplane dim {} does not match box dim {}",
            a.len(),
            input_box.dim()
        )));
    }
    Ok(hyperplane_meets_box(a.as_slice(), c, input_box))
}

pub(crate) fn hyperplane_meets_box(a: &[f64], c: f64, input_box: &BoxSet) -> bool {
    let (mut lo, mut hi) = (c, c);
    for (ai, (l, u)) in a.iter().zip(input_box.lower.iter().zip(&input_box.upper)) {
        if *ai >= 0.0 {
            lo += ai * l;
            hi += ai * u;
        } else {
            lo += ai * u;
            hi += ai * l;
        }
    }
    lo <= TANGENCY_TOL && hi >= -TANGENCY_TOL
}

/// Condition number of the square block formed by all `mL` rows and the last
/// `mL` columns of the depth-`depth` Hankel matrix of `u`.
pub fn pe_condition_metric(u: &Signal, depth: usize) -> Result<f64> {
    let h = build_hankel(u, depth)?;
    let rows = h.nrows();
    if h.ncols() < rows {
        return Err(Error::WindowTooShort {
            needed: min_pe_length(u.dim(), depth),
            got: u.len(),
        });
    }
    let sub = h.columns(h.ncols() - rows, rows).into_owned();
    linalg::condition_number(&sub)
}
