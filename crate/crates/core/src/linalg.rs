//! Dense rank, null-space and conditioning primitives.
//!
//! Everything here is a thin layer over the nalgebra SVD. Singular values are
//! always reported in descending order, and null vectors carry a fixed sign so
//! that repeated calls are bitwise reproducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative rank tolerance.
pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// Smallest singular value treated as nonzero by [`condition_number`].
pub const SINGULAR_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub numerical_rank: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub tolerance_used: f64,
}

impl RankReport {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn sigma_min(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    /// Ratio between the last retained singular value and the first discarded
    /// one. Infinite when nothing was discarded or the discarded value is 0.
    pub fn gap(&self) -> f64 {
        let r = self.numerical_rank;
        if r == 0 || r >= self.singular_values.len() {
            return f64::INFINITY;
        }
        let below = self.singular_values[r];
        if below <= 0.0 {
            f64::INFINITY
        } else {
            self.singular_values[r - 1] / below
        }
    }
}

pub(crate) fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::invalid(format!("{what}: empty matrix")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what}: non-finite entry")));
    }
    Ok(())
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    ensure_finite(m, "singular_values")?;
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Rank counted against `rel_tol * sigma_max` (or `rel_tol` itself when the
/// matrix is zero).
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> Result<RankReport> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::invalid(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    let singular_values = singular_values(m)?;
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let tolerance_used = if sigma_max > 0.0 { rel_tol * sigma_max } else { rel_tol };
    let numerical_rank = singular_values.iter().filter(|&&s| s > tolerance_used).count();
    Ok(RankReport {
        numerical_rank,
        singular_values,
        tolerance_used,
    })
}

/// Unit left singular vector for the smallest singular value of `m`, with the
/// largest-magnitude entry made positive. Tall matrices are zero-padded to
/// square first, so a genuine left null direction is always reachable.
pub fn left_null_vector(m: &Matrix) -> Result<(Vector, f64)> {
    ensure_finite(m, "left_null_vector")?;
    let rows = m.nrows();
    let padded;
    let work = if m.ncols() < rows {
        let mut p = Matrix::zeros(rows, rows);
        p.view_mut((0, 0), (rows, m.ncols())).copy_from(m);
        padded = p;
        &padded
    } else {
        m
    };
    let svd = work.clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::invalid("SVD did not produce left singular vectors"))?;
    let (idx, sigma_min) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, s)| if s < best.1 { (i, s) } else { best });
    let mut z: Vector = u.column(idx).into_owned();
    let norm = z.norm();
    if norm > 0.0 {
        z /= norm;
    }
    fix_sign(&mut z);
    Ok((z, sigma_min))
}

/// Flip `z` so its largest-magnitude entry (first one on ties) is positive.
pub fn fix_sign(z: &mut Vector) {
    let mut pivot = 0;
    let mut best = -1.0;
    for (i, v) in z.iter().enumerate() {
        if v.abs() > best {
            best = v.abs();
            pivot = i;
        }
    }
    if z.len() > 0 && z[pivot] < 0.0 {
        z.neg_mut();
    }
}

/// `sigma_max / sigma_min` of a square matrix, `f64::INFINITY` when
/// `sigma_min` falls below [`SINGULAR_FLOOR`].
pub fn condition_number(m: &Matrix) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "condition_number needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let s = singular_values(m)?;
    let smax = s[0];
    let smin = *s.last().unwrap();
    if smin < SINGULAR_FLOOR {
        Ok(f64::INFINITY)
    } else {
        Ok(smax / smin)
    }
}
