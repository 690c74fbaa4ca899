//! Solve a small convex QP and certify it with KKT residuals.

use pe_mpc::linalg::{Matrix, Vector};
use pe_mpc::qp::{kkt_residuals, solve_qp, QpInstance, QpSettings};

fn main() -> pe_mpc::Result<()> {
    // min (z1-1)^2 + (z2-2)^2  s.t.  z1 + z2 = 2,  z1 <= 0.25
    let p = Matrix::identity(2, 2) * 2.0;
    let q = Vector::from_column_slice(&[-2.0, -4.0]);
    let a = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let b = Vector::from_column_slice(&[2.0]);
    let g = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let h = Vector::from_column_slice(&[0.25]);
    let qp = QpInstance::new(p, q, a, b, g, h)?;
    let sol = solve_qp(&qp, &QpSettings::default())?;
    println!("status {}, z = [{:.6}, {:.6}], cost {:.6}", sol.status.as_str(), sol.z[0], sol.z[1], sol.cost);
    println!("active inequalities {:?}, multipliers {:?}", sol.active_inequalities, sol.ineq_multipliers.as_slice());
    let r = kkt_residuals(&qp, &sol);
    println!("KKT residuals: primal {:.1e}, dual {:.1e}, comp {:.1e}", r.primal, r.dual, r.comp);

    // an empty feasible set is reported, not hidden
    let bad = qp.with_inequality(&Vector::from_column_slice(&[-1.0, 0.0]), -1.0)?;
    println!("with z1 >= 1 added: {}", solve_qp(&bad, &QpSettings::default())?.status.as_str());
    Ok(())
}
