//! Locate the inputs that would make a minimal-length window lose
//! excitation, and confirm the rank drop by appending them.

use pe_mpc::hankel::{self, BoxSet, GeometryStatus, Signal};
use pe_mpc::linalg;
use pe_mpc::plant::initial_excitation;

fn main() -> pe_mpc::Result<()> {
    let (m, l) = (2, 4);
    // T = (m+1)L - 1 is the shortest window that can be exciting; the
    // T-1 samples before u_k then leave exactly one direction to fill.
    let t = hankel::min_pe_length(m, l);
    let past = initial_excitation(11, t - 1, &BoxSet::uniform(m, -1.0, 1.0)?)?;
    let blocks = hankel::hankel_blocks(&past, l)?;
    let geom = hankel::excitation_geometry(&blocks, 1e-9)?;
    assert_eq!(geom.status, GeometryStatus::Hyperplane);
    let (a, c) = geom.hyperplane().expect("hyperplane");
    println!("nonexciting set: {:.6} u1 + {:.6} u2 + {:.6} = 0", a[0], a[1], c);

    let input_box = BoxSet::uniform(m, -1.0, 1.5)?;
    println!("meets [-1, 1.5]^2: {}", hankel::intersects_input_set(&geom, &input_box)?);

    let append = |u: [f64; 2]| -> pe_mpc::Result<usize> {
        let mut w: Signal = past.clone();
        w.push(&u)?;
        Ok(linalg::numerical_rank(&hankel::build_hankel(&w, l)?, 1e-9)?.numerical_rank)
    };
    // a point on the hyperplane and one pushed off it by epsilon
    let on = [-(c + a[1] * 0.2) / a[0], 0.2];
    let pair = hankel::pe_constraint_pair(&geom, 0.05)?;
    let off = [on[0] + 0.05 * a[0] / a.norm(), on[1] + 0.05 * a[1] / a.norm()];
    println!("u_k on the hyperplane  -> rank {} of {}", append(on)?, m * l);
    println!(
        "u_k 0.05 off the plane -> rank {} (level {:.4}, margin {:.4})",
        append(off)?,
        pair.level(&off),
        pair.margin
    );
    Ok(())
}
