mod common;

use common::Rng;
use pe_mpc::linalg::{self, Matrix};
use proptest::prelude::*;

const P: u128 = (1 << 61) - 1;

fn to_mod(v: i64) -> u128 {
    (v.rem_euclid(P as i64)) as u128
}

fn pow_mod(mut b: u128, mut e: u128) -> u128 {
    let mut r = 1;
    while e > 0 {
        if e & 1 == 1 {
            r = r * b % P;
        }
        b = b * b % P;
        e >>= 1;
    }
    r
}

/// Rank over GF(p). A lower bound on the rank over the rationals.
fn rank_mod_p(m: &[Vec<i64>]) -> usize {
    let mut a: Vec<Vec<u128>> = m.iter().map(|r| r.iter().map(|&v| to_mod(v)).collect()).collect();
    let (rows, cols) = (a.len(), a[0].len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(piv) = (rank..rows).find(|&r| a[r][c] != 0) else {
            continue;
        };
        a.swap(rank, piv);
        let inv = pow_mod(a[rank][c], P - 2);
        for r in 0..rows {
            if r != rank && a[r][c] != 0 {
                let f = a[r][c] * inv % P;
                for k in c..cols {
                    a[r][k] = (a[r][k] + P - f * a[rank][k] % P) % P;
                }
            }
        }
        rank += 1;
    }
    rank
}

#[test]
fn numerical_rank_matches_exact_integer_rank() {
    let mut rng = Rng::new(2024);
    let mut checked = 0;
    while checked < 200 {
        let rows = 1 + rng.index(20);
        let cols = 1 + rng.index(30);
        let k = 1 + rng.index(rows.min(cols));
        let x: Vec<Vec<i64>> = (0..rows).map(|_| (0..k).map(|_| rng.int(-3, 3)).collect()).collect();
        let y: Vec<Vec<i64>> = (0..k).map(|_| (0..cols).map(|_| rng.int(-3, 3)).collect()).collect();
        let prod: Vec<Vec<i64>> = (0..rows)
            .map(|i| (0..cols).map(|j| (0..k).map(|l| x[i][l] * y[l][j]).sum()).collect())
            .collect();
        // rank(XY) <= k, and the GF(p) rank is a lower bound, so equality pins it
        if rank_mod_p(&prod) != k {
            continue;
        }
        let m = Matrix::from_fn(rows, cols, |i, j| prod[i][j] as f64);
        let r = linalg::numerical_rank(&m, 1e-9).unwrap();
        assert_eq!(r.numerical_rank, k, "{rows}x{cols} of rank {k}");
        checked += 1;
    }
}

#[test]
fn singular_values_descend() {
    let mut rng = Rng::new(5);
    for _ in 0..50 {
        let (r, c) = (1 + rng.index(8), 1 + rng.index(8));
        let m = rng.matrix(r, c, -2.0, 2.0);
        let s = linalg::singular_values(&m).unwrap();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.iter().all(|v| *v >= 0.0));
    }
}

proptest! {
    #[test]
    fn null_vector_is_unit_and_nearly_null(
        rows in 1usize..8,
        cols in 1usize..10,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let m = rng.matrix(rows, cols, -3.0, 3.0);
        let (z, smin) = linalg::left_null_vector(&m).unwrap();
        prop_assert!((z.norm() - 1.0).abs() <= 1e-12);
        prop_assert!((m.transpose() * &z).norm() <= smin + 1e-10);
        let big = z.iter().fold(0.0f64, |b, v| if v.abs() > b.abs() { *v } else { b });
        prop_assert!(big > 0.0);
    }

    #[test]
    fn rank_deficient_products_have_null_vectors(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let rows = 2 + rng.index(6);
        let m = &rng.matrix(rows, rows - 1, -1.0, 1.0) * rng.matrix(rows - 1, rows + 3, -1.0, 1.0);
        let r = linalg::numerical_rank(&m, 1e-9).unwrap();
        prop_assert_eq!(r.numerical_rank, rows - 1);
        let (z, smin) = linalg::left_null_vector(&m).unwrap();
        prop_assert!(smin < 1e-12 * r.sigma_max().max(1.0));
        prop_assert!((m.transpose() * z).amax() < 1e-10);
    }
}
