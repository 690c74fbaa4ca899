//! A small seed x epsilon sweep and the condition-number trend it produces.
//!
//! `cargo run --release --example epsilon_sweep -- 3` runs three seeds.

use pe_mpc::bench::{sweep, Mode, SweepSpec};
use pe_mpc::controller::ControllerConfig;
use pe_mpc::hankel::BoxSet;
use pe_mpc::plant::FourTankCase;

fn main() -> pe_mpc::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(2, |s| s.parse().expect("seed count"));
    let spec = SweepSpec {
        case: FourTankCase::Constant,
        mode: Mode::P1Algorithm1,
        seeds: (1..=seeds).collect(),
        epsilons: vec![1e-4, 0.1, 0.3],
        n_s: 750,
        excitation: BoxSet::uniform(2, 0.0, 1.0)?,
        tracking_window: 100,
        keep_logs: false,
    };
    let report = sweep(&ControllerConfig::four_tank(0.0), &spec)?;
    for c in &report.cells {
        println!(
            "seed {} eps {:<6}: tracking {:.4}, PE kept {}, cond mean {:.3e}",
            c.seed,
            c.epsilon,
            c.tracking_mean,
            c.pe_maintained(),
            c.cond_mean
        );
    }
    for t in report.condition_trend() {
        println!("eps {:<6}: cond mean {:.3e} (min {:.3e}, max {:.3e})", t.epsilon, t.cond_mean, t.cond_min, t.cond_max);
    }
    Ok(())
}
