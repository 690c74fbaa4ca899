//! Run excitation-guarded control on the four-tank plant and
//! compare it with the fixed-data baseline.

use std::time::Instant;

use pe_mpc::bench::{metrics, run_closed_loop, Mode};
use pe_mpc::controller::ControllerConfig;
use pe_mpc::hankel::BoxSet;
use pe_mpc::plant::{four_tank_model, FourTankCase};

fn main() -> pe_mpc::Result<()> {
    let eps: f64 = std::env::args().nth(1).map_or(0.05518, |s| s.parse().expect("epsilon"));
    let cfg = ControllerConfig::four_tank(eps);
    let excitation = BoxSet::uniform(2, 0.0, 1.0)?;
    for case in [FourTankCase::Constant, FourTankCase::Drift] {
        let model = four_tank_model(case);
        for mode in [Mode::P0Baseline, Mode::P1Algorithm1] {
            let start = Instant::now();
            let log = run_closed_loop(&model, &cfg, mode, 1, 750, &excitation)?;
            let s = metrics(&log, cfg.y_setpoint.as_slice(), 100)?;
            println!(
                "case {} {}: tracking {:.4} (max {:.4}), pe {:.3}, cond {:.3e}, failure {:?}, {:.1}s",
                case.index(),
                mode.as_str(),
                s.tracking_mean,
                s.tracking_max,
                s.pe_fraction,
                s.cond_mean,
                log.failure,
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
