//! A single guarded control step on a window of open-loop four-tank data,
//! showing the hyperplane, both branch solves and the applied input.

use pe_mpc::controller::{controller_step, ControllerConfig, DataWindow};
use pe_mpc::hankel::{BoxSet, Signal};
use pe_mpc::linalg::Vector;
use pe_mpc::plant::{four_tank_model, initial_excitation, plant_step, FourTankCase};

fn main() -> pe_mpc::Result<()> {
    let cfg = ControllerConfig::four_tank(0.3);
    let model = four_tank_model(FourTankCase::Constant);
    let u = initial_excitation(1, cfg.data_length, &BoxSet::uniform(2, 0.0, 1.0)?)?;
    let mut x = model.x0.clone();
    let mut y = Signal::empty(2);
    for (k, uk) in u.samples().enumerate() {
        let (xn, yk) = plant_step(&model, &x, &Vector::from_column_slice(uk), k + 1)?;
        y.push(yk.as_slice())?;
        x = xn;
    }
    let window = DataWindow::new(u, y)?;
    let (u_k, diag) = controller_step(&cfg, &window, cfg.data_length + 1)?;
    println!("geometry {} (rank {})", diag.geometry.status.as_str(), diag.geometry.rank_found);
    if let Some((a, c)) = &diag.hyperplane {
        println!("guarded hyperplane a = [{:.4}, {:.4}], c = {:.4}, meets box: {:?}", a[0], a[1], c, diag.intersects);
    }
    for att in &diag.outcome.per_branch {
        println!(
            "  {:<13} eps {:<6} {:<10} cost {:.6} ({} iterations)",
            att.choice.as_str(),
            att.epsilon,
            att.status.as_str(),
            att.cost,
            att.iterations
        );
    }
    println!("chose {}, u_k = [{:.4}, {:.4}]", diag.outcome.chosen.as_str(), u_k[0], u_k[1]);
    if let Some(pair) = &diag.outcome.half_spaces {
        println!("distance margin: level {:.4} vs required {:.4}", pair.level(u_k.as_slice()), pair.margin);
    }
    let layout = diag.outcome.instance.layout;
    println!(
        "decision vector: {} entries (u_bar {}, y_bar {}, alpha {}, sigma {}), {} solved after elimination",
        layout.full_len(),
        layout.u_bar.1,
        layout.y_bar.1,
        layout.alpha.1,
        layout.sigma.1,
        layout.reduced_len()
    );
    Ok(())
}
