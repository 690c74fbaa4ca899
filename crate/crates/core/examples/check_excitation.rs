//! Test a signal for persistency of excitation and show how the rank report
//! exposes a near-miss.

use pe_mpc::hankel::{self, BoxSet, Signal};
use pe_mpc::plant::initial_excitation;

fn main() -> pe_mpc::Result<()> {
    let order = 5;
    let random = initial_excitation(3, hankel::min_pe_length(2, order), &BoxSet::uniform(2, 0.0, 1.0)?)?;
    let (pe, report) = hankel::is_pe(&random, order, 1e-9)?;
    println!("uniform noise, {} samples: PE = {pe}, rank {}", random.len(), report.numerical_rank);
    println!("  sigma range {:.3e} .. {:.3e}", report.sigma_max(), report.sigma_min());

    // a sum of two sinusoids excites at most four directions
    let sines: Vec<f64> = (0..40)
        .map(|k| (0.3 * k as f64).sin() + 0.5 * (1.1 * k as f64).cos())
        .collect();
    let s = Signal::scalar(&sines)?;
    for l in [3, 4, 5, 6] {
        let (pe, r) = hankel::is_pe(&s, l, 1e-9)?;
        println!("two sinusoids, order {l}: PE = {pe}, rank {} of {l}, gap {:.2e}", r.numerical_rank, r.gap());
    }

    let cond = hankel::pe_condition_metric(&random, order)?;
    println!("condition of the newest square block: {cond:.3e}");
    Ok(())
}
