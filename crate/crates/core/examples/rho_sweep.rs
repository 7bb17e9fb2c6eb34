//! Effect of the penalty parameter: coordination at a constant penalty for a
//! fixed number of iterations, and the response to converged signals
//! re-issued with a different penalty.
//!
//! ```text
//! cargo run --release --example rho_sweep
//! ```

use gridprice::cli::{rho_plateau, rho_sweep};
use gridprice::sim::{replica_scenario, run_day_ahead};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = replica_scenario();
    let da = run_day_ahead(&sc, true)?;
    let grid = [0.01, 0.1, 1.0, 10.0, 100.0];

    println!("constant penalty, 80 iterations");
    println!("{:>8} {:>9} {:>9} {:>11} {:>9}", "rho", "max r", "max s", "extra fee", "violation");
    for r in rho_sweep(&sc, &da, &grid, 80)? {
        println!("{:>8} {:>9.1e} {:>9.1e} {:>11.4} {:>9.1e}", r.rho, r.max_r, r.max_s, r.extra_fees, r.max_violation);
    }

    println!("\nconverged signals re-issued");
    println!("{:>8} {:>11} {:>9}", "rho", "cost delta", "violation");
    for r in rho_plateau(&sc, &da, &[1e-3, 0.01, 0.1, 1.0, 10.0, 100.0])? {
        println!("{:>8} {:>11.2e} {:>9.1e}", r.rho, r.cost_change, r.max_violation);
    }
    Ok(())
}
