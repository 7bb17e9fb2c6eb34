//! AC power flow on the replica feeder at a sunny noon: every prosumer
//! exports 4 kW of PV minus 1 kW of load.
//!
//! ```text
//! cargo run --example power_flow
//! ```

use gridprice::grid::{Injections, PowerFlow};
use gridprice::sim::replica_network;

pub fn run() -> Result<Vec<f64>, Box<dyn std::error::Error>> {
    let model = replica_network();
    let pf = PowerFlow::new(&model)?;
    let base = model.base;
    let ids: Vec<&str> = model.non_slack().iter().map(|&b| model.buses[b].id.as_str()).collect();

    // Demands in pu; N6 is a junction without a prosumer.
    let p: Vec<f64> = ids.iter().map(|&id| if id == "N6" { 0.0 } else { base.kw_to_pu(-3.0) }).collect();
    let q = vec![0.0; p.len()];
    let sol = pf.solve(&Injections { p, q }, 1.03)?;
    assert!(sol.converged);

    println!("converged in {} iterations, mismatch {:.1e} pu", sol.iterations, sol.max_mismatch);
    for (bus, (v, th)) in model.buses.iter().zip(sol.v.iter().zip(&sol.theta)) {
        println!("{:>3}  |V| {v:.4} pu  angle {:+.3} deg", bus.id, th.to_degrees());
    }
    println!(
        "slack delivers {:.2} kW, {:.2} kvar",
        base.pu_to_kw(sol.p_slack),
        base.pu_to_kw(sol.q_slack)
    );
    Ok(sol.v)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
