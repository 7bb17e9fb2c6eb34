//! Voltage sensitivities of the replica feeder and a finite-difference check
//! of one column against the AC power flow.
//!
//! ```text
//! cargo run --example sensitivities
//! ```

use gridprice::grid::{Injections, PowerFlow};
use gridprice::sim::replica_network;

/// Returns the largest deviation between analytic and numerical derivatives.
pub fn run() -> Result<f64, Box<dyn std::error::Error>> {
    let model = replica_network();
    let pf = PowerFlow::new(&model)?;
    let ids: Vec<&str> = model.non_slack().iter().map(|&b| model.buses[b].id.as_str()).collect();
    let n = ids.len();
    let inj = Injections { p: vec![-0.2; n], q: vec![0.02; n] };
    let (s, _) = pf.sensitivities(&inj, 1.0)?;

    let j = ids.iter().position(|&id| id == "N9").expect("N9");
    println!("dV/dp and dV/dq for an extra pu of demand at N9:");
    let h = 1e-6;
    let v_at = |d: f64| -> Result<Vec<f64>, Box<dyn std::error::Error>> {
        let mut i = inj.clone();
        i.p[j] += d;
        let sol = pf.solve(&i, 1.0)?;
        Ok(model.non_slack().iter().map(|&b| sol.v[b]).collect())
    };
    let (vp, vm) = (v_at(h)?, v_at(-h)?);
    let mut worst = 0.0f64;
    for (b, id) in ids.iter().enumerate() {
        let fd = (vp[b] - vm[b]) / (2.0 * h);
        worst = worst.max((fd - s.k_vp[(b, j)]).abs());
        println!("{id:>3}  k_vp {:+.5}  finite diff {fd:+.5}  k_vq {:+.5}", s.k_vp[(b, j)], s.k_vq[(b, j)]);
    }
    println!("slack: dp_s/dp {:+.4}, dq_s/dq {:+.4}", s.k_sp_p[j], s.k_sq_q[j]);
    println!("largest deviation {worst:.2e}");
    Ok(worst)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
