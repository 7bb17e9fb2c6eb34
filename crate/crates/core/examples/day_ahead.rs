//! Day-ahead planning on the replica, first with every prosumer minimizing
//! its tariff alone, then coordinated by the DSO through price signals.
//!
//! ```text
//! cargo run --release --example day_ahead
//! ```

use gridprice::sim::{replica_scenario, run_day_ahead};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = replica_scenario();
    let bus_ids: Vec<&str> = sc.network.buses.iter().map(|b| b.id.as_str()).collect();

    for coordination in [false, true] {
        let da = run_day_ahead(&sc, coordination)?;
        let violations = da.check.voltage_violations(&sc.limits, 0.0);
        println!(
            "{}: V in [{:.4}, {:.4}] pu, {} samples above {} pu, max |q_slack| {:.3} pu",
            if coordination { "coordinated" } else { "tariff only" },
            da.check.min_v(),
            da.check.max_v(),
            violations.len(),
            sc.limits.v_max,
            da.check.max_abs_q_slack()
        );
        if let Some(&(t, b, v)) = violations.iter().max_by(|a, b| a.2.total_cmp(&b.2)) {
            let s = t as u32 * sc.timeline.dt_plan_s;
            println!("  worst: {v:.4} pu at {} ({:02}:{:02})", bus_ids[b], s / 3600, s % 3600 / 60);
        }
        if let Some(o) = &da.outcome {
            let r = &o.report;
            println!(
                "  {:?} after {} iterations, {} re-linearizations, residuals r {:.1e} s {:.1e}",
                r.status, r.iterations, r.relinearizations, r.max_r, r.max_s
            );
            for (i, name) in r.names.iter().enumerate() {
                let pv: f64 = (0..da.inputs.steps()).map(|t| da.inputs.pv[i][t] - da.schedules[i].resources.total_pv(t)).sum();
                println!("  {name}: curtailed {:.2} kWh, compensation {:.4} CHF", pv * sc.timeline.dt_plan_h(), r.compensation[i]);
            }
        }
    }
    Ok(())
}
