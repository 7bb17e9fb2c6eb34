//! Intra-day re-coordination and the real-time loop around a slack voltage
//! step at 12:30. Realized PV is 90 % of the forecast and loads are noisy.
//!
//! ```text
//! cargo run --release --example closed_loop
//! ```

use gridprice::sim::{replica_scenario, run_day_ahead, run_receding_horizon};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sc = replica_scenario();
    sc.timeline.window_start_s = 11 * 3600;
    sc.timeline.window_end_s = 14 * 3600;

    let da = run_day_ahead(&sc, true)?;
    let log = run_receding_horizon(&sc, &da, true)?;

    println!("cycle  status     iters  compensation");
    for c in &log.cycles {
        let status = c.status.map_or("skipped".to_string(), |s| format!("{s:?}"));
        println!("{:02}:{:02}  {status:<9}  {:>5}  {:>12.4}", c.t_s / 3600, c.t_s % 3600 / 60, c.iterations, c.compensation);
    }
    let n9 = sc.prosumer_index("N9").expect("N9");
    for r in log.rt.iter().filter(|r| r.t_s % 300 == 0) {
        let v = r.v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{:02}:{:02}  max V {v:.4}  N9 pv {:.2}/{:.2} kW  soc {:.3}",
            r.t_s / 3600,
            r.t_s % 3600 / 60,
            r.pv[n9],
            r.pv_potential[n9],
            r.soc[n9]
        );
    }
    for e in &log.events {
        println!("event: {e}");
    }
    println!("trace digest {}", log.digest()?);
    Ok(())
}
