//! How a prosumer reacts to a price signal. The same household is scheduled
//! once against the plain time-of-use tariff and once with a grid price added
//! at midday, which makes exporting PV at that time costly.
//!
//! ```text
//! cargo run --example price_signal
//! ```

use gridprice::prosumer::{build_prosumer_problem, local_cost_min, tariff_vector, x_update, PriceSignal};
use gridprice::qp::QpSettings;
use gridprice::sim::replica_prosumers;

/// Returns the exported energy (kWh, positive) without and with the grid
/// price.
pub fn run() -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let spec = &replica_prosumers()[4];
    let dt_h = 1.0;
    let hours: Vec<f64> = (6..20).map(f64::from).collect();
    let pv: Vec<f64> = hours.iter().map(|h| (5.0 * (std::f64::consts::PI * (h - 6.0) / 14.0).sin()).max(0.0)).collect();
    let load = vec![1.0; hours.len()];
    let prices: Vec<f64> = hours.iter().map(|&h| if h >= 17.0 { 0.30 } else { 0.12 }).collect();
    let problem = build_prosumer_problem(spec, &load, &pv, None, dt_h)?;
    let c = tariff_vector(&prices, dt_h);
    let settings = QpSettings::default();

    let plain = local_cost_min(&problem, &c, &settings)?;
    // A grid price of 0.2 CHF/kWh on injections from 11:00 to 15:00: export
    // now costs more than it earns, so PV is stored or curtailed instead.
    let mut signal = PriceSignal::tariff(&c);
    for (t, h) in hours.iter().enumerate() {
        if (11.0..15.0).contains(h) {
            signal.g[2 * t] -= 0.2 * dt_h;
        }
    }
    let priced = x_update(&problem, &signal, &settings)?;

    println!("hour   pv    p (tariff)  p (grid price)  soc (tariff)  soc (grid price)");
    for (t, h) in hours.iter().enumerate() {
        let soc = |r: &gridprice::prosumer::ProsumerResponse| r.resources.bess[0].soc[t];
        println!(
            "{h:>4}  {:>4.2}  {:>10.3}  {:>14.3}  {:>12.3}  {:>16.3}",
            pv[t],
            plain.x[2 * t],
            priced.x[2 * t],
            soc(&plain),
            soc(&priced)
        );
    }
    let export = |x: &[f64]| -x.iter().step_by(2).filter(|p| **p < 0.0).sum::<f64>() * dt_h;
    let (a, b) = (export(&plain.x), export(&priced.x));
    println!("export {a:.2} kWh with the tariff, {b:.2} kWh with the grid price");
    Ok((a, b))
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
