//! Tariff cost of every prosumer with and without coordination, and the
//! compensation that makes coordination neutral for them.
//!
//! ```text
//! cargo run --release --example cost_compare
//! ```

use gridprice::cli::compare_table;
use gridprice::sim::{replica_scenario, run_day_ahead};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let da = run_day_ahead(&replica_scenario(), true)?;
    let report = &da.outcome.as_ref().expect("coordinated").report;
    let table = compare_table(report);
    println!("{}", table.render(4));
    let with = table.value("total", "with").unwrap_or_default();
    let without = table.value("total", "without").unwrap_or_default();
    println!("coordination costs the prosumers {:.4} CHF in total", with - without);
    Ok(())
}
