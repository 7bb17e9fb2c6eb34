//! Environment overrides live in their own test binary: the variables are
//! process-wide and would leak into concurrently running tests.

use std::path::Path;

use clap::Parser;
use gridprice::cli::{Cli, RunConfig};

#[test]
fn environment_variables_set_flags_and_flags_win() {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/replica/scenario.json");
    std::env::set_var("GRIDPRICE_SCENARIO", &scenario);
    std::env::set_var("GRIDPRICE_MAX_ITER", "77");
    std::env::set_var("GRIDPRICE_TOL_ABS", "1e-6");

    let cli = Cli::try_parse_from(["gridprice", "dayahead", "--tol-abs", "1e-7"]).unwrap();
    let config = RunConfig::resolve(cli.command, &cli.args).unwrap();
    assert_eq!(config.scenario, scenario);
    assert_eq!(config.overrides.max_iter, Some(77));
    assert_eq!(config.overrides.tol_abs, Some(1e-7));

    let sc = config.load_scenario().unwrap();
    assert_eq!(sc.admm.max_iter, 77);
    assert_eq!(sc.admm.eps_abs, 1e-7);
}
