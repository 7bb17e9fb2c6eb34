use std::fs;
use std::path::Path;

use gridprice::sim::{replica_scenario, write_replica_fixture, Scenario};

fn dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/replica"))
}

#[test]
fn file_scenario_equals_the_builtin_replica() {
    assert_eq!(Scenario::load(dir().join("scenario.json")).unwrap(), replica_scenario());
}

#[test]
fn synthetic_scenario_equals_the_builtin_replica() {
    assert_eq!(Scenario::load(dir().join("synthetic.json")).unwrap(), replica_scenario());
}

#[test]
fn committed_fixture_is_up_to_date() {
    let tmp = tempfile::tempdir().unwrap();
    write_replica_fixture(tmp.path()).unwrap();
    for name in ["network.json", "scenario.json", "synthetic.json", "tariff.csv", "series.csv"] {
        assert!(fs::read(tmp.path().join(name)).unwrap() == fs::read(dir().join(name)).unwrap(), "{name} differs; run the generate_replica example");
    }
}
