use proptest::prelude::*;

use super::*;
use crate::qp::QpSettings;

fn table2_bess(soc_init: f64) -> BessSpec {
    BessSpec { s_max_kva: 2.5, capacity_kwh: 2.5, soc_min: 0.1, soc_max: 0.9, soc_init }
}

fn problem(load: &[f64], pv: &[f64], bess: BessSpec, dt_h: f64) -> ProsumerProblem {
    let k = load.len();
    ProsumerProblem::new(
        &[
            Resource::InflexibleLoad { p: load.to_vec(), q: vec![0.0; k] },
            Resource::Bess(bess),
            Resource::CurtailablePv(PvSpec { p_max: pv.to_vec() }),
        ],
        k,
        dt_h,
    )
    .unwrap()
}

fn settings() -> QpSettings {
    QpSettings::default()
}

#[test]
fn box_limit_of_rated_bess() {
    assert!((table2_bess(0.5).box_limit() - 1.767_766_952_966_368_8).abs() < 1e-12);
}

#[test]
fn one_step_full_discharge_soc_delta() {
    let d = table2_bess(0.5).soc_delta(2.5, 1.0 / 6.0);
    assert!((d + 1.0 / 6.0).abs() < 1e-15);
}

#[test]
fn null_schedule_is_feasible() {
    let pr = problem(&[0.0; 3], &[0.0; 3], table2_bess(0.5), 1.0 / 6.0);
    let idle = ResourceSchedule {
        bess: vec![BessTrajectory { p: vec![0.0; 3], q: vec![0.0; 3], soc: vec![0.5; 3] }],
        pv: vec![vec![0.0; 3]],
    };
    pr.check_schedule(&[0.0; 6], &idle, 1e-12).unwrap();
}

#[test]
fn mismatched_series_rejected() {
    let spec = ProsumerSpec {
        name: "a".into(),
        bus: "b".into(),
        bess: Some(table2_bess(0.5)),
        pv_rated_kw: 5.0,
        load_peak_kw: 2.5,
        power_factor: None,
    };
    let err = build_prosumer_problem(&spec, &[1.0; 3], &[1.0; 4], None, 0.5).unwrap_err();
    assert!(matches!(err, ProsumerError::Dimension(_)));
}

#[test]
fn degenerate_signal_equals_local_baseline() {
    let c = tariff_vector(&[0.1, 0.1, 0.3, 0.3], 0.5);
    let pr = problem(&[1.0, 0.5, 2.0, 1.0], &[2.0, 3.0, 0.5, 0.0], table2_bess(0.5), 0.5);
    let a = local_cost_min(&pr, &c, &settings()).unwrap();
    let b = x_update(&pr, &PriceSignal::tariff(&c), &settings()).unwrap();
    assert_eq!(a.x, b.x);
}

#[test]
fn negative_midday_price_charges_battery() {
    let k = 6;
    let mut g = tariff_vector(&[0.2; 6], 1.0 / 6.0);
    g[2 * 3] = -0.5;
    let signal = PriceSignal { h: vec![[0.0; 4]; k], g, f: 0.0, round: 1 };
    let pr = problem(&[0.5; 6], &[1.0; 6], table2_bess(0.5), 1.0 / 6.0);
    let r = x_update(&pr, &signal, &settings()).unwrap();
    let p_b = &r.resources.bess[0].p;
    assert!(p_b[3] < -1.7, "charges at the negative price: {p_b:?}");
}

/// 2-step toy, flat then high price: enumerate the battery grid by hand.
#[test]
fn two_step_schedule_matches_enumeration() {
    let bess = BessSpec { s_max_kva: 2.5, capacity_kwh: 10.0, soc_min: 0.1, soc_max: 0.9, soc_init: 0.1 };
    let prices = [0.1, 0.3];
    let load = [1.0, 1.0];
    let pr = problem(&load, &[0.0, 0.0], bess, 1.0);
    let c = tariff_vector(&prices, 1.0);
    let r = local_cost_min(&pr, &c, &settings()).unwrap();

    let lim = bess.box_limit();
    let n = 200;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for a in 0..=n {
        for b in 0..=n {
            let p1 = -lim + 2.0 * lim * a as f64 / n as f64;
            let p2 = -lim + 2.0 * lim * b as f64 / n as f64;
            let s1 = bess.soc_init - p1 / bess.capacity_kwh;
            let s2 = s1 - p2 / bess.capacity_kwh;
            if !(bess.soc_in_bounds(s1) && bess.soc_in_bounds(s2)) {
                continue;
            }
            let cost = prices[0] * (load[0] - p1) + prices[1] * (load[1] - p2);
            if cost < best.0 - 1e-12 {
                best = (cost, p1, p2);
            }
        }
    }
    let p_b = &r.resources.bess[0].p;
    assert!((p_b[0] - best.1).abs() < 1e-6 && (p_b[1] - best.2).abs() < 1e-6, "{p_b:?} vs {best:?}");
    assert!((p_b[0] + lim).abs() < 1e-6 && (p_b[1] - lim).abs() < 1e-6, "{p_b:?}");
    let cost = crate::qp::dot(&c, &r.x);
    assert!((cost - best.0).abs() < 1e-6);
}

/// Under a flat price only the discharged energy matters, not its timing; the
/// tie-break spreads it evenly (the minimal-norm schedule).
#[test]
fn flat_price_spreads_discharge_evenly() {
    let pr = problem(&[1.0; 4], &[0.5; 4], table2_bess(0.5), 0.5);
    let r = local_cost_min(&pr, &tariff_vector(&[0.2; 4], 0.5), &settings()).unwrap();
    let b = &r.resources.bess[0];
    // (0.5 - 0.1) * 2.5 kWh over 2 h
    assert!(b.p.iter().all(|p| (p - 0.5).abs() < 1e-5), "{:?}", b.p);
    assert!((b.soc[3] - 0.1).abs() < 1e-6);
    assert!(b.q.iter().all(|q| q.abs() < 1e-6));
}

#[test]
fn time_of_use_charges_low_discharges_high() {
    let prices = [0.12, 0.12, 0.12, 0.12, 0.30, 0.30, 0.30, 0.30];
    let pr = problem(&[1.0; 8], &[0.0; 8], table2_bess(0.2), 1.0 / 6.0);
    let r = local_cost_min(&pr, &tariff_vector(&prices, 1.0 / 6.0), &settings()).unwrap();
    let b = &r.resources.bess[0];
    assert!(b.p[..4].iter().sum::<f64>() < -1.0, "{:?}", b.p);
    assert!(b.p[4..].iter().sum::<f64>() > 1.0, "{:?}", b.p);
    pr.check_schedule(&r.x, &r.resources, 1e-9).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pv_never_curtailed_under_nonnegative_prices(
        prices in proptest::collection::vec(0.0f64..0.5, 6),
        pv in proptest::collection::vec(0.0f64..5.0, 6),
        load in proptest::collection::vec(0.0f64..2.5, 6),
    ) {
        let pr = problem(&load, &pv, table2_bess(0.5), 1.0 / 6.0);
        let r = local_cost_min(&pr, &tariff_vector(&prices, 1.0 / 6.0), &settings()).unwrap();
        for (got, max) in r.resources.pv[0].iter().zip(&pv) {
            prop_assert!((got - max).abs() < 1e-5, "curtailed {} of {}", max - got, max);
        }
    }

    #[test]
    fn responses_satisfy_schedule_invariants(
        g in proptest::collection::vec(-1.0f64..1.0, 8),
        h in proptest::collection::vec(0.0f64..0.5, 4),
        soc in 0.1f64..0.9,
    ) {
        let signal = PriceSignal {
            h: h.iter().map(|&d| [d, 0.1 * d, 0.1 * d, d]).collect(),
            g,
            f: 0.0,
            round: 0,
        };
        let pr = problem(&[1.0, 2.0, 0.5, 0.0], &[0.0, 3.0, 5.0, 1.0], table2_bess(soc), 0.25);
        let r = x_update(&pr, &signal, &settings()).unwrap();
        prop_assert!(pr.check_schedule(&r.x, &r.resources, 1e-9).is_ok());
    }
}
