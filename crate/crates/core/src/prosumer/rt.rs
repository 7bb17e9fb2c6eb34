use super::{BessSpec, ProsumerError};
use crate::qp::{solve_qp, QpSettings, QuadraticProgram, SparseMatrix};

/// Inputs of one real-time control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtInput {
    pub soc: f64,
    /// Demand targets from the last MPC cycle, kW / kvar.
    pub p_target: f64,
    pub q_target: f64,
    /// Short-term forecasts for the next step.
    pub load_p: f64,
    pub load_q: f64,
    pub pv_potential: f64,
    /// Fraction of the PV potential curtailed by the MPC, in `[0, 1]`.
    pub curtailment: f64,
    pub dt_h: f64,
}

impl RtInput {
    /// PV output implied by the curtailment fraction.
    pub fn pv_output(&self) -> f64 {
        self.pv_potential * (1.0 - self.curtailment.clamp(0.0, 1.0))
    }
}

/// BESS setpoint `(p_b, q_b)` that tracks the demand target as closely as the
/// box and one-step SoC limits allow.
pub fn rt_control(bess: &BessSpec, input: &RtInput, settings: &QpSettings) -> Result<(f64, f64), ProsumerError> {
    if !bess.soc_in_bounds(input.soc) {
        return Err(ProsumerError::StateOutOfBounds(input.soc));
    }
    // demand = load - pv - p_b, so the unconstrained optimum is p_b = load - pv - target
    let p_free = input.load_p - input.pv_output() - input.p_target;
    let q_free = input.load_q - input.q_target;
    let lim = bess.box_limit();
    let k = input.dt_h / bess.capacity_kwh;
    let mut qp = QuadraticProgram::new(2);
    qp.p = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 2.0), (1, 1, 2.0)]);
    qp.q = vec![-2.0 * p_free, -2.0 * q_free];
    qp.lower = vec![-lim; 2];
    qp.upper = vec![lim; 2];
    // soc_min <= soc - k p_b <= soc_max
    qp.a_in = SparseMatrix::from_triplets(2, 2, vec![(0, 0, k), (1, 0, -k)]);
    qp.b_in = vec![(input.soc - bess.soc_min).max(0.0), (bess.soc_max - input.soc).max(0.0)];
    let sol = solve_qp(&qp, settings)?;
    if !sol.is_optimal() {
        return Err(ProsumerError::NotOptimal(sol.status));
    }
    // Pull round-off back inside the feasible interval so the SoC never drifts out.
    let p_hi = lim.min((input.soc - bess.soc_min).max(0.0) / k);
    let p_lo = (-lim).max(-(bess.soc_max - input.soc).max(0.0) / k);
    Ok((sol.u[0].clamp(p_lo, p_hi), sol.u[1].clamp(-lim, lim)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bess() -> BessSpec {
        BessSpec { s_max_kva: 2.5, capacity_kwh: 2.5, soc_min: 0.1, soc_max: 0.9, soc_init: 0.5 }
    }

    fn input(soc: f64, p_target: f64) -> RtInput {
        RtInput {
            soc,
            p_target,
            q_target: 0.0,
            load_p: 1.0,
            load_q: 0.0,
            pv_potential: 3.0,
            curtailment: 0.0,
            dt_h: 30.0 / 3600.0,
        }
    }

    /// Closed form: clamp the unconstrained optimum to the feasible interval.
    fn clamp_oracle(b: &BessSpec, i: &RtInput) -> (f64, f64) {
        let lim = b.box_limit();
        let k = i.dt_h / b.capacity_kwh;
        let hi = lim.min((i.soc - b.soc_min) / k);
        let lo = (-lim).max(-(b.soc_max - i.soc) / k);
        let p = (i.load_p - i.pv_output() - i.p_target).clamp(lo, hi);
        (p, (i.load_q - i.q_target).clamp(-lim, lim))
    }

    #[test]
    fn on_target_stays_idle() {
        let (p, q) = rt_control(&bess(), &input(0.5, -2.0), &QpSettings::default()).unwrap();
        assert!(p.abs() < 1e-8 && q.abs() < 1e-8);
    }

    #[test]
    fn saturates_at_box() {
        let (p, _) = rt_control(&bess(), &input(0.5, -10.0), &QpSettings::default()).unwrap();
        assert!((p - bess().box_limit()).abs() < 1e-8);
    }

    #[test]
    fn full_battery_refuses_charge() {
        // target demands charging (more consumption) but SoC sits at soc_max
        let (p, _) = rt_control(&bess(), &input(0.9, 0.0), &QpSettings::default()).unwrap();
        assert!(p >= 0.0 && p < 1e-8);
    }

    #[test]
    fn out_of_bounds_state_rejected() {
        let err = rt_control(&bess(), &input(0.95, 0.0), &QpSettings::default()).unwrap_err();
        assert!(err.to_string().contains("state out of bounds"));
    }

    #[test]
    fn matches_clamp_oracle() {
        let b = bess();
        for soc in [0.1, 0.1001, 0.3, 0.8999, 0.9] {
            for target in [-6.0, -3.0, -2.0, -1.0, 0.0, 2.0] {
                for q_target in [-3.0, 0.5, 3.0] {
                    let mut i = input(soc, target);
                    i.q_target = q_target;
                    i.curtailment = 0.25;
                    let got = rt_control(&b, &i, &QpSettings::default()).unwrap();
                    let want = clamp_oracle(&b, &i);
                    assert!((got.0 - want.0).abs() < 1e-7, "{soc} {target}: {got:?} vs {want:?}");
                    assert!((got.1 - want.1).abs() < 1e-7);
                    let next = soc + b.soc_delta(got.0, i.dt_h);
                    assert!(next >= b.soc_min - 1e-12 && next <= b.soc_max + 1e-12);
                }
            }
        }
    }

    #[test]
    fn interior_point_near_soc_floor() {
        // a case on which the backend's equilibration used to cycle
        let b = bess();
        let i = RtInput {
            soc: 0.10176450839763815,
            p_target: -0.42370875782353357,
            q_target: 0.6252803854848301,
            load_p: 2.8123717271260125,
            load_q: 0.5710764361151495,
            pv_potential: 3.533766911394777,
            curtailment: 0.0,
            dt_h: 30.0 / 3600.0,
        };
        let got = rt_control(&b, &i, &QpSettings::default()).unwrap();
        let want = clamp_oracle(&b, &i);
        assert!((got.0 - want.0).abs() < 1e-7 && (got.1 - want.1).abs() < 1e-7);
    }
}
