use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::power_flow::{ds_dv, polar};
use super::{GridError, Injections, PowerFlow, PowerFlowSolution};

/// First-order model of voltages and slack injections around an operating point.
///
/// All derivatives are taken with respect to non-slack nodal *demand* (pu),
/// so more load lowers voltages and `k_vp` is negative on a passive feeder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMatrices {
    pub k_vp: DMatrix<f64>,
    pub k_vq: DMatrix<f64>,
    /// ∂p_s/∂p and ∂p_s/∂q.
    pub k_sp_p: DVector<f64>,
    pub k_sp_q: DVector<f64>,
    /// ∂q_s/∂p and ∂q_s/∂q.
    pub k_sq_p: DVector<f64>,
    pub k_sq_q: DVector<f64>,
    /// Non-slack voltage magnitudes at the linearization point.
    pub v_star: Vec<f64>,
    pub p_slack_star: f64,
    pub q_slack_star: f64,
}

impl PowerFlow {
    /// Solves the power flow at `inj` and differentiates the solution implicitly.
    pub fn sensitivities(
        &self,
        inj: &Injections,
        slack_voltage: f64,
    ) -> Result<(SensitivityMatrices, PowerFlowSolution), GridError> {
        let sol = self.solve(inj, slack_voltage)?;
        if !sol.converged {
            return Err(GridError::InfeasibleLinearization);
        }
        let npq = self.pq.len();
        let v = polar(&sol.v, &sol.theta);
        let (ds_dva, ds_dvm) = ds_dv(&self.y, &v);
        let mut jac = DMatrix::<f64>::zeros(2 * npq, 2 * npq);
        for (r, &i) in self.pq.iter().enumerate() {
            for (c, &j) in self.pq.iter().enumerate() {
                jac[(r, c)] = ds_dva[(i, j)].re;
                jac[(r, c + npq)] = ds_dvm[(i, j)].re;
                jac[(r + npq, c)] = ds_dva[(i, j)].im;
                jac[(r + npq, c + npq)] = ds_dvm[(i, j)].im;
            }
        }
        // F(u, d) = S(u) + d = 0  =>  du/dd = -J^{-1}
        let du_dd = -jac.try_inverse().ok_or(GridError::InfeasibleLinearization)?;
        let k_vp = du_dd.view((npq, 0), (npq, npq)).into_owned();
        let k_vq = du_dd.view((npq, npq), (npq, npq)).into_owned();

        let s = self.slack;
        let mut ds_slack_du_re = DVector::<f64>::zeros(2 * npq);
        let mut ds_slack_du_im = DVector::<f64>::zeros(2 * npq);
        for (c, &j) in self.pq.iter().enumerate() {
            ds_slack_du_re[c] = ds_dva[(s, j)].re;
            ds_slack_du_re[c + npq] = ds_dvm[(s, j)].re;
            ds_slack_du_im[c] = ds_dva[(s, j)].im;
            ds_slack_du_im[c + npq] = ds_dvm[(s, j)].im;
        }
        let dp = du_dd.tr_mul(&ds_slack_du_re);
        let dq = du_dd.tr_mul(&ds_slack_du_im);
        let sens = SensitivityMatrices {
            k_vp,
            k_vq,
            k_sp_p: dp.rows(0, npq).into_owned(),
            k_sp_q: dp.rows(npq, npq).into_owned(),
            k_sq_p: dq.rows(0, npq).into_owned(),
            k_sq_q: dq.rows(npq, npq).into_owned(),
            v_star: self.pq.iter().map(|&i| sol.v[i]).collect(),
            p_slack_star: sol.p_slack,
            q_slack_star: sol.q_slack,
        };
        Ok((sens, sol))
    }
}

/// Sensitivities of the model at one operating point.
pub fn compute_sensitivities(
    model: &super::NetworkModel,
    inj: &Injections,
    slack_voltage: f64,
) -> Result<SensitivityMatrices, GridError> {
    Ok(PowerFlow::new(model)?.sensitivities(inj, slack_voltage)?.0)
}
