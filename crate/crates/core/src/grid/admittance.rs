use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{GridError, NetworkModel};

/// Dense bus admittance matrix in pu. Parallel lines between the same pair
/// of buses add up.
pub fn build_admittance(model: &NetworkModel) -> Result<DMatrix<Complex64>, GridError> {
    let n = model.n_buses();
    let base = &model.base;
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for line in &model.lines {
        let f = model
            .bus_index(&line.from)
            .ok_or_else(|| GridError::UnknownBus(line.from.clone()))?;
        let t = model
            .bus_index(&line.to)
            .ok_or_else(|| GridError::UnknownBus(line.to.clone()))?;
        let z = Complex64::new(base.ohm_to_pu(line.r_ohm), base.ohm_to_pu(line.x_ohm));
        if z.norm() == 0.0 {
            return Err(GridError::DegenerateBranch(line.from.clone(), line.to.clone()));
        }
        let ys = z.inv();
        let half_shunt = Complex64::new(0.0, base.siemens_to_pu(line.b_siemens) / 2.0);
        y[(f, f)] += ys + half_shunt;
        y[(t, t)] += ys + half_shunt;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }
    Ok(y)
}
