use super::{Agent, CoordError};
use crate::grid::LinearizedConstraints;
use crate::prosumer::PriceSignal;
use crate::qp::{dot, solve_qp, QpSettings, QuadraticProgram, SparseMatrix};

/// Solution of the monolithic problem over all prosumers.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralSolution {
    pub xs: Vec<Vec<f64>>,
    /// `Σ_i c_iᵀ x_i`, CHF.
    pub tariff_cost: f64,
}

/// Solves `min Σ c_iᵀx_i` over every prosumer's constraints jointly with the
/// linearized grid constraints, as one QP. Intended for small instances.
pub fn centralized_optimum(
    agents: &[Agent],
    lin: &LinearizedConstraints,
    settings: &QpSettings,
) -> Result<CentralSolution, CoordError> {
    let parts: Vec<QuadraticProgram> = agents
        .iter()
        .map(|a| a.problem.qp(&PriceSignal::tariff(&a.tariff)))
        .collect::<Result<_, _>>()
        .map_err(|source| CoordError::Agent { name: "central".into(), iteration: 0, source })?;
    let offsets: Vec<usize> = parts
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.n();
            Some(o)
        })
        .collect();
    let n: usize = parts.iter().map(|p| p.n()).sum();
    let mut qp = QuadraticProgram::new(n);
    let (mut pt, mut eq, mut b_eq) = (Vec::new(), Vec::new(), Vec::new());
    for (part, &off) in parts.iter().zip(&offsets) {
        pt.extend(part.p.iter().map(|(r, c, v)| (r + off, c + off, v)));
        let row0 = b_eq.len();
        eq.extend(part.a_eq.iter().map(|(r, c, v)| (r + row0, c + off, v)));
        b_eq.extend_from_slice(&part.b_eq);
        qp.q[off..off + part.n()].copy_from_slice(&part.q);
        qp.lower[off..off + part.n()].copy_from_slice(&part.lower);
        qp.upper[off..off + part.n()].copy_from_slice(&part.upper);
    }
    let mut ineq = Vec::new();
    for (i, &off) in offsets.iter().enumerate() {
        let dense = lin.prosumer_block(i).to_dense();
        for r in 0..dense.nrows() {
            for c in 0..dense.ncols() {
                if dense[(r, c)] != 0.0 {
                    ineq.push((r, off + c, dense[(r, c)]));
                }
            }
        }
    }
    qp.p = SparseMatrix::from_triplets(n, n, pt);
    qp.a_eq = SparseMatrix::from_triplets(b_eq.len(), n, eq);
    qp.b_eq = b_eq;
    qp.a_in = SparseMatrix::from_triplets(lin.rows(), n, ineq);
    qp.b_in = lin.b().to_vec();
    let sol = solve_qp(&qp, settings)?;
    if !sol.is_optimal() {
        return Err(CoordError::CentralNotOptimal(sol.status));
    }
    let xs: Vec<Vec<f64>> = agents
        .iter()
        .zip(&offsets)
        .map(|(a, &off)| sol.u[off..off + 2 * a.problem.steps()].to_vec())
        .collect();
    let tariff_cost = agents.iter().zip(&xs).map(|(a, x)| dot(&a.tariff, x)).sum();
    Ok(CentralSolution { xs, tariff_cost })
}
