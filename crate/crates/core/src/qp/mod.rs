//! Convex quadratic programs with a KKT certificate.
//!
//! ```text
//!     minimize     ½ uᵀ P u + qᵀ u
//!     subject to   A_eq u  = b_eq
//!                  A_in u <= b_in
//!                  lower <= u <= upper
//! ```
//!
//! The interior-point iterations are delegated to Clarabel. Every returned
//! solution is re-checked here against the KKT conditions; the status is only
//! `Optimal` when that independent check passes.

mod solver;
mod sparse;

pub use solver::solve_qp;
pub use sparse::SparseMatrix;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("nonconvex objective: min eigenvalue {0:e}")]
    Nonconvex(f64),
    #[error("invalid quadratic program: {0}")]
    Invalid(String),
    #[error("objective unbounded below")]
    Unbounded,
    #[error("backend failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    /// Full symmetric quadratic matrix (both triangles stored).
    pub p: SparseMatrix,
    pub q: Vec<f64>,
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: SparseMatrix,
    pub b_in: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QuadraticProgram {
    /// Unconstrained problem with `P = 0`, `q = 0` over `n` variables.
    pub fn new(n: usize) -> Self {
        Self {
            p: SparseMatrix::zeros(n, n),
            q: vec![0.0; n],
            a_eq: SparseMatrix::zeros(0, n),
            b_eq: vec![],
            a_in: SparseMatrix::zeros(0, n),
            b_in: vec![],
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        let pu = self.p.mul_vec(u);
        0.5 * dot(u, &pu) + dot(&self.q, u)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        let bad = |what: &str| Err(QpError::Invalid(what.to_string()));
        if self.p.nrows() != n || self.p.ncols() != n {
            return bad("P must be n x n");
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return bad("equality block dimensions");
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return bad("inequality block dimensions");
        }
        if self.lower.len() != n || self.upper.len() != n {
            return bad("bound dimensions");
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.q) || !finite(&self.b_eq) || !finite(&self.b_in) {
            return bad("non-finite data");
        }
        if self.p.iter().chain(self.a_eq.iter()).chain(self.a_in.iter()).any(|(_, _, v)| !v.is_finite()) {
            return bad("non-finite matrix entry");
        }
        if self.lower.iter().any(|l| l.is_nan() || *l == f64::INFINITY)
            || self.upper.iter().any(|u| u.is_nan() || *u == f64::NEG_INFINITY)
        {
            return bad("invalid bound");
        }
        let scale = self.p.max_abs().max(1.0);
        let pt = self.p.transpose();
        let asym = self
            .p
            .iter()
            .map(|(r, c, v)| (v - pt.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, w)| w)).abs())
            .fold(0.0, f64::max);
        if asym > 1e-12 * scale {
            return bad("P is not symmetric");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 20_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    /// The backend stopped but the KKT certificate does not hold at `tol`.
    Inaccurate,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub duality_gap: f64,
    /// Most negative inequality multiplier (0 if none negative).
    pub min_dual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub in_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub iterations: u32,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
