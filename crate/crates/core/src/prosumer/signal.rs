use serde::{Deserialize, Serialize};

/// Quadratic tariff advertised to one prosumer:
/// `C(x) = f + gᵀx + ½ xᵀ H x` over the interleaved demand vector.
///
/// `H` is block-diagonal in time and stored as one row-major 2x2 block per
/// step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSignal {
    pub h: Vec<[f64; 4]>,
    pub g: Vec<f64>,
    pub f: f64,
    /// Coordination iteration the signal was issued at.
    pub round: usize,
}

impl PriceSignal {
    /// The plain tariff `cᵀx`.
    pub fn tariff(c: &[f64]) -> Self {
        Self { h: vec![[0.0; 4]; c.len() / 2], g: c.to_vec(), f: 0.0, round: 0 }
    }

    pub fn steps(&self) -> usize {
        self.h.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.g.len());
        let mut quad = 0.0;
        for (t, h) in self.h.iter().enumerate() {
            let (p, q) = (x[2 * t], x[2 * t + 1]);
            quad += p * (h[0] * p + h[1] * q) + q * (h[2] * p + h[3] * q);
        }
        self.f + super::dot(&self.g, x) + 0.5 * quad
    }

    /// Marginal price `∂C/∂x` at `x`; the active-power entries divided by the
    /// step length give the consumption-dependent tariff in CHF/kWh.
    pub fn marginal(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.g.clone();
        for (t, h) in self.h.iter().enumerate() {
            let (p, q) = (x[2 * t], x[2 * t + 1]);
            out[2 * t] += h[0] * p + h[1] * q;
            out[2 * t + 1] += h[2] * p + h[3] * q;
        }
        out
    }

    pub fn dense_h(&self) -> nalgebra::DMatrix<f64> {
        let k = self.h.len();
        let mut m = nalgebra::DMatrix::zeros(2 * k, 2 * k);
        for (t, h) in self.h.iter().enumerate() {
            m[(2 * t, 2 * t)] = h[0];
            m[(2 * t, 2 * t + 1)] = h[1];
            m[(2 * t + 1, 2 * t)] = h[2];
            m[(2 * t + 1, 2 * t + 1)] = h[3];
        }
        m
    }
}

/// Tariff vector over the interleaved demand layout: `price_t · Δt` on the
/// active-power entries, zero on reactive ones. Prices in CHF/kWh, `dt_h` in
/// hours, so `cᵀx` is in CHF for `x` in kW.
pub fn tariff_vector(prices: &[f64], dt_h: f64) -> Vec<f64> {
    prices.iter().flat_map(|&c| [c * dt_h, 0.0]).collect()
}
