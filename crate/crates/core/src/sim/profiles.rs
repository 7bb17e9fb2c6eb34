//! Seeded synthetic profiles: a clear-sky PV bell, office-hours loads with
//! correlated noise, a two-level time-of-use tariff and an optional slack
//! voltage disturbance.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{ProsumerSeries, TimelineConfig};
use crate::prosumer::ProsumerSpec;

/// A step added to the realized slack voltage over `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackDisturbance {
    pub start_s: u32,
    pub end_s: u32,
    pub delta_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticProfiles {
    pub seed: u64,
    pub sunrise_h: f64,
    pub sunset_h: f64,
    /// Forecast PV peak as a fraction of the rated power.
    pub pv_peak_fraction: f64,
    /// Realized PV as a fraction of the forecast.
    pub pv_realized_factor: f64,
    /// Night-time load as a fraction of the peak.
    pub load_base_fraction: f64,
    pub office_start_h: f64,
    pub office_end_h: f64,
    /// Relative standard deviation of the load noise.
    pub load_noise: f64,
    /// Correlation time of the load noise, seconds.
    pub load_noise_corr_s: f64,
    /// Off-peak and peak prices, CHF/kWh.
    pub tariff_low: f64,
    pub tariff_high: f64,
    pub peak_start_h: f64,
    pub peak_end_h: f64,
    pub slack_v_pu: f64,
    pub disturbances: Vec<SlackDisturbance>,
}

impl Default for SyntheticProfiles {
    fn default() -> Self {
        Self {
            seed: 7,
            sunrise_h: 6.0,
            sunset_h: 20.0,
            pv_peak_fraction: 0.9,
            pv_realized_factor: 0.9,
            load_base_fraction: 0.2,
            office_start_h: 8.0,
            office_end_h: 18.0,
            load_noise: 0.1,
            load_noise_corr_s: 600.0,
            tariff_low: 0.12,
            tariff_high: 0.30,
            peak_start_h: 17.0,
            peak_end_h: 22.0,
            slack_v_pu: 1.0,
            disturbances: vec![],
        }
    }
}

/// Generator output, at the resolutions of [`super::Scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedProfiles {
    pub tariff: Vec<f64>,
    pub forecast: Vec<ProsumerSeries>,
    pub realization: Vec<ProsumerSeries>,
    pub slack_forecast: Vec<f64>,
    pub slack_realized: Vec<f64>,
}

/// Normalized clear-sky PV shape at hour `h`.
pub fn pv_shape(cfg: &SyntheticProfiles, h: f64) -> f64 {
    if h <= cfg.sunrise_h || h >= cfg.sunset_h {
        return 0.0;
    }
    (PI * (h - cfg.sunrise_h) / (cfg.sunset_h - cfg.sunrise_h)).sin().powf(1.5)
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Normalized office-hours load shape at hour `h`, with one-hour ramps.
pub fn office_shape(cfg: &SyntheticProfiles, h: f64) -> f64 {
    let on = smoothstep(h - cfg.office_start_h + 0.5) * (1.0 - smoothstep(h - cfg.office_end_h + 0.5));
    cfg.load_base_fraction + (1.0 - cfg.load_base_fraction) * on
}

pub fn tariff_at(cfg: &SyntheticProfiles, h: f64) -> f64 {
    if h >= cfg.peak_start_h && h < cfg.peak_end_h {
        cfg.tariff_high
    } else {
        cfg.tariff_low
    }
}

/// Stationary AR(1) noise with unit variance and uniform innovations.
fn ar1(rng: &mut ChaCha8Rng, n: usize, dt_s: f64, corr_s: f64) -> Vec<f64> {
    let a = if corr_s > 0.0 { (-dt_s / corr_s).exp() } else { 0.0 };
    let innov = (1.0 - a * a).sqrt() * 3f64.sqrt();
    let mut e = rng.random_range(-1.0..1.0) * 3f64.sqrt();
    (0..n)
        .map(|_| {
            let out = e;
            e = a * e + innov * rng.random_range(-1.0..1.0);
            out
        })
        .collect()
}

fn load_day(cfg: &SyntheticProfiles, spec: &ProsumerSpec, tl: &TimelineConfig, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let noise = ar1(&mut rng, tl.samples(), tl.t2_s as f64, cfg.load_noise_corr_s);
    (0..tl.samples())
        .map(|s| {
            let h = (tl.sample_time(s) as f64 + 0.5 * tl.t2_s as f64) / 3600.0;
            (spec.load_peak_kw * office_shape(cfg, h) * (1.0 + cfg.load_noise * noise[s])).max(0.0)
        })
        .collect()
}

/// Deterministic in `cfg.seed`. Forecast and realized loads are two
/// independent noisy days; realized PV is a fixed fraction of the forecast.
pub fn generate(cfg: &SyntheticProfiles, prosumers: &[ProsumerSpec], tl: &TimelineConfig) -> GeneratedProfiles {
    let mid = |s: usize| (tl.sample_time(s) as f64 + 0.5 * tl.t2_s as f64) / 3600.0;
    let mut forecast = Vec::with_capacity(prosumers.len());
    let mut realization = Vec::with_capacity(prosumers.len());
    for (i, p) in prosumers.iter().enumerate() {
        let pv: Vec<f64> =
            (0..tl.samples()).map(|s| p.pv_rated_kw * cfg.pv_peak_fraction * pv_shape(cfg, mid(s))).collect();
        forecast.push(ProsumerSeries { load_p: load_day(cfg, p, tl, 2 * i as u64), pv: pv.clone() });
        realization.push(ProsumerSeries {
            load_p: load_day(cfg, p, tl, 2 * i as u64 + 1),
            pv: pv.iter().map(|v| v * cfg.pv_realized_factor).collect(),
        });
    }
    let tariff = (0..tl.steps())
        .map(|k| tariff_at(cfg, (tl.horizon_start_s + k as u32 * tl.dt_plan_s) as f64 / 3600.0))
        .collect();
    let slack_forecast = vec![cfg.slack_v_pu; tl.samples()];
    let slack_realized = (0..tl.samples())
        .map(|s| {
            let t = tl.sample_time(s);
            cfg.slack_v_pu
                + cfg.disturbances.iter().filter(|d| t >= d.start_s && t < d.end_s).map(|d| d.delta_pu).sum::<f64>()
        })
        .collect();
    GeneratedProfiles { tariff, forecast, realization, slack_forecast, slack_realized }
}
