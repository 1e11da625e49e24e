//! Sampling survival data from a known model.
//!
//! Covariates are independent standard normals. Each event time solves
//! `H(T | x) = E` with `E ~ Exp(1)`, where `H` is the trapezoid integral of
//! the model's marginal hazard on a uniform grid up to `horizon`; times beyond
//! the horizon are administratively censored. Independent censoring times are
//! exponential.

use alloc::vec::Vec;

use crate::data::SurvivalRecord;
use crate::error::{invalid, Result};
use crate::model::AdhamModel;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// End of follow-up.
    pub horizon: f64,
    /// Rate of the exponential censoring clock; zero disables it.
    pub censoring_rate: f64,
    /// Trapezoid intervals on `[0, horizon]`.
    pub grid: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            censoring_rate: 0.0,
            grid: 2000,
        }
    }
}

/// Draws `n` records; consumes `rng` in patient order (covariates, event
/// clock, censoring clock).
pub fn sample_records(
    model: &AdhamModel,
    n: usize,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Vec<SurvivalRecord>> {
    if !(cfg.horizon.is_finite() && cfg.horizon > 0.0) || cfg.grid == 0 {
        return Err(invalid("sampler needs a positive horizon and grid"));
    }
    if !(cfg.censoring_rate >= 0.0 && cfg.censoring_rate.is_finite()) {
        return Err(invalid("censoring rate must be nonnegative"));
    }
    let dim = model.dim();
    let mut xs = Vec::with_capacity(n);
    let mut clocks = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| rng::normal(rng)).collect();
        let e = rng::exponential(rng);
        let c = if cfg.censoring_rate > 0.0 {
            rng::exponential(rng) / cfg.censoring_rate
        } else {
            f64::INFINITY
        };
        xs.push(x);
        clocks.push((e, c));
    }
    let step = cfg.horizon / cfg.grid as f64;
    let grid: Vec<f64> = (0..=cfg.grid).map(|k| k as f64 * step).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let mut out = Vec::with_capacity(n);
    // Patients in blocks to bound the hazard table size.
    for start in (0..n).step_by(256) {
        let end = (start + 256).min(n);
        let points: Vec<(usize, f64)> = (start..end)
            .flat_map(|i| grid.iter().map(move |&t| (i, t)))
            .collect();
        let h = model.marginal_hazards(&refs, &points)?;
        for (b, i) in (start..end).enumerate() {
            let lam = &h[b * grid.len()..(b + 1) * grid.len()];
            let t_event = invert(lam, step, clocks[i].0);
            let c = clocks[i].1.min(cfg.horizon);
            let (t, event) = match t_event {
                Some(t) if t <= c => (t, true),
                _ => (c, false),
            };
            out.push(SurvivalRecord::new(xs[i].clone(), t, event)?);
        }
    }
    Ok(out)
}

/// First time the trapezoid cumulative hazard reaches `target`, linearly
/// interpolated inside the crossing interval.
fn invert(lam: &[f64], step: f64, target: f64) -> Option<f64> {
    let mut cum = 0.0;
    for k in 1..lam.len() {
        let inc = 0.5 * (lam[k - 1] + lam[k]) * step;
        if cum + inc >= target {
            let frac = if inc > 0.0 { (target - cum) / inc } else { 0.0 };
            return Some((k - 1) as f64 * step + frac * step);
        }
        cum += inc;
    }
    None
}
