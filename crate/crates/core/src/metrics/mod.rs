//! Survival prediction and evaluation metrics.
//!
//! Cumulative hazards are Monte Carlo integrals over a sorted time grid. Each
//! curve draws one set of `M` uniforms and reuses them on every grid segment:
//! `H(t_k) = H(t_{k-1}) + (dt / M) sum_j lambda(t_{k-1} + u_j dt)`. Every
//! increment is nonnegative, so the curves never increase, and each segment
//! is an unbiased estimate of its integral.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::data::{quantile_horizons, Dataset, FoldSplit, SurvivalRecord};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::model::AdhamModel;
use crate::rng::{self, Rng};

/// Default number of Monte Carlo samples for prediction.
pub const DEFAULT_PREDICTION_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(invalid("time grid must be finite and nonnegative"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("time grid must be sorted"));
    }
    Ok(())
}

/// Evaluation points for one curve: segment `k` uses `t_{k-1} + u_j dt`.
fn segment_points(times: &[f64], u: &[f64]) -> Vec<f64> {
    let mut pts = Vec::with_capacity(times.len() * u.len());
    let mut prev = 0.0;
    for &t in times {
        let dt = t - prev;
        pts.extend(u.iter().map(|&v| prev + v * dt));
        prev = t;
    }
    pts
}

/// Accumulates segment averages of `hazard` (one value per point from
/// [`segment_points`]) into cumulative hazards on the grid.
fn accumulate(times: &[f64], m: usize, hazard: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut total = 0.0;
    let mut prev = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let s: f64 = (0..m).map(|j| hazard(k * m + j)).sum();
        total += (t - prev) / m as f64 * s;
        prev = t;
        out.push(total);
    }
    out
}

fn draw_uniforms(m: usize, rng: &mut Rng) -> Vec<f64> {
    (0..m).map(|_| rng::uniform(rng)).collect()
}

fn to_curve(times: &[f64], cumulative: Vec<f64>) -> Result<SurvivalCurve> {
    if cumulative.iter().any(|h| !h.is_finite()) {
        return Err(Error::NonFinite("cumulative hazard"));
    }
    Ok(SurvivalCurve {
        times: times.to_vec(),
        values: cumulative.into_iter().map(|h| math::exp(-h)).collect(),
    })
}

/// Cumulative hazard of an arbitrary hazard function on a grid. `hazard`
/// receives all evaluation times at once.
pub fn cumulative_hazard_with<F>(times: &[f64], m: usize, rng: &mut Rng, hazard: F) -> Result<Vec<f64>>
where
    F: FnOnce(&[f64]) -> Result<Vec<f64>>,
{
    check_grid(times)?;
    if m == 0 {
        return Err(invalid("need at least one sample"));
    }
    let u = draw_uniforms(m, rng);
    let pts = segment_points(times, &u);
    let h = hazard(&pts)?;
    if h.len() != pts.len() {
        return Err(invalid("hazard callback returned the wrong number of values"));
    }
    Ok(accumulate(times, m, |i| h[i]))
}

/// `S(t | x)` on a grid.
pub fn individual_survival(
    model: &AdhamModel,
    x: &[f64],
    times: &[f64],
    m: usize,
    rng: &mut Rng,
) -> Result<SurvivalCurve> {
    Ok(individual_survival_batch(model, &[x], times, m, rng)?.remove(0))
}

/// Curves for many patients; patient `i` draws its uniforms after patient `i - 1`.
pub fn individual_survival_batch(
    model: &AdhamModel,
    xs: &[&[f64]],
    times: &[f64],
    m: usize,
    rng: &mut Rng,
) -> Result<Vec<SurvivalCurve>> {
    check_grid(times)?;
    if m == 0 {
        return Err(invalid("need at least one sample"));
    }
    let per = times.len() * m;
    let mut points = Vec::with_capacity(xs.len() * per);
    for i in 0..xs.len() {
        let u = draw_uniforms(m, rng);
        points.extend(segment_points(times, &u).into_iter().map(|t| (i, t)));
    }
    let h = model.marginal_hazards(xs, &points)?;
    (0..xs.len())
        .map(|i| to_curve(times, accumulate(times, m, |k| h[i * per + k])))
        .collect()
}

/// Population-level survival `exp(-int lambda_d(s | x_d) ds)`.
pub fn population_survival(
    model: &AdhamModel,
    d: usize,
    x_d: f64,
    times: &[f64],
    m: usize,
    rng: &mut Rng,
) -> Result<SurvivalCurve> {
    let cum = cumulative_hazard_with(times, m, rng, |pts| {
        let q: Vec<(f64, f64)> = pts.iter().map(|&t| (t, x_d)).collect();
        model.population_hazards(d, &q)
    })?;
    to_curve(times, cum)
}

/// Per-covariate factors `exp(-w_d(x) H_d(t))`; with shared samples their
/// product is the individual survival curve.
pub fn individual_survival_decomposition(
    model: &AdhamModel,
    x: &[f64],
    times: &[f64],
    m: usize,
    rng: &mut Rng,
) -> Result<Vec<SurvivalCurve>> {
    check_grid(times)?;
    if m == 0 {
        return Err(invalid("need at least one sample"));
    }
    let w = model.covariate_weight(x)?;
    let u = draw_uniforms(m, rng);
    let points: Vec<(usize, f64)> = segment_points(times, &u).into_iter().map(|t| (0, t)).collect();
    let table = model.component_table(&[x], &points)?;
    (0..model.dim())
        .map(|d| {
            let cum = accumulate(times, m, |k| w[d] * table.get(k, d));
            to_curve(times, cum)
        })
        .collect()
}

/// Right-continuous step function from the product-limit estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    /// Distinct times at which the function drops.
    pub jumps: Vec<f64>,
    /// Value from each jump onward.
    pub values: Vec<f64>,
}

impl StepFunction {
    /// Value at `t` (including a jump at `t`).
    pub fn at(&self, t: f64) -> f64 {
        let k = self.jumps.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// Left limit at `t` (excluding a jump at `t`).
    pub fn before(&self, t: f64) -> f64 {
        let k = self.jumps.partition_point(|&s| s < t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }
}

/// Product-limit estimator where `is_event` marks the records that count as
/// events; the others leave the risk set without a drop.
fn product_limit(records: &[SurvivalRecord], is_event: impl Fn(&SurvivalRecord) -> bool) -> StepFunction {
    let mut sorted: Vec<(f64, bool)> = records.iter().map(|r| (r.t, is_event(r))).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut at_risk = sorted.len();
    let mut s = 1.0;
    let mut jumps = Vec::new();
    let mut values = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let mut events = 0;
        let mut leaving = 0;
        while i < sorted.len() && sorted[i].0 == t {
            events += usize::from(sorted[i].1);
            leaving += 1;
            i += 1;
        }
        if events > 0 {
            s *= 1.0 - events as f64 / at_risk as f64;
            jumps.push(t);
            values.push(s);
        }
        at_risk -= leaving;
    }
    StepFunction { jumps, values }
}

/// Kaplan-Meier estimate of the event-free survival function.
pub fn kaplan_meier(records: &[SurvivalRecord]) -> StepFunction {
    product_limit(records, |r| r.event)
}

/// Kaplan-Meier estimate `G` of the censoring survival function.
pub fn km_censoring(records: &[SurvivalRecord]) -> StepFunction {
    product_limit(records, |r| !r.event)
}

fn check_preds(preds: &[f64], data: &[SurvivalRecord]) -> Result<()> {
    if preds.len() != data.len() {
        return Err(Error::ShapeMismatch {
            context: "predictions",
            expected: data.len(),
            found: preds.len(),
        });
    }
    if preds.iter().any(|p| p.is_nan()) {
        return Err(Error::NonFinite("predictions"));
    }
    Ok(())
}

fn concordance(lower: f64, higher: f64) -> f64 {
    if lower < higher {
        1.0
    } else if lower == higher {
        0.5
    } else {
        0.0
    }
}

/// Uno's IPCW concordance at `horizon` from predicted survival probabilities
/// (higher means longer survival). A pair `(i, j)` is comparable when `i` had
/// an event, `t_i < t_j` and `t_i < horizon`; it carries weight
/// `1 / G(t_i-)^2`. Returns `None` when no pair is comparable.
pub fn c_index(
    survival: &[f64],
    data: &[SurvivalRecord],
    horizon: f64,
    censoring: &StepFunction,
) -> Result<Option<f64>> {
    check_preds(survival, data)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, ri) in data.iter().enumerate() {
        if !ri.event || ri.t >= horizon {
            continue;
        }
        let g = censoring.before(ri.t);
        if g <= 0.0 {
            return Err(Error::InvalidArgument("censoring survival is zero at an event time".into()));
        }
        let w = 1.0 / (g * g);
        for (j, rj) in data.iter().enumerate() {
            if rj.t > ri.t {
                num += w * concordance(survival[i], survival[j]);
                den += w;
            }
        }
    }
    Ok((den > 0.0).then(|| num / den))
}

/// IPCW Brier score at `t`: events by `t` weigh `1 / G(t_i-)`, records still
/// at risk after `t` weigh `1 / G(t)`, censored-by-`t` records weigh 0.
pub fn brier(
    survival: &[f64],
    data: &[SurvivalRecord],
    t: f64,
    censoring: &StepFunction,
) -> Result<f64> {
    check_preds(survival, data)?;
    if data.is_empty() {
        return Err(invalid("no records"));
    }
    let g_t = censoring.at(t);
    let mut total = 0.0;
    for (s, r) in survival.iter().zip(data) {
        if r.t <= t && r.event {
            let g = censoring.before(r.t);
            if g <= 0.0 {
                return Err(Error::InvalidArgument("censoring survival is zero at an event time".into()));
            }
            total += s * s / g;
        } else if r.t > t {
            if g_t <= 0.0 {
                return Err(Error::InvalidArgument("censoring survival is zero at the horizon".into()));
            }
            total += (1.0 - s) * (1.0 - s) / g_t;
        }
    }
    Ok(total / data.len() as f64)
}

/// Cumulative/dynamic AUROC at `t`: cases had an event by `t`, controls are
/// still at risk after `t`; a pair is concordant when the case has the lower
/// predicted survival. Returns `None` without cases or controls.
pub fn auroc(survival: &[f64], data: &[SurvivalRecord], t: f64) -> Result<Option<f64>> {
    check_preds(survival, data)?;
    let cases: Vec<f64> = data
        .iter()
        .zip(survival)
        .filter(|(r, _)| r.event && r.t <= t)
        .map(|(_, &s)| s)
        .collect();
    let controls: Vec<f64> = data
        .iter()
        .zip(survival)
        .filter(|(r, _)| r.t > t)
        .map(|(_, &s)| s)
        .collect();
    if cases.is_empty() || controls.is_empty() {
        return Ok(None);
    }
    let mut num = 0.0;
    for &a in &cases {
        for &b in &controls {
            num += concordance(a, b);
        }
    }
    Ok(Some(num / (cases.len() * controls.len()) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub quantile: f64,
    pub horizon: f64,
    /// `None` where the metric is undefined on the test set.
    pub c_index: Option<f64>,
    pub brier: Option<f64>,
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub fold: usize,
    pub seed: u64,
    pub model_hash: Option<String>,
    pub rows: Vec<EvaluationRow>,
}

/// Scores a fold's test records at event-time quantile horizons.
///
/// Horizons come from every event time in `data`; the censoring estimate
/// comes from the fold's training records. Survival predictions use the
/// random stream `(seed, fold)`.
pub fn evaluate(
    model: &AdhamModel,
    data: &Dataset,
    fold: &FoldSplit,
    quantiles: &[f64],
    m: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    if fold.test.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let horizons = quantile_horizons(&data.records, quantiles)?;
    let train = data.select(&fold.train);
    let censoring = km_censoring(if train.is_empty() { &data.records } else { &train });
    let test = data.select(&fold.test);
    let mut rng = rng::stream(seed, fold.fold as u64);
    let rows = score(model, &test, quantiles, &horizons, &censoring, m, &mut rng)?;
    Ok(EvaluationReport {
        fold: fold.fold,
        seed,
        model_hash: None,
        rows,
    })
}

/// Metric rows for explicit records, horizons and censoring estimate.
pub fn score(
    model: &AdhamModel,
    test: &[SurvivalRecord],
    quantiles: &[f64],
    horizons: &[f64],
    censoring: &StepFunction,
    m: usize,
    rng: &mut Rng,
) -> Result<Vec<EvaluationRow>> {
    let mut order: Vec<usize> = (0..horizons.len()).collect();
    order.sort_by(|&a, &b| horizons[a].total_cmp(&horizons[b]));
    let grid: Vec<f64> = order.iter().map(|&k| horizons[k]).collect();
    let xs: Vec<&[f64]> = test.iter().map(|r| r.x.as_slice()).collect();
    let curves = individual_survival_batch(model, &xs, &grid, m, rng)?;
    let mut rows = vec![None; horizons.len()];
    for (pos, &k) in order.iter().enumerate() {
        let s: Vec<f64> = curves.iter().map(|c| c.values[pos]).collect();
        let t = horizons[k];
        rows[k] = Some(EvaluationRow {
            quantile: quantiles[k],
            horizon: t,
            c_index: undefined_on_zero_weight("c-index", t, c_index(&s, test, t, censoring))?,
            brier: undefined_on_zero_weight("brier score", t, brier(&s, test, t, censoring).map(Some))?,
            auroc: auroc(&s, test, t)?,
        });
    }
    Ok(rows.into_iter().map(|r| r.expect("every horizon scored")).collect())
}

/// Maps a zero censoring weight to an undefined metric.
fn undefined_on_zero_weight(name: &str, t: f64, r: Result<Option<f64>>) -> Result<Option<f64>> {
    match r {
        Err(Error::InvalidArgument(msg)) => {
            log::warn!("{name} undefined at {t}: {msg}");
            Ok(None)
        }
        other => other,
    }
}
