//! Monte Carlo log-likelihoods, the mixture regularizer, and their gradients.
//!
//! For a batch of `L` records from a dataset of `N`, with `M` times
//! `s_ij ~ U(0, t_i)` per record,
//!
//! ```text
//! l = (N / L) sum_i [ delta_i ln lambda(t_i | x_i) - (t_i / M) sum_j lambda(s_ij | x_i) ]
//! ```
//!
//! is an unbiased estimate of the full-data log-likelihood. The per-covariate
//! objective `l_d` swaps the marginal hazard for `lambda_d(. | x_id)`.
//! Records with `t = 0` contribute nothing: their integral has zero width and
//! their log term is dropped.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::AdhamModel;
use crate::data::SurvivalRecord;
use crate::diffcore::{Dropout, Matrix, NetworkParams, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::rng::{self, Rng};

/// Coefficients of the two regularizer terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerWeights {
    pub orth: f64,
    pub entropy: f64,
}

impl Default for RegularizerWeights {
    fn default() -> Self {
        Self {
            orth: 1.0,
            entropy: 1.0,
        }
    }
}

/// Value and gradient of `a * l - b * R` with respect to the assignment
/// parameters and the importance logits, hazards held fixed.
#[derive(Debug, Clone)]
pub struct MixtureObjective {
    pub loglik: f64,
    pub regularizer: f64,
    pub value: f64,
    pub assignment_grad: Vec<f64>,
    pub logits_grad: Vec<f64>,
}

/// Draws `M` times uniformly on `(0, t_i)` for each record, row-major `L x M`.
pub fn draw_time_samples(batch: &[SurvivalRecord], m: usize, rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch.len() * m);
    for r in batch {
        for _ in 0..m {
            out.push(r.t * rng::uniform_open(rng));
        }
    }
    out
}

fn check_args(batch: &[SurvivalRecord], m: usize, n_total: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    if m == 0 {
        return Err(invalid("need at least one importance sample"));
    }
    if n_total == 0 {
        return Err(invalid("dataset size must be positive"));
    }
    Ok(())
}

fn counts_as_event(r: &SurvivalRecord) -> bool {
    r.event && r.t > 0.0
}

/// Combines hazards at the recorded times (`event_h[i]`, read only for
/// events) and at the sampled times (`sample_h`, `L x M`) into the estimate.
fn combine(
    batch: &[SurvivalRecord],
    m: usize,
    n_total: usize,
    event_h: &[f64],
    sample_h: &[f64],
) -> Result<f64> {
    let mut acc = 0.0;
    for (i, r) in batch.iter().enumerate() {
        if counts_as_event(r) {
            let h = event_h[i];
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::NonFinite("log hazard"));
            }
            acc += math::ln(h);
        }
        let s: f64 = sample_h[i * m..(i + 1) * m].iter().sum();
        acc -= r.t / m as f64 * s;
    }
    let value = n_total as f64 / batch.len() as f64 * acc;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("log-likelihood estimate"))
    }
}

/// The estimator for an arbitrary hazard.
///
/// `hazard` receives `(record index, time)` pairs and returns the hazard at
/// each. The recorded times come first, then the `L x M` samples drawn from
/// `rng` in record-major order.
pub fn mc_loglik_with<F>(
    batch: &[SurvivalRecord],
    m: usize,
    n_total: usize,
    rng: &mut Rng,
    mut hazard: F,
) -> Result<f64>
where
    F: FnMut(&[(usize, f64)]) -> Result<Vec<f64>>,
{
    check_args(batch, m, n_total)?;
    let samples = draw_time_samples(batch, m, rng);
    let l = batch.len();
    let mut points: Vec<(usize, f64)> = batch.iter().enumerate().map(|(i, r)| (i, r.t)).collect();
    points.extend(samples.iter().enumerate().map(|(k, &s)| (k / m, s)));
    let h = hazard(&points)?;
    if h.len() != points.len() {
        return Err(invalid("hazard callback returned the wrong number of values"));
    }
    combine(batch, m, n_total, &h[..l], &h[l..])
}

/// Per-batch quantities in rescaled time.
pub(crate) struct BatchInputs {
    pub l: usize,
    pub m: usize,
    /// Indices of records contributing a log term.
    pub events: Vec<usize>,
    /// `t_i / time_scale`.
    pub taus: Vec<f64>,
    /// Sampled times over `time_scale`, `L x M`.
    pub sample_taus: Vec<f64>,
    pub xs: Matrix,
    /// `N / L`.
    pub factor: f64,
    pub ln_scale: f64,
}

impl BatchInputs {
    pub fn new(
        model: &AdhamModel,
        batch: &[SurvivalRecord],
        samples: &[f64],
        m: usize,
        n_total: usize,
    ) -> Result<Self> {
        check_args(batch, m, n_total)?;
        if samples.len() != batch.len() * m {
            return Err(Error::ShapeMismatch {
                context: "importance samples",
                expected: batch.len() * m,
                found: samples.len(),
            });
        }
        let s = model.time_scale;
        let xs: Vec<&[f64]> = batch.iter().map(|r| r.x.as_slice()).collect();
        Ok(Self {
            l: batch.len(),
            m,
            events: (0..batch.len()).filter(|&i| counts_as_event(&batch[i])).collect(),
            taus: batch.iter().map(|r| r.t / s).collect(),
            sample_taus: samples.iter().map(|v| v / s).collect(),
            xs: model.design(&xs)?,
            factor: n_total as f64 / batch.len() as f64,
            ln_scale: math::ln(s),
        })
    }

    /// Hazard-net inputs for covariate `d`: event rows, then sample rows.
    pub fn hazard_input(&self, d: usize) -> Matrix {
        let e = self.events.len();
        let mut input = Matrix::zeros(e + self.l * self.m, 2);
        for (r, &i) in self.events.iter().enumerate() {
            input.set(r, 0, self.taus[i]);
            input.set(r, 1, self.xs.get(i, d));
        }
        for (k, &tau) in self.sample_taus.iter().enumerate() {
            input.set(e + k, 0, tau);
            input.set(e + k, 1, self.xs.get(k / self.m, d));
        }
        input
    }

    /// `tau_i / M` for each record, each repeated `width` times.
    fn integral_weights(&self, width: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.l * width);
        for &tau in &self.taus {
            let v = tau / self.m as f64;
            w.extend(core::iter::repeat_n(v, width));
        }
        w
    }

    /// `l` from hazards at event times (`E x k`, already mixed when `k = 1`)
    /// and per-record sample sums (`L x k`), both in rescaled units.
    fn loglik_graph(&self, tape: &mut Tape, event_h: Var, sample_sum: Var) -> Var {
        let log_term = if self.events.is_empty() {
            tape.constant(Matrix::scalar(0.0))
        } else {
            let logs = tape.ln(event_h);
            tape.sum(logs)
        };
        let width = tape.value(sample_sum).cols;
        let integral = tape.weighted_sum(sample_sum, self.integral_weights(width));
        let neg = tape.scale(integral, -1.0);
        let total = tape.add(log_term, neg);
        let scaled = tape.scale(total, self.factor);
        let offset = tape.constant(Matrix::scalar(
            -self.factor * self.events.len() as f64 * self.ln_scale,
        ));
        tape.add(scaled, offset)
    }

    /// Network outputs at event rows (`E x 1`) and per-record sums over the
    /// sample rows (`L x 1`).
    fn hazard_graph(
        &self,
        tape: &mut Tape,
        net: &NetworkParams,
        leaves: &[Var],
        d: usize,
        dropout: Option<Dropout<'_>>,
    ) -> Result<(Var, Var)> {
        let e = self.events.len();
        let input = tape.constant(self.hazard_input(d));
        let out = net.forward_taped(tape, leaves, input, dropout)?;
        let ev = tape.row_range(out, 0, e);
        let samples = tape.row_range(out, e, e + self.l * self.m);
        let sums = tape.sum_blocks(samples, self.m);
        Ok((ev, sums))
    }

    /// Marginal log-likelihood and regularizer from covariate weights `w`
    /// (`L x D`), assignments `f` (`L x C`), and hazard tables.
    fn mixture_graph(
        &self,
        tape: &mut Tape,
        f: Var,
        w: Var,
        event_table: Var,
        sample_table: Var,
        weights: RegularizerWeights,
    ) -> (Var, Var) {
        let w_events = tape.select_rows(w, &self.events);
        let mixed_events = tape.mul(w_events, event_table);
        let ev = tape.sum_rows(mixed_events);
        let mixed_samples = tape.mul(w, sample_table);
        let loglik = self.loglik_graph(tape, ev, mixed_samples);
        let reg = regularizer_graph(tape, f, w, self.l, weights);
        (loglik, reg)
    }
}

fn regularizer_graph(tape: &mut Tape, f: Var, w: Var, l: usize, weights: RegularizerWeights) -> Var {
    let l = l as f64;
    let col = tape.sum_cols(f);
    let col_sq = tape.mul(col, col);
    let total = tape.sum(col_sq);
    let f_sq = tape.mul(f, f);
    let diag = tape.sum(f_sq);
    let neg_diag = tape.scale(diag, -1.0);
    let off = tape.add(total, neg_diag);
    let term1 = tape.scale(off, weights.orth / (l * (l - 1.0)));
    let ent = tape.xlogx(w);
    let ent_sum = tape.sum(ent);
    let term2 = tape.scale(ent_sum, weights.entropy / l);
    tape.add(term1, term2)
}

/// Scaled-unit hazards of every covariate net for one batch, evaluated
/// without dropout: values at event times (`E x D`) and per-record sums over
/// the sampled times (`L x D`).
#[derive(Debug, Clone)]
pub struct HazardTables {
    pub events: Matrix,
    pub sample_sums: Matrix,
}

impl AdhamModel {
    fn ensure_trainable(&self) -> Result<()> {
        if self.assignment.groups.is_some() {
            return Err(invalid("a refined model cannot be trained further"));
        }
        Ok(())
    }

    /// The marginal estimator `l`.
    pub fn mc_loglik(
        &self,
        batch: &[SurvivalRecord],
        m: usize,
        n_total: usize,
        rng: &mut Rng,
    ) -> Result<f64> {
        let xs: Vec<&[f64]> = batch.iter().map(|r| r.x.as_slice()).collect();
        mc_loglik_with(batch, m, n_total, rng, |points| self.marginal_hazards(&xs, points))
    }

    /// The per-covariate estimator `l_d`.
    pub fn mc_loglik_d(
        &self,
        d: usize,
        batch: &[SurvivalRecord],
        m: usize,
        n_total: usize,
        rng: &mut Rng,
    ) -> Result<f64> {
        if d >= self.dim() {
            return Err(invalid(alloc::format!("covariate index {d} out of range")));
        }
        for r in batch {
            if r.x.len() != self.dim() {
                return Err(Error::ShapeMismatch {
                    context: "covariate vector",
                    expected: self.dim(),
                    found: r.x.len(),
                });
            }
        }
        mc_loglik_with(batch, m, n_total, rng, |points| {
            let pts: Vec<(f64, f64)> = points.iter().map(|&(i, t)| (t, batch[i].x[d])).collect();
            self.population_hazards(d, &pts)
        })
    }

    /// The two regularizer terms, unweighted: mean pairwise assignment overlap
    /// and mean negative entropy of the covariate weights.
    pub fn regularizer_terms(&self, batch: &[SurvivalRecord]) -> Result<(f64, f64)> {
        if batch.len() < 2 {
            return Err(invalid("regularizer needs at least two records"));
        }
        let xs: Vec<&[f64]> = batch.iter().map(|r| r.x.as_slice()).collect();
        let f = self.assignment_batch(&xs)?;
        let beta = self.importance.beta();
        let w = crate::diffcore::matrix::matmul((&f).into(), (&beta).into());
        Ok(regularizer_terms_from(&f, &w))
    }

    /// `w_orth * term1 + w_ent * term2`.
    pub fn regularizer(&self, batch: &[SurvivalRecord], weights: RegularizerWeights) -> Result<f64> {
        let (t1, t2) = self.regularizer_terms(batch)?;
        Ok(weights.orth * t1 + weights.entropy * t2)
    }

    /// Evaluates every hazard net on the batch's event and sample rows.
    pub fn hazard_tables(
        &self,
        batch: &[SurvivalRecord],
        samples: &[f64],
        m: usize,
    ) -> Result<HazardTables> {
        let inputs = BatchInputs::new(self, batch, samples, m, 1)?;
        self.tables_for(&inputs)
    }

    pub(crate) fn tables_for(&self, inputs: &BatchInputs) -> Result<HazardTables> {
        let e = inputs.events.len();
        let dim = self.dim();
        let mut events = Matrix::zeros(e, dim);
        let mut sample_sums = Matrix::zeros(inputs.l, dim);
        for (d, net) in self.hazards.iter().enumerate() {
            let out = net.raw(&inputs.hazard_input(d))?;
            for r in 0..e {
                events.set(r, d, out[r]);
            }
            for i in 0..inputs.l {
                let s: f64 = out[e + i * inputs.m..e + (i + 1) * inputs.m].iter().sum();
                sample_sums.set(i, d, s);
            }
        }
        Ok(HazardTables {
            events,
            sample_sums,
        })
    }

    /// `l_d` on the given samples and its gradient with respect to the
    /// parameters of hazard net `d`.
    pub fn hazard_objective_gradient(
        &self,
        d: usize,
        batch: &[SurvivalRecord],
        samples: &[f64],
        m: usize,
        n_total: usize,
        dropout: Option<Dropout<'_>>,
    ) -> Result<(f64, Vec<f64>)> {
        let net = &self
            .hazards
            .get(d)
            .ok_or_else(|| invalid(alloc::format!("covariate index {d} out of range")))?
            .params;
        let inputs = BatchInputs::new(self, batch, samples, m, n_total)?;
        crate::diffcore::gradient(net, |tape, leaves| {
            let (ev, sums) = inputs.hazard_graph(tape, net, leaves, d, dropout)?;
            Ok(inputs.loglik_graph(tape, ev, sums))
        })
    }

    /// Value and gradient of `loglik_coef * l - reg_coef * R` in the
    /// assignment parameters and importance logits, with the hazards fixed
    /// at `tables`.
    #[allow(clippy::too_many_arguments)]
    pub fn mixture_objective(
        &self,
        batch: &[SurvivalRecord],
        samples: &[f64],
        m: usize,
        n_total: usize,
        tables: &HazardTables,
        weights: RegularizerWeights,
        loglik_coef: f64,
        reg_coef: f64,
        dropout: Option<Dropout<'_>>,
    ) -> Result<MixtureObjective> {
        self.ensure_trainable()?;
        if batch.len() < 2 {
            return Err(invalid("mixture objective needs at least two records"));
        }
        let inputs = BatchInputs::new(self, batch, samples, m, n_total)?;
        if tables.events.rows != inputs.events.len()
            || tables.sample_sums.rows != inputs.l
            || tables.events.cols != self.dim()
            || tables.sample_sums.cols != self.dim()
        {
            return Err(invalid("hazard tables do not match the batch"));
        }
        let mut tape = Tape::new();
        let theta = self.assignment.params.leaves(&mut tape);
        let logits = tape.param(Matrix::from_vec(
            self.importance.subgroups,
            self.importance.covariates,
            self.importance.logits.clone(),
        ));
        let x = tape.constant(inputs.xs.clone());
        let f = self.assignment.params.forward_taped(&mut tape, &theta, x, dropout)?;
        let beta = tape.softmax(logits);
        let w = tape.matmul(f, beta);
        let ev_table = tape.constant(tables.events.clone());
        let s_table = tape.constant(tables.sample_sums.clone());
        let (loglik, reg) = inputs.mixture_graph(&mut tape, f, w, ev_table, s_table, weights);
        let a = tape.scale(loglik, loglik_coef);
        let b = tape.scale(reg, -reg_coef);
        let objective = tape.add(a, b);
        tape.check_finite()?;
        let grads = tape.backward(objective);
        let assignment_grad = self.assignment.params.collect_gradient(&grads, &theta);
        let logits_grad = grads
            .wrt(logits)
            .map(|g| g.data.clone())
            .unwrap_or_else(|| alloc::vec![0.0; self.importance.logits.len()]);
        if assignment_grad.iter().chain(&logits_grad).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok(MixtureObjective {
            loglik: tape.scalar(loglik),
            regularizer: tape.scalar(reg),
            value: tape.scalar(objective),
            assignment_grad,
            logits_grad,
        })
    }

    /// Gradient of `loglik_coef * l - reg_coef * R` with every parameter
    /// free: hazard nets, assignment net and importance logits, in that
    /// order, concatenated. Used only by the coupled-training debug mode.
    #[allow(clippy::too_many_arguments)]
    pub fn joint_objective(
        &self,
        batch: &[SurvivalRecord],
        samples: &[f64],
        m: usize,
        n_total: usize,
        weights: RegularizerWeights,
        loglik_coef: f64,
        reg_coef: f64,
        mut dropout_rng: Option<&mut Rng>,
        dropout_rate: f64,
    ) -> Result<(f64, Vec<f64>)> {
        self.ensure_trainable()?;
        if batch.len() < 2 {
            return Err(invalid("joint objective needs at least two records"));
        }
        let inputs = BatchInputs::new(self, batch, samples, m, n_total)?;
        let mut tape = Tape::new();
        let mut hazard_leaves = Vec::with_capacity(self.dim());
        let mut ev_parts = Vec::with_capacity(self.dim());
        let mut sum_parts = Vec::with_capacity(self.dim());
        for (d, net) in self.hazards.iter().enumerate() {
            let leaves = net.params.leaves(&mut tape);
            let dropout = dropout_rng.as_deref_mut().map(|rng| Dropout {
                rate: dropout_rate,
                rng,
            });
            let (ev, sums) = inputs.hazard_graph(&mut tape, &net.params, &leaves, d, dropout)?;
            ev_parts.push(ev);
            sum_parts.push(sums);
            hazard_leaves.push(leaves);
        }
        let ev_table = tape.concat_cols(&ev_parts);
        let s_table = tape.concat_cols(&sum_parts);
        let theta = self.assignment.params.leaves(&mut tape);
        let logits = tape.param(Matrix::from_vec(
            self.importance.subgroups,
            self.importance.covariates,
            self.importance.logits.clone(),
        ));
        let x = tape.constant(inputs.xs.clone());
        let dropout = dropout_rng.map(|rng| Dropout {
            rate: dropout_rate,
            rng,
        });
        let f = self.assignment.params.forward_taped(&mut tape, &theta, x, dropout)?;
        let beta = tape.softmax(logits);
        let w = tape.matmul(f, beta);
        let (loglik, reg) = inputs.mixture_graph(&mut tape, f, w, ev_table, s_table, weights);
        let a = tape.scale(loglik, loglik_coef);
        let b = tape.scale(reg, -reg_coef);
        let objective = tape.add(a, b);
        tape.check_finite()?;
        let grads = tape.backward(objective);
        let mut g = Vec::new();
        for (net, leaves) in self.hazards.iter().zip(&hazard_leaves) {
            g.extend(net.params.collect_gradient(&grads, leaves));
        }
        g.extend(self.assignment.params.collect_gradient(&grads, &theta));
        match grads.wrt(logits) {
            Some(lg) => g.extend_from_slice(&lg.data),
            None => g.extend(core::iter::repeat_n(0.0, self.importance.logits.len())),
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok((tape.scalar(objective), g))
    }
}

pub(crate) fn regularizer_terms_from(f: &Matrix, w: &Matrix) -> (f64, f64) {
    let l = f.rows as f64;
    let mut col = alloc::vec![0.0; f.cols];
    let mut diag = 0.0;
    for r in 0..f.rows {
        for (c, v) in f.row(r).iter().enumerate() {
            col[c] += v;
            diag += v * v;
        }
    }
    let total: f64 = col.iter().map(|v| v * v).sum();
    let term1 = (total - diag) / (l * (l - 1.0));
    let term2 = w.data.iter().map(|&p| math::xlogx(p)).sum::<f64>() / l;
    (term1, term2)
}
