//! The additive hazard mixture.
//!
//! A patient with covariates `x` belongs to latent subgroup `c` with
//! probability `f_c(x)` (the assignment network). Subgroup `c` weighs
//! covariate `d` by `beta[c][d]`, a row-stochastic importance matrix. Each
//! covariate owns a population-level hazard network `lambda_d(t | x_d)` that
//! sees only its own covariate and time. The marginal hazard is
//!
//! ```text
//! lambda(t | x) = sum_d w_d(x) lambda_d(t | x_d),   w_d(x) = sum_c beta[c][d] f_c(x)
//! ```
//!
//! Networks read time rescaled by `time_scale`; every hazard returned by this
//! module is expressed per original time unit.

mod likelihood;
mod train;

use alloc::vec::Vec;
use alloc::string::String;
use serde::{Deserialize, Serialize};

use crate::data::StandardizationStats;
use crate::diffcore::{Architecture, Head, Matrix, NetworkParams};
use crate::error::{ensure_len, invalid, Error, Result};
use crate::math;
use crate::rng::{self, Rng};

pub use likelihood::{
    draw_time_samples, mc_loglik_with, HazardTables, MixtureObjective, RegularizerWeights,
};
pub use train::{
    fit, fit_records, fit_with_observer, validation_loglik, EpochLog, FitOutcome, TrainConfig,
};

/// Rows pushed through a network at once during evaluation.
pub(crate) const EVAL_CHUNK: usize = 16_384;

/// Population-level hazard network for one covariate: input `(t / time_scale, x_d)`,
/// one softplus output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardNet {
    pub covariate: usize,
    pub params: NetworkParams,
}

/// Subgroup assignment network `f(x)` on the `C`-simplex.
///
/// After refinement, `groups` lists which raw softmax outputs are summed into
/// each merged subgroup; the network itself is never retrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentNet {
    pub params: NetworkParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
}

/// Subgroup-by-covariate importance `beta`, stored as unconstrained logits and
/// read through a row softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub subgroups: usize,
    pub covariates: usize,
    pub logits: Vec<f64>,
}

/// Architecture shared by every network in a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub subgroups: usize,
    pub hidden: usize,
    pub depth: usize,
    pub layer_norm: bool,
    pub add_const: bool,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            subgroups: 100,
            hidden: 100,
            depth: 3,
            layer_norm: true,
            add_const: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdhamModel {
    pub assignment: AssignmentNet,
    pub importance: ImportanceMatrix,
    pub hazards: Vec<HazardNet>,
    pub stats: StandardizationStats,
    pub time_scale: f64,
    pub feature_names: Vec<String>,
}

impl HazardNet {
    pub fn architecture(shape: &ModelShape) -> Architecture {
        Architecture {
            input: 2,
            hidden: shape.hidden,
            depth: shape.depth,
            output: 1,
            head: Head::Softplus,
            layer_norm: shape.layer_norm,
            add_const: shape.add_const,
        }
    }

    /// Raw network outputs (hazard per rescaled time unit) for `(tau, x_d)` rows.
    pub(crate) fn raw(&self, input: &Matrix) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(input.rows);
        for start in (0..input.rows).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(input.rows);
            let chunk = Matrix::from_vec(
                end - start,
                input.cols,
                input.data[start * input.cols..end * input.cols].to_vec(),
            );
            out.extend(self.params.forward_batch(&chunk, None)?.data);
        }
        Ok(out)
    }
}

impl AssignmentNet {
    /// Number of (possibly merged) subgroups.
    pub fn subgroups(&self) -> usize {
        match &self.groups {
            Some(g) => g.len(),
            None => self.params.arch.output,
        }
    }

    /// Assignment probabilities, one row per input row.
    pub fn probs(&self, xs: &Matrix) -> Result<Matrix> {
        let mut raw = Vec::with_capacity(xs.rows * self.params.arch.output);
        for start in (0..xs.rows).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(xs.rows);
            let chunk = Matrix::from_vec(
                end - start,
                xs.cols,
                xs.data[start * xs.cols..end * xs.cols].to_vec(),
            );
            raw.extend(self.params.forward_batch(&chunk, None)?.data);
        }
        let raw = Matrix::from_vec(xs.rows, self.params.arch.output, raw);
        Ok(match &self.groups {
            None => raw,
            Some(groups) => merge_columns(&raw, groups),
        })
    }
}

pub(crate) fn merge_columns(raw: &Matrix, groups: &[Vec<usize>]) -> Matrix {
    let mut out = Matrix::zeros(raw.rows, groups.len());
    for r in 0..raw.rows {
        let row = raw.row(r);
        for (g, members) in groups.iter().enumerate() {
            out.set(r, g, members.iter().map(|&c| row[c]).sum());
        }
    }
    out
}

impl ImportanceMatrix {
    pub fn zeros(subgroups: usize, covariates: usize) -> Self {
        Self {
            subgroups,
            covariates,
            logits: alloc::vec![0.0; subgroups * covariates],
        }
    }

    /// Logits whose row softmax reproduces `probs` (rows on the simplex).
    pub fn from_probabilities(probs: &Matrix) -> Self {
        let logits = probs
            .data
            .iter()
            .map(|p| math::ln(p.max(math::TINY)))
            .collect();
        Self {
            subgroups: probs.rows,
            covariates: probs.cols,
            logits,
        }
    }

    /// Row-stochastic `beta`, `C x D`.
    pub fn beta(&self) -> Matrix {
        let mut m = Matrix::from_vec(self.subgroups, self.covariates, self.logits.clone());
        crate::diffcore::kernels::softmax_rows(&mut m);
        m
    }
}

impl AdhamModel {
    /// Freshly initialised model for `feature_names.len()` covariates.
    pub fn init(
        shape: &ModelShape,
        feature_names: Vec<String>,
        stats: StandardizationStats,
        time_scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let dim = feature_names.len();
        if dim == 0 || shape.subgroups == 0 {
            return Err(invalid("model needs at least one covariate and one subgroup"));
        }
        if !(time_scale.is_finite() && time_scale > 0.0) {
            return Err(invalid("time scale must be positive"));
        }
        ensure_len("standardization stats", dim, stats.mean.len())?;
        let assignment = AssignmentNet {
            params: NetworkParams::init(
                Architecture {
                    input: dim,
                    hidden: shape.hidden,
                    depth: shape.depth,
                    output: shape.subgroups,
                    head: Head::Softmax,
                    layer_norm: shape.layer_norm,
                    add_const: false,
                },
                rng,
            )?,
            groups: None,
        };
        let mut importance = ImportanceMatrix::zeros(shape.subgroups, dim);
        for v in &mut importance.logits {
            *v = rng::uniform_range(rng, -0.5, 0.5);
        }
        let hazards = (0..dim)
            .map(|d| {
                Ok(HazardNet {
                    covariate: d,
                    params: NetworkParams::init(HazardNet::architecture(shape), rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            assignment,
            importance,
            hazards,
            stats,
            time_scale,
            feature_names,
        })
    }

    /// Number of covariates `D`.
    pub fn dim(&self) -> usize {
        self.hazards.len()
    }

    /// Number of subgroups `C`.
    pub fn subgroups(&self) -> usize {
        self.importance.subgroups
    }

    /// Checks the structural invariants tying the parts together.
    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        ensure_len("importance columns", dim, self.importance.covariates)?;
        ensure_len("assignment input", dim, self.assignment.params.arch.input)?;
        ensure_len("assignment subgroups", self.importance.subgroups, self.assignment.subgroups())?;
        ensure_len(
            "importance logits",
            self.importance.subgroups * dim,
            self.importance.logits.len(),
        )?;
        ensure_len("feature names", dim, self.feature_names.len())?;
        for (d, h) in self.hazards.iter().enumerate() {
            if h.covariate != d || h.params.arch.input != 2 || h.params.arch.output != 1 {
                return Err(invalid("hazard network layout"));
            }
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(invalid("time scale must be positive"));
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        ensure_len("covariate vector", self.dim(), x.len())
    }

    fn check_t(t: f64) -> Result<()> {
        if t.is_finite() && t >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(alloc::format!(
                "time must be finite and nonnegative, got {t}"
            )))
        }
    }

    /// `lambda_d(t | x_d)` for a single point.
    pub fn population_hazard(&self, d: usize, t: f64, x_d: f64) -> Result<f64> {
        Ok(self.population_hazards(d, &[(t, x_d)])?[0])
    }

    /// `lambda_d` at many `(t, x_d)` points.
    pub fn population_hazards(&self, d: usize, points: &[(f64, f64)]) -> Result<Vec<f64>> {
        let net = self
            .hazards
            .get(d)
            .ok_or_else(|| invalid(alloc::format!("covariate index {d} out of range")))?;
        let mut input = Matrix::zeros(points.len(), 2);
        for (r, &(t, xd)) in points.iter().enumerate() {
            Self::check_t(t)?;
            input.set(r, 0, t / self.time_scale);
            input.set(r, 1, xd);
        }
        let s = self.time_scale;
        Ok(net.raw(&input)?.into_iter().map(|v| v / s).collect())
    }

    /// Rows of covariate vectors as a matrix, validating widths.
    pub(crate) fn design(&self, xs: &[&[f64]]) -> Result<Matrix> {
        let dim = self.dim();
        let mut m = Matrix::zeros(xs.len(), dim);
        for (r, x) in xs.iter().enumerate() {
            self.check_x(x)?;
            m.row_mut(r).copy_from_slice(x);
        }
        Ok(m)
    }

    pub fn assignment_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.assignment_batch(&[x])?.data)
    }

    /// `f(x)` for many patients, `n x C`.
    pub fn assignment_batch(&self, xs: &[&[f64]]) -> Result<Matrix> {
        let design = self.design(xs)?;
        self.assignment.probs(&design)
    }

    /// `w(x) = beta^T f(x)`, on the `D`-simplex.
    pub fn covariate_weight(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.covariate_weights(&[x])?.data)
    }

    /// Covariate weights for many patients, `n x D`.
    pub fn covariate_weights(&self, xs: &[&[f64]]) -> Result<Matrix> {
        let f = self.assignment_batch(xs)?;
        let beta = self.importance.beta();
        let mut w = crate::diffcore::matrix::matmul((&f).into(), (&beta).into());
        // Rounding leaves row sums a few ulps from one; pin them back.
        for r in 0..w.rows {
            let row = w.row_mut(r);
            let s: f64 = row.iter().sum();
            for v in row {
                *v /= s;
            }
        }
        Ok(w)
    }

    /// Per-covariate population hazards at `(patient, time)` points, `n x D`,
    /// per original time unit.
    pub fn component_table(&self, xs: &[&[f64]], points: &[(usize, f64)]) -> Result<Matrix> {
        let dim = self.dim();
        for x in xs {
            self.check_x(x)?;
        }
        let s = self.time_scale;
        let mut table = Matrix::zeros(points.len(), dim);
        let mut input = Matrix::zeros(points.len(), 2);
        for (r, &(_, t)) in points.iter().enumerate() {
            Self::check_t(t)?;
            input.set(r, 0, t / s);
        }
        for (d, net) in self.hazards.iter().enumerate() {
            for (r, &(i, _)) in points.iter().enumerate() {
                input.set(r, 1, xs[i][d]);
            }
            for (r, v) in net.raw(&input)?.into_iter().enumerate() {
                table.set(r, d, v / s);
            }
        }
        Ok(table)
    }

    /// Marginal hazards at `(patient, time)` points.
    pub fn marginal_hazards(&self, xs: &[&[f64]], points: &[(usize, f64)]) -> Result<Vec<f64>> {
        let weights = self.covariate_weights(xs)?;
        let table = self.component_table(xs, points)?;
        let out: Vec<f64> = points
            .iter()
            .enumerate()
            .map(|(r, &(i, _))| {
                weights
                    .row(i)
                    .iter()
                    .zip(table.row(r))
                    .map(|(w, h)| w * h)
                    .sum()
            })
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("marginal hazard"));
        }
        Ok(out)
    }

    pub fn marginal_hazard(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self.marginal_hazards(&[x], &[(0, t)])?[0])
    }

    /// Individual-level components `w_d(x) lambda_d(t | x_d)` on a time grid:
    /// one curve per covariate, summing to the marginal hazard.
    pub fn hazard_decomposition(&self, x: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("time grid must be sorted"));
        }
        let weights = self.covariate_weight(x)?;
        let points: Vec<(usize, f64)> = times.iter().map(|&t| (0, t)).collect();
        let table = self.component_table(&[x], &points)?;
        Ok((0..self.dim())
            .map(|d| (0..times.len()).map(|r| weights[d] * table.get(r, d)).collect())
            .collect())
    }
}
