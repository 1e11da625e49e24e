//! Decoupled mini-batch training.
//!
//! Every batch runs two phases on one shared set of importance samples.
//! Phase 1 computes the gradient of each per-covariate objective `l_d` with
//! the mixture frozen, then applies all of them. Phase 2 takes one step on
//! the assignment network and importance logits against `l / N - R` with the
//! freshly updated hazard nets frozen (evaluated without dropout). The
//! likelihood is divided by the training-set size so that it and the
//! regularizer, both per-record quantities, are on the same scale.
//!
//! Random streams derived from the seed: 1 initialisation, 2 batch order and
//! importance samples, 3 dropout masks, 4 validation samples (restarted each
//! epoch so successive validation scores share random numbers).

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::likelihood::{draw_time_samples, RegularizerWeights};
use super::{AdhamModel, ModelShape};
use crate::data::{Dataset, FoldSplit, StandardizationStats, SurvivalRecord};
use crate::diffcore::{AdamState, Dropout};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Rng};

const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_VALIDATION: u64 = 4;

/// Records per chunk when scoring the validation set.
const VALIDATION_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub shape: ModelShape,
    pub batch_size: usize,
    pub importance_samples: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub regularizer: RegularizerWeights,
    /// Epochs without validation improvement before stopping; `None` runs
    /// every epoch.
    pub patience: Option<usize>,
    pub seed: u64,
    /// Optimise every parameter against `l / N - R` in one step instead of
    /// the two phases. Diagnostic only.
    pub joint: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            shape: ModelShape::default(),
            batch_size: 512,
            importance_samples: 64,
            learning_rate: 1e-3,
            epochs: 4000,
            dropout: 0.0,
            regularizer: RegularizerWeights::default(),
            patience: Some(100),
            seed: 0,
            joint: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(invalid("batch size must be at least 2"));
        }
        if self.importance_samples == 0 {
            return Err(invalid("need at least one importance sample"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout rate must lie in [0, 1)"));
        }
        let w = self.regularizer;
        if !(w.orth >= 0.0 && w.entropy >= 0.0 && w.orth.is_finite() && w.entropy.is_finite()) {
            return Err(invalid("regularizer weights must be nonnegative"));
        }
        if self.shape.subgroups == 0 || self.shape.hidden == 0 {
            return Err(invalid("subgroups and hidden width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-record training log-likelihood estimate over the epoch's batches.
    pub train_loglik: f64,
    /// Per-record validation log-likelihood estimate.
    pub val_loglik: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: AdhamModel,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loglik: f64,
    /// Set when patience ran out before the epoch budget.
    pub stopped_early: bool,
}

/// Trains on a fold's training indices, selecting by its validation indices.
pub fn fit(data: &Dataset, split: &FoldSplit, cfg: &TrainConfig) -> Result<FitOutcome> {
    fit_with_observer(data, split, cfg, &mut |_| {})
}

/// [`fit`], calling `observer` after every epoch.
pub fn fit_with_observer(
    data: &Dataset,
    split: &FoldSplit,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<FitOutcome> {
    let train = data.select(&split.train);
    let validation = data.select(&split.validation);
    let stats = data
        .standardization
        .clone()
        .unwrap_or_else(|| StandardizationStats::identity(data.dim()));
    fit_records(&train, &validation, data.feature_names.clone(), stats, cfg, observer)
}

/// Core training loop on explicit record sets. An empty validation set falls
/// back to scoring the training records.
pub fn fit_records(
    train: &[SurvivalRecord],
    validation: &[SurvivalRecord],
    feature_names: Vec<String>,
    stats: StandardizationStats,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::InsufficientData("need at least two training records".into()));
    }
    if !train.iter().any(|r| r.event) {
        return Err(Error::InsufficientData("training records contain no events".into()));
    }
    let time_scale = train.iter().map(|r| r.t).fold(0.0, f64::max);
    if time_scale <= 0.0 {
        return Err(Error::InsufficientData("all training times are zero".into()));
    }
    let validation = if validation.is_empty() {
        log::warn!("no validation records; early stopping scores the training set");
        train
    } else {
        validation
    };

    let mut init_rng = rng::stream(cfg.seed, STREAM_INIT);
    let mut model = AdhamModel::init(&cfg.shape, feature_names, stats, time_scale, &mut init_rng)?;
    let mut trainer = Trainer::new(&model, cfg);
    let mut batch_rng = rng::stream(cfg.seed, STREAM_BATCH);
    let mut dropout_rng = rng::stream(cfg.seed, STREAM_DROPOUT);

    let mut best = model.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        rng::shuffle(&mut batch_rng, &mut order);
        let batches = batch_bounds(train.len(), cfg.batch_size);
        let mut train_sum = 0.0;
        for (b, &(start, end)) in batches.iter().enumerate() {
            let batch: Vec<SurvivalRecord> =
                order[start..end].iter().map(|&i| train[i].clone()).collect();
            let ll = trainer
                .step(&mut model, &batch, train.len(), &mut batch_rng, &mut dropout_rng)
                .map_err(|e| divergence(e, epoch, b))?;
            train_sum += ll / train.len() as f64;
        }
        let val = validation_loglik(&model, validation, cfg.importance_samples, cfg.seed)
            .map_err(|e| divergence(e, epoch, batches.len()))?;
        let improved = val > best_val;
        if improved {
            best_val = val;
            best_epoch = epoch;
            best = model.clone();
        }
        let entry = EpochLog {
            epoch,
            train_loglik: train_sum / batches.len() as f64,
            val_loglik: val,
            improved,
        };
        log::debug!(
            "epoch {epoch}: train {:.6} validation {:.6}",
            entry.train_loglik,
            entry.val_loglik
        );
        observer(&entry);
        history.push(entry);
        if let Some(p) = cfg.patience {
            if epoch - best_epoch >= p {
                stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    Ok(FitOutcome {
        model: best,
        history,
        best_epoch,
        best_val_loglik: best_val,
        stopped_early,
    })
}

fn divergence(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence { epoch, batch },
        other => other,
    }
}

/// Contiguous batch ranges; a trailing batch of one record joins the one
/// before it since the regularizer needs pairs.
pub(crate) fn batch_bounds(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        out.push((start, end));
        start = end;
    }
    if out.len() > 1 {
        let (s, e) = out[out.len() - 1];
        if e - s < 2 {
            out.pop();
            let last = out.len() - 1;
            out[last].1 = e;
        }
    }
    out
}

/// Per-record validation log-likelihood with the fixed validation stream.
pub fn validation_loglik(
    model: &AdhamModel,
    records: &[SurvivalRecord],
    m: usize,
    seed: u64,
) -> Result<f64> {
    if records.is_empty() {
        return Err(invalid("no records to score"));
    }
    let mut rng = rng::stream(seed, STREAM_VALIDATION);
    let mut total = 0.0;
    for chunk in records.chunks(VALIDATION_CHUNK) {
        total += model.mc_loglik(chunk, m, chunk.len(), &mut rng)?;
    }
    Ok(total / records.len() as f64)
}

struct Trainer<'c> {
    cfg: &'c TrainConfig,
    hazards: Vec<AdamState>,
    assignment: AdamState,
    logits: AdamState,
}

impl<'c> Trainer<'c> {
    fn new(model: &AdhamModel, cfg: &'c TrainConfig) -> Self {
        let lr = cfg.learning_rate;
        Self {
            cfg,
            hazards: model
                .hazards
                .iter()
                .map(|h| AdamState::new(h.params.values.len(), lr))
                .collect(),
            assignment: AdamState::new(model.assignment.params.values.len(), lr),
            logits: AdamState::new(model.importance.logits.len(), lr),
        }
    }

    fn dropout<'r>(&self, rng: &'r mut Rng) -> Option<Dropout<'r>> {
        (self.cfg.dropout > 0.0).then_some(Dropout {
            rate: self.cfg.dropout,
            rng,
        })
    }

    /// One batch; returns the marginal log-likelihood estimate before the
    /// mixture update.
    fn step(
        &mut self,
        model: &mut AdhamModel,
        batch: &[SurvivalRecord],
        n_train: usize,
        batch_rng: &mut Rng,
        dropout_rng: &mut Rng,
    ) -> Result<f64> {
        let m = self.cfg.importance_samples;
        let samples = draw_time_samples(batch, m, batch_rng);
        let inv_n = 1.0 / n_train as f64;
        if self.cfg.joint {
            return self.joint_step(model, batch, &samples, n_train, dropout_rng);
        }

        let mut grads = Vec::with_capacity(model.dim());
        for d in 0..model.dim() {
            let dropout = self.dropout(dropout_rng);
            let (_, g) = model.hazard_objective_gradient(d, batch, &samples, m, n_train, dropout)?;
            grads.push(g);
        }
        for ((net, state), g) in model.hazards.iter_mut().zip(&mut self.hazards).zip(grads) {
            state.update(&mut net.params.values, &negate(g))?;
        }

        let tables = model.hazard_tables(batch, &samples, m)?;
        let dropout = self.dropout(dropout_rng);
        let obj = model.mixture_objective(
            batch,
            &samples,
            m,
            n_train,
            &tables,
            self.cfg.regularizer,
            inv_n,
            1.0,
            dropout,
        )?;
        self.assignment
            .update(&mut model.assignment.params.values, &negate(obj.assignment_grad))?;
        self.logits
            .update(&mut model.importance.logits, &negate(obj.logits_grad))?;
        Ok(obj.loglik)
    }

    fn joint_step(
        &mut self,
        model: &mut AdhamModel,
        batch: &[SurvivalRecord],
        samples: &[f64],
        n_train: usize,
        dropout_rng: &mut Rng,
    ) -> Result<f64> {
        let m = self.cfg.importance_samples;
        let rng = (self.cfg.dropout > 0.0).then_some(dropout_rng);
        let (value, g) = model.joint_objective(
            batch,
            samples,
            m,
            n_train,
            self.cfg.regularizer,
            1.0 / n_train as f64,
            1.0,
            rng,
            self.cfg.dropout,
        )?;
        let mut g = negate(g);
        let mut offset = 0;
        for (net, state) in model.hazards.iter_mut().zip(&mut self.hazards) {
            let len = net.params.values.len();
            state.update(&mut net.params.values, &g[offset..offset + len])?;
            offset += len;
        }
        let len = model.assignment.params.values.len();
        self.assignment
            .update(&mut model.assignment.params.values, &g[offset..offset + len])?;
        offset += len;
        let rest = g.split_off(offset);
        self.logits.update(&mut model.importance.logits, &rest)?;
        // The penalised objective, rescaled to the likelihood's units.
        Ok(value * n_train as f64)
    }
}

fn negate(mut g: Vec<f64>) -> Vec<f64> {
    for v in &mut g {
        *v = -*v;
    }
    g
}
