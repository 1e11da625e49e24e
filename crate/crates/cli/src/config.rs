//! Resolved run configuration.
//!
//! Values come from three layers: built-in defaults, an optional `key = value`
//! file and command-line flags, each overriding the one before.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adham_core::model::{ModelShape, RegularizerWeights, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    /// Outcome column names; required by every command that reads data.
    pub time: Option<String>,
    pub event: Option<String>,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub folds: usize,
    /// Folds to train; empty means all of them.
    pub only_folds: Vec<usize>,
    pub seed: u64,
    pub subgroups: usize,
    pub hidden: usize,
    pub depth: usize,
    pub layer_norm: bool,
    pub add_const: bool,
    pub batch_size: usize,
    pub importance_samples: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub w_orth: f64,
    pub w_ent: f64,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub joint: bool,
    pub quantiles: Vec<f64>,
    pub prediction_samples: usize,
    pub thresholds: Vec<f64>,
    pub time_points: usize,
    /// Largest exported time; defaults to the model's training horizon.
    pub time_max: Option<f64>,
    pub sweep_values: usize,
    pub sweep_min: f64,
    pub sweep_max: f64,
    pub patients: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            data: None,
            time: None,
            event: None,
            out: PathBuf::from("adham-out"),
            model: None,
            folds: 5,
            only_folds: Vec::new(),
            seed: train.seed,
            subgroups: train.shape.subgroups,
            hidden: train.shape.hidden,
            depth: train.shape.depth,
            layer_norm: train.shape.layer_norm,
            add_const: train.shape.add_const,
            batch_size: train.batch_size,
            importance_samples: train.importance_samples,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            dropout: train.dropout,
            w_orth: train.regularizer.orth,
            w_ent: train.regularizer.entropy,
            patience: train.patience,
            joint: train.joint,
            quantiles: vec![0.25, 0.5, 0.75],
            prediction_samples: 64,
            thresholds: vec![0.8],
            time_points: 50,
            time_max: None,
            sweep_values: 5,
            sweep_min: -2.0,
            sweep_max: 2.0,
            patients: Vec::new(),
        }
    }
}

/// Every recognised key, in the order `to_pairs` writes them.
pub const KEYS: &[&str] = &[
    "data",
    "time",
    "event",
    "out",
    "model",
    "folds",
    "only_folds",
    "seed",
    "subgroups",
    "hidden",
    "depth",
    "layer_norm",
    "add_const",
    "batch_size",
    "importance_samples",
    "learning_rate",
    "epochs",
    "dropout",
    "w_orth",
    "w_ent",
    "patience",
    "joint",
    "quantiles",
    "prediction_samples",
    "h",
    "time_points",
    "time_max",
    "sweep_values",
    "sweep_min",
    "sweep_max",
    "patients",
];

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value for {key}: \"{value}\"")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| scalar(key, s))
        .collect()
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, CliError> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => scalar(key, v).map(Some),
    }
}

fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn show<T: Display>(value: &Option<T>) -> String {
    value.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "data" => self.data = optional(key, v)?,
            "time" => self.time = optional(key, v)?,
            "event" => self.event = optional(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "model" => self.model = optional(key, v)?,
            "folds" => self.folds = scalar(key, v)?,
            "only_folds" => self.only_folds = list(key, v)?,
            "seed" => self.seed = scalar(key, v)?,
            "subgroups" => self.subgroups = scalar(key, v)?,
            "hidden" => self.hidden = scalar(key, v)?,
            "depth" => self.depth = scalar(key, v)?,
            "layer_norm" => self.layer_norm = scalar(key, v)?,
            "add_const" => self.add_const = scalar(key, v)?,
            "batch_size" => self.batch_size = scalar(key, v)?,
            "importance_samples" => self.importance_samples = scalar(key, v)?,
            "learning_rate" => self.learning_rate = scalar(key, v)?,
            "epochs" => self.epochs = scalar(key, v)?,
            "dropout" => self.dropout = scalar(key, v)?,
            "w_orth" => self.w_orth = scalar(key, v)?,
            "w_ent" => self.w_ent = scalar(key, v)?,
            "patience" => self.patience = optional(key, v)?,
            "joint" => self.joint = scalar(key, v)?,
            "quantiles" => self.quantiles = list(key, v)?,
            "prediction_samples" => self.prediction_samples = scalar(key, v)?,
            "h" => self.thresholds = list(key, v)?,
            "time_points" => self.time_points = scalar(key, v)?,
            "time_max" => self.time_max = optional(key, v)?,
            "sweep_values" => self.sweep_values = scalar(key, v)?,
            "sweep_min" => self.sweep_min = scalar(key, v)?,
            "sweep_max" => self.sweep_max = scalar(key, v)?,
            "patients" => self.patients = list(key, v)?,
            _ => return Err(CliError::Usage(format!("unknown configuration key \"{key}\""))),
        }
        Ok(())
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| show(&p.as_ref().map(|p| p.display()));
        KEYS.iter()
            .map(|&k| {
                let v = match k {
                    "data" => path(&self.data),
                    "time" => show(&self.time),
                    "event" => show(&self.event),
                    "out" => self.out.display().to_string(),
                    "model" => path(&self.model),
                    "folds" => self.folds.to_string(),
                    "only_folds" => join(&self.only_folds),
                    "seed" => self.seed.to_string(),
                    "subgroups" => self.subgroups.to_string(),
                    "hidden" => self.hidden.to_string(),
                    "depth" => self.depth.to_string(),
                    "layer_norm" => self.layer_norm.to_string(),
                    "add_const" => self.add_const.to_string(),
                    "batch_size" => self.batch_size.to_string(),
                    "importance_samples" => self.importance_samples.to_string(),
                    "learning_rate" => self.learning_rate.to_string(),
                    "epochs" => self.epochs.to_string(),
                    "dropout" => self.dropout.to_string(),
                    "w_orth" => self.w_orth.to_string(),
                    "w_ent" => self.w_ent.to_string(),
                    "patience" => show(&self.patience),
                    "joint" => self.joint.to_string(),
                    "quantiles" => join(&self.quantiles),
                    "prediction_samples" => self.prediction_samples.to_string(),
                    "h" => join(&self.thresholds),
                    "time_points" => self.time_points.to_string(),
                    "time_max" => show(&self.time_max),
                    "sweep_values" => self.sweep_values.to_string(),
                    "sweep_min" => self.sweep_min.to_string(),
                    "sweep_max" => self.sweep_max.to_string(),
                    "patients" => join(&self.patients),
                    _ => unreachable!("every key is listed"),
                };
                (k, v)
            })
            .collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Config file text that reproduces this configuration.
    pub fn to_file_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        self.apply_text(&text)
    }

    /// Time and event column names, or a usage error naming the missing flag.
    pub fn outcome_columns(&self) -> Result<(&str, &str), CliError> {
        let time = self.time.as_deref().ok_or_else(|| CliError::Usage("missing --time (time column name)".into()))?;
        let event = self.event.as_deref().ok_or_else(|| CliError::Usage("missing --event (event column name)".into()))?;
        Ok((time, event))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            shape: ModelShape {
                subgroups: self.subgroups,
                hidden: self.hidden,
                depth: self.depth,
                layer_norm: self.layer_norm,
                add_const: self.add_const,
            },
            batch_size: self.batch_size,
            importance_samples: self.importance_samples,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            dropout: self.dropout,
            regularizer: RegularizerWeights {
                orth: self.w_orth,
                entropy: self.w_ent,
            },
            patience: self.patience,
            seed,
            joint: self.joint,
        }
    }

    /// Checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.folds < 2 {
            return usage("folds must be at least 2");
        }
        if let Some(f) = self.only_folds.iter().find(|&&f| f >= self.folds) {
            return Err(CliError::Usage(format!("fold {f} does not exist with {} folds", self.folds)));
        }
        if self.quantiles.is_empty() || self.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return usage("quantiles must lie strictly between 0 and 1");
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
            return usage("refinement threshold h must lie in (0, 1]");
        }
        if self.prediction_samples == 0 {
            return usage("prediction_samples must be positive");
        }
        if self.time_points == 0 || self.sweep_values == 0 {
            return usage("export grids need at least one point");
        }
        if !(self.sweep_min <= self.sweep_max) {
            return usage("sweep_min must not exceed sweep_max");
        }
        if let Some(t) = self.time_max {
            if !(t > 0.0 && t.is_finite()) {
                return usage("time_max must be positive");
            }
        }
        self.train_config(self.seed)
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}
