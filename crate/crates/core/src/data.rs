//! Survival records, covariate standardisation, cross-validation folds and
//! event-time quantile horizons.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::math;
use crate::rng;

/// One subject: covariates, observed time and event indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub x: Vec<f64>,
    pub t: f64,
    /// `true` when the event was observed, `false` when right-censored.
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(x: Vec<f64>, t: f64, event: bool) -> Result<Self> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(invalid(format!("time must be finite and nonnegative, got {t}")));
        }
        ensure_finite("covariates", &x)?;
        Ok(Self { x, t, event })
    }

    /// `1.0` for events, `0.0` for censored records.
    pub fn delta(&self) -> f64 {
        if self.event {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-column mean and standard deviation used to z-score covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    /// Mean 0, std 1: leaves covariates unchanged.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: alloc::vec![0.0; dim],
            std: alloc::vec![1.0; dim],
        }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, standardized: &[f64]) -> Vec<f64> {
        standardized
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<SurvivalRecord>,
    pub feature_names: Vec<String>,
    /// Statistics already applied to `records`, if the data were standardised.
    pub standardization: Option<StandardizationStats>,
}

impl Dataset {
    /// Validates shared dimensionality and the presence of at least one event.
    pub fn new(records: Vec<SurvivalRecord>, feature_names: Vec<String>) -> Result<Self> {
        let dim = feature_names.len();
        if records.is_empty() {
            return Err(Error::InsufficientData("dataset has no records".into()));
        }
        if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.x.len() != dim) {
            return Err(invalid(format!(
                "record {i} has {} covariates, expected {dim}",
                r.x.len()
            )));
        }
        if !records.iter().any(|r| r.event) {
            return Err(Error::InsufficientData("dataset has no observed events".into()));
        }
        Ok(Self {
            records,
            feature_names,
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Records at `indices`, cloned.
    pub fn select(&self, indices: &[usize]) -> Vec<SurvivalRecord> {
        indices.iter().map(|&i| self.records[i].clone()).collect()
    }

    pub fn max_time(&self) -> f64 {
        self.records.iter().map(|r| r.t).fold(0.0, f64::max)
    }
}

/// Sample mean and sample (n - 1) standard deviation of every column.
pub fn column_stats(records: &[SurvivalRecord], dim: usize) -> Result<StandardizationStats> {
    let n = records.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "standardisation needs at least two records".into(),
        ));
    }
    let mut mean = alloc::vec![0.0; dim];
    for r in records {
        for (m, v) in mean.iter_mut().zip(&r.x) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = alloc::vec![0.0; dim];
    for r in records {
        for ((s, v), m) in var.iter_mut().zip(&r.x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .enumerate()
        .map(|(d, s)| {
            let sd = math::sqrt(s / (n - 1) as f64);
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                log::warn!("covariate {d} is constant; its standard deviation is set to 1");
                1.0
            }
        })
        .collect();
    Ok(StandardizationStats { mean, std })
}

/// Z-scores every covariate column with the sample standard deviation.
/// Constant columns are centred and keep scale 1. Times and events are
/// untouched.
pub fn standardize(d: &Dataset) -> Result<(Dataset, StandardizationStats)> {
    let stats = column_stats(&d.records, d.dim())?;
    let records = d
        .records
        .iter()
        .map(|r| SurvivalRecord {
            x: stats.apply(&r.x),
            t: r.t,
            event: r.event,
        })
        .collect();
    let out = Dataset {
        records,
        feature_names: d.feature_names.clone(),
        standardization: Some(stats.clone()),
    };
    Ok((out, stats))
}

/// Index partition for one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Share of the non-test records held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.3;

/// `k`-fold splits of `0..n`.
///
/// The indices are shuffled once with stream 0 of `seed` and dealt
/// round-robin into `k` test folds (fold `f` gets positions `f, f + k, ...`).
/// For each fold the remaining indices, in permuted order, are shuffled again
/// with stream `f + 1` and the first `round(0.3 * len)` become validation.
/// Index lists are returned sorted.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(invalid("at least two folds are required"));
    }
    if k > n {
        return Err(invalid(format!("cannot split {n} records into {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::stream(seed, 0), &mut perm);

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let mut test = Vec::new();
        let mut rest = Vec::new();
        for (pos, &idx) in perm.iter().enumerate() {
            if pos % k == f {
                test.push(idx);
            } else {
                rest.push(idx);
            }
        }
        rng::shuffle(&mut rng::stream(seed, f as u64 + 1), &mut rest);
        let n_val = libm::round(VALIDATION_FRACTION * rest.len() as f64) as usize;
        let mut validation = rest[..n_val].to_vec();
        let mut train = rest[n_val..].to_vec();
        test.sort_unstable();
        validation.sort_unstable();
        train.sort_unstable();
        folds.push(FoldSplit {
            fold: f,
            train,
            validation,
            test,
            seed,
        });
    }
    Ok(folds)
}

/// Linear-interpolation quantile of sorted data (`(n - 1) q` position).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Empirical quantiles of the uncensored event times, linear interpolation
/// between order statistics. Each `q` must lie strictly inside `(0, 1)`.
pub fn quantile_horizons(records: &[SurvivalRecord], quantiles: &[f64]) -> Result<Vec<f64>> {
    if let Some(q) = quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(invalid(format!("quantile {q} is outside (0, 1)")));
    }
    let mut times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.t).collect();
    if times.is_empty() {
        return Err(Error::InsufficientData("no uncensored records".into()));
    }
    times.sort_by(f64::total_cmp);
    Ok(quantiles.iter().map(|&q| quantile_sorted(&times, q)).collect())
}

/// Reads a dataset from a CSV file with a header row.
///
/// `time_column` and `event_column` name the outcome columns. Every other
/// column becomes a covariate, in file order. Events must be 0 or 1.
#[cfg(feature = "std")]
pub fn load_csv(
    path: impl AsRef<std::path::Path>,
    time_column: &str,
    event_column: &str,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(file), time_column, event_column)
}

/// [`load_csv`] over any reader.
#[cfg(feature = "std")]
pub fn read_csv<R: std::io::Read>(
    reader: R,
    time_column: &str,
    event_column: &str,
) -> Result<Dataset> {
    use alloc::string::ToString;

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let parse_err = |line: u64, column: &str, message: String| Error::Parse {
        line,
        column: column.to_string(),
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, "", e.to_string()))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, name, "missing column".into()))
    };
    let time_idx = find(time_column)?;
    let event_idx = find(event_column)?;
    if time_idx == event_idx {
        return Err(invalid("time and event columns must differ"));
    }
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != time_idx && i != event_idx)
        .collect();
    let feature_names: Vec<String> = feature_idx.iter().map(|&i| headers[i].to_string()).collect();

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, "", e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let number = |i: usize| -> Result<f64> {
            let cell = row[i].trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line, &headers[i], format!("non-numeric cell \"{cell}\""))),
            }
        };
        let t = number(time_idx)?;
        if t < 0.0 {
            return Err(parse_err(line, time_column, format!("negative time {t}")));
        }
        let event = match row[event_idx].trim().parse::<f64>() {
            Ok(0.0) => false,
            Ok(1.0) => true,
            _ => {
                return Err(parse_err(
                    line,
                    event_column,
                    format!("invalid event indicator \"{}\"", &row[event_idx]),
                ))
            }
        };
        let x = feature_idx.iter().map(|&i| number(i)).collect::<Result<Vec<_>>>()?;
        records.push(SurvivalRecord { x, t, event });
    }
    if records.is_empty() {
        return Err(Error::InsufficientData("file has no data rows".into()));
    }
    let zero_times = records.iter().filter(|r| r.t == 0.0).count();
    if zero_times > 0 {
        log::warn!("{zero_times} records have time 0 and add nothing to the likelihood");
    }
    Dataset::new(records, feature_names)
}
