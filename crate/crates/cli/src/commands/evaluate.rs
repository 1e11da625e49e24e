use adham_core::metrics::{evaluate, EvaluationReport};
use serde::Serialize;

use crate::artifacts::{na, read_dataset, read_models, lineage_split, standardized_for, Outputs};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

const METRICS: [&str; 3] = ["c_index", "brier", "auroc"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub quantile: f64,
    pub horizon: f64,
    pub folds: usize,
    /// Per metric: mean over folds where it is defined, and its standard error.
    pub mean: [Option<f64>; 3],
    pub sem: [Option<f64>; 3],
}

/// Mean and standard error of the mean (`n - 1` deviation); the error is
/// undefined for fewer than two values.
pub fn mean_sem(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some((var / n as f64).sqrt()))
}

pub fn summarize(reports: &[EvaluationReport]) -> Vec<SummaryRow> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    (0..first.rows.len())
        .map(|k| {
            let mut mean = [None; 3];
            let mut sem = [None; 3];
            for m in 0..3 {
                let values: Vec<f64> = reports
                    .iter()
                    .filter_map(|r| {
                        let row = &r.rows[k];
                        [row.c_index, row.brier, row.auroc][m]
                    })
                    .collect();
                (mean[m], sem[m]) = mean_sem(&values);
            }
            SummaryRow {
                quantile: first.rows[k].quantile,
                horizon: first.rows[k].horizon,
                folds: reports.len(),
                mean,
                sem,
            }
        })
        .collect()
}

fn report_rows(report: &EvaluationReport) -> Vec<Vec<String>> {
    report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.quantile.to_string(),
                r.horizon.to_string(),
                na(r.c_index),
                na(r.brier),
                na(r.auroc),
            ]
        })
        .collect()
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let model_path = cfg
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("--model is required".into()))?;
    let models = read_models(model_path)?;
    let (raw, data_sha) = read_dataset(cfg)?;
    let mut out = Outputs::create(&cfg.out)?;

    let mut reports = Vec::new();
    for loaded in &models {
        let model = &loaded.file.model;
        let data = standardized_for(model, &raw)?;
        let split = lineage_split(&loaded.file.lineage, &data, &data_sha)?;
        let mut report = evaluate(
            model,
            &data,
            &split,
            &cfg.quantiles,
            cfg.prediction_samples,
            cfg.seed,
        )?;
        report.model_hash = Some(loaded.sha256.clone());
        let fold = report.fold;
        let header = ["quantile", "horizon", "c_index", "brier", "auroc"].map(String::from);
        out.write_csv(format!("evaluation/fold{fold}.csv"), &header, &report_rows(&report))?;
        out.write_json(format!("evaluation/fold{fold}.json"), &report)?;
        for r in &report.rows {
            log::info!(
                "fold {fold} q={} horizon {}: c-index {} brier {} auroc {}",
                r.quantile,
                r.horizon,
                na(r.c_index),
                na(r.brier),
                na(r.auroc)
            );
        }
        reports.push(report);
    }

    let summary = summarize(&reports);
    let mut header = vec!["quantile".to_string(), "horizon".to_string(), "folds".to_string()];
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_sem"));
    }
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            let mut row = vec![s.quantile.to_string(), s.horizon.to_string(), s.folds.to_string()];
            for m in 0..3 {
                row.push(na(s.mean[m]));
                row.push(na(s.sem[m]));
            }
            row
        })
        .collect();
    out.write_csv("evaluation/summary.csv", &header, &rows)?;
    out.write_json("evaluation/summary.json", &summary)?;
    for s in &summary {
        println!(
            "q={} c-index {} ± {}  brier {} ± {}  auroc {} ± {}",
            s.quantile,
            na(s.mean[0]),
            na(s.sem[0]),
            na(s.mean[1]),
            na(s.sem[1]),
            na(s.mean[2]),
            na(s.sem[2])
        );
    }
    out.finish("evaluate", cfg)
}
