use std::collections::BTreeMap;

use adham_core::data::{split_folds, standardize};
use adham_core::model::{fit_with_observer, EpochLog};
use serde::Serialize;

use crate::artifacts::{read_dataset, Lineage, ModelFile, Outputs, MODEL_FILE};
use crate::config::RunConfig;
use crate::error::CliResult;

/// Training seed of fold `fold`, derived from the master seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold as u64)
}

#[derive(Serialize)]
struct TrainLog<'a> {
    config: BTreeMap<String, String>,
    fold: usize,
    train_seed: u64,
    train_records: usize,
    validation_records: usize,
    test_records: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_validation_loglik: f64,
    stopped_early: bool,
    history: &'a [EpochLog],
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let (raw, data_sha) = read_dataset(cfg)?;
    let (data, _) = standardize(&raw)?;
    let splits = split_folds(data.n(), cfg.folds, cfg.seed)?;
    let mut out = Outputs::create(&cfg.out)?;
    out.write("config.txt", cfg.to_file_text().as_bytes())?;

    for split in &splits {
        if !cfg.only_folds.is_empty() && !cfg.only_folds.contains(&split.fold) {
            continue;
        }
        let seed = fold_seed(cfg.seed, split.fold);
        let tc = cfg.train_config(seed);
        log::info!(
            "fold {}: {} train, {} validation, {} test records",
            split.fold,
            split.train.len(),
            split.validation.len(),
            split.test.len()
        );
        let fold = split.fold;
        let outcome = fit_with_observer(&data, split, &tc, &mut |e| {
            log::info!(
                "fold {fold} epoch {}: train {:.6} validation {:.6}{}",
                e.epoch,
                e.train_loglik,
                e.val_loglik,
                if e.improved { " *" } else { "" }
            );
        })?;
        let dir = format!("fold{fold}");
        let lineage = Lineage {
            fold,
            folds: cfg.folds,
            split_seed: cfg.seed,
            train_seed: seed,
            data_sha256: data_sha.clone(),
            best_epoch: Some(outcome.best_epoch),
            parent_sha256: None,
            refinement: None,
        };
        out.write_json(format!("{dir}/{MODEL_FILE}"), &ModelFile::new(lineage, outcome.model))?;

        let rows: Vec<Vec<String>> = outcome
            .history
            .iter()
            .map(|e| {
                vec![
                    e.epoch.to_string(),
                    e.train_loglik.to_string(),
                    e.val_loglik.to_string(),
                    e.improved.to_string(),
                ]
            })
            .collect();
        let header = ["epoch", "train_loglik", "validation_loglik", "improved"].map(String::from);
        out.write_csv(format!("{dir}/train_log.csv"), &header, &rows)?;
        out.write_json(
            format!("{dir}/train_log.json"),
            &TrainLog {
                config: cfg.to_map(),
                fold,
                train_seed: seed,
                train_records: split.train.len(),
                validation_records: split.validation.len(),
                test_records: split.test.len(),
                epochs_run: outcome.history.len(),
                best_epoch: outcome.best_epoch,
                best_validation_loglik: outcome.best_val_loglik,
                stopped_early: outcome.stopped_early,
                history: &outcome.history,
            },
        )?;
        log::info!(
            "fold {fold}: best epoch {} validation {:.6}{}",
            outcome.best_epoch,
            outcome.best_val_loglik,
            if outcome.stopped_early { ", stopped early" } else { "" }
        );
    }
    out.finish("train", cfg)
}
