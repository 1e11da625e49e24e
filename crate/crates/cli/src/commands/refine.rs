use adham_core::refinement::{apply_merge, combine_clusters, correlation_matrix, CorrelationMatrix};
use serde::Serialize;

use crate::artifacts::{
    lineage_split, read_dataset, read_models, standardized_for, Lineage, ModelFile, Outputs, MODEL_FILE,
};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct PlanReport<'a> {
    threshold: f64,
    fold: usize,
    parent_sha256: &'a str,
    original_subgroups: usize,
    refined_subgroups: usize,
    groups: &'a [Vec<usize>],
}

fn rho_table(rho: &CorrelationMatrix) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["subgroup".to_string()];
    header.extend((0..rho.size).map(|c| c.to_string()));
    let rows = (0..rho.size)
        .map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(rho.row(i).iter().map(ToString::to_string));
            row
        })
        .collect();
    (header, rows)
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let model_path = cfg
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("--model is required".into()))?;
    let models = read_models(model_path)?;
    let (raw, data_sha) = read_dataset(cfg)?;
    let mut out = Outputs::create(&cfg.out)?;
    let mut summary = Vec::new();

    for loaded in &models {
        let model = &loaded.file.model;
        let lineage = &loaded.file.lineage;
        let data = standardized_for(model, &raw)?;
        let split = lineage_split(lineage, &data, &data_sha)?;
        let sample = data.select(&split.train);
        let rho = correlation_matrix(&model.importance)?;
        let (header, rows) = rho_table(&rho);

        for &h in &cfg.thresholds {
            let plan = combine_clusters(&rho, h)?;
            let refined = apply_merge(model, &plan, &sample)?;
            let dir = format!("h{h}/fold{}", lineage.fold);
            out.write_csv(format!("{dir}/rho_before.csv"), &header, &rows)?;
            let (h_after, rows_after) = rho_table(&correlation_matrix(&refined.importance)?);
            out.write_csv(format!("{dir}/rho_after.csv"), &h_after, &rows_after)?;
            out.write_json(
                format!("{dir}/plan.json"),
                &PlanReport {
                    threshold: h,
                    fold: lineage.fold,
                    parent_sha256: &loaded.sha256,
                    original_subgroups: model.subgroups(),
                    refined_subgroups: plan.len(),
                    groups: &plan.groups,
                },
            )?;
            log::info!(
                "fold {} h={h}: {} -> {} subgroups",
                lineage.fold,
                model.subgroups(),
                plan.len()
            );
            summary.push(vec![
                lineage.fold.to_string(),
                h.to_string(),
                model.subgroups().to_string(),
                plan.len().to_string(),
            ]);
            let child = Lineage {
                parent_sha256: Some(loaded.sha256.clone()),
                refinement: Some(plan),
                ..lineage.clone()
            };
            out.write_json(format!("{dir}/{MODEL_FILE}"), &ModelFile::new(child, refined))?;
        }
    }
    let header = ["fold", "h", "original_subgroups", "refined_subgroups"].map(String::from);
    out.write_csv("refinement_summary.csv", &header, &summary)?;
    for row in &summary {
        println!("fold {} h={}: {} -> {} subgroups", row[0], row[1], row[2], row[3]);
    }
    out.finish("refine", cfg)
}
