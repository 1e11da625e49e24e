use adham_core::metrics::{individual_survival, population_survival};
use adham_core::rng;

use crate::artifacts::{na, read_model, standardized_for, Outputs};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// `n` evenly spaced values from `lo` to `hi`; a single value sits at `lo`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// File-name-safe form of a column name.
fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn s(v: f64) -> String {
    v.to_string()
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let model_path = cfg
        .model
        .as_ref()
        .ok_or_else(|| CliError::Usage("--model is required".into()))?;
    if model_path.is_dir() {
        return Err(CliError::Usage("export takes a single model file".into()));
    }
    let loaded = read_model(model_path)?;
    let model = &loaded.file.model;
    let names = &model.feature_names;
    let dim = model.dim();
    let t_max = cfg.time_max.unwrap_or(model.time_scale);
    let times = linspace(t_max / cfg.time_points as f64, t_max, cfg.time_points);
    let m = cfg.prediction_samples;
    let mut out = Outputs::create(&cfg.out)?;

    // Population curves over a sweep of standardized covariate values.
    let sweep = linspace(cfg.sweep_min, cfg.sweep_max, cfg.sweep_values);
    let header = ["value", "value_standardized", "time", "survival"].map(String::from);
    for d in 0..dim {
        let mut rows = Vec::with_capacity(sweep.len() * times.len());
        let mut rng = rng::stream(cfg.seed, d as u64);
        for &z in &sweep {
            let value = z * model.stats.std[d] + model.stats.mean[d];
            let curve = population_survival(model, d, z, &times, m, &mut rng)?;
            for (t, sv) in curve.times.iter().zip(&curve.values) {
                rows.push(vec![s(value), s(z), s(*t), s(*sv)]);
            }
        }
        out.write_csv(format!("population/{d:02}_{}.csv", slug(&names[d])), &header, &rows)?;
    }

    // Subgroup importance matrix.
    let beta = model.importance.beta();
    let mut header = vec!["subgroup".to_string()];
    header.extend(names.iter().cloned());
    let rows: Vec<Vec<String>> = (0..beta.rows)
        .map(|c| {
            let mut row = vec![c.to_string()];
            row.extend(beta.row(c).iter().map(|v| s(*v)));
            row
        })
        .collect();
    out.write_csv("subgroups/beta.csv", &header, &rows)?;

    if let Some(path) = &cfg.data {
        let (time, event) = cfg.outcome_columns()?;
        let raw = adham_core::data::load_csv(path, time, event)?;
        let data = standardized_for(model, &raw)?;
        let xs: Vec<&[f64]> = data.records.iter().map(|r| r.x.as_slice()).collect();
        let probs = model.assignment_batch(&xs)?;
        let c_count = model.subgroups();

        // Mean raw covariates of the patients whose most likely subgroup is c.
        let mut sums = vec![vec![0.0; dim]; c_count];
        let mut counts = vec![0usize; c_count];
        for (i, r) in raw.records.iter().enumerate() {
            let row = probs.row(i);
            let c = (0..c_count).fold(0, |best, k| if row[k] > row[best] { k } else { best });
            counts[c] += 1;
            for (acc, v) in sums[c].iter_mut().zip(&r.x) {
                *acc += v;
            }
        }
        let mut header = vec!["subgroup".to_string(), "patients".to_string()];
        header.extend(names.iter().cloned());
        let rows: Vec<Vec<String>> = (0..c_count)
            .map(|c| {
                let mut row = vec![c.to_string(), counts[c].to_string()];
                row.extend(sums[c].iter().map(|&acc| {
                    na((counts[c] > 0).then(|| acc / counts[c] as f64))
                }));
                row
            })
            .collect();
        out.write_csv("subgroups/means.csv", &header, &rows)?;

        // Individual decompositions for the requested patients.
        let mut assign_header = vec!["patient".to_string()];
        assign_header.extend((0..c_count).map(|c| format!("subgroup_{c}")));
        let mut weight_header = vec!["patient".to_string()];
        weight_header.extend(names.iter().cloned());
        let mut assign_rows = Vec::new();
        let mut weight_rows = Vec::new();
        for &p in &cfg.patients {
            let record = data.records.get(p).ok_or_else(|| {
                CliError::Data(format!("patient index {p} is out of range (dataset has {} rows)", data.n()))
            })?;
            let x = &record.x;
            let parts = model.hazard_decomposition(x, &times)?;
            let marginal = model.marginal_hazards(&[x], &times.iter().map(|&t| (0, t)).collect::<Vec<_>>())?;
            let mut rng = rng::stream(cfg.seed, (dim + p) as u64);
            let surv = individual_survival(model, x, &times, m, &mut rng)?;
            let mut header = vec!["time".to_string(), "marginal_hazard".to_string()];
            header.extend(names.iter().cloned());
            header.push("survival".to_string());
            let rows: Vec<Vec<String>> = (0..times.len())
                .map(|k| {
                    let mut row = vec![s(times[k]), s(marginal[k])];
                    row.extend(parts.iter().map(|curve| s(curve[k])));
                    row.push(s(surv.values[k]));
                    row
                })
                .collect();
            out.write_csv(format!("individual/patient_{p}.csv"), &header, &rows)?;

            let mut row = vec![p.to_string()];
            row.extend(model.assignment_probs(x)?.into_iter().map(s));
            assign_rows.push(row);
            let mut row = vec![p.to_string()];
            row.extend(model.covariate_weight(x)?.into_iter().map(s));
            weight_rows.push(row);
        }
        if !cfg.patients.is_empty() {
            out.write_csv("individual/assignments.csv", &assign_header, &assign_rows)?;
            out.write_csv("individual/covariate_weights.csv", &weight_header, &weight_rows)?;
        }
    } else if !cfg.patients.is_empty() {
        return Err(CliError::Usage("--patients needs --data".into()));
    }
    out.finish("export", cfg)
}
