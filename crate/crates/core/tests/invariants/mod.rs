//! Structural invariants as property checks, shared by the `properties`
//! and `acceptance` test targets.

use adham_core::data::{quantile_horizons, split_folds, standardize, Dataset, StandardizationStats, SurvivalRecord};
use adham_core::diffcore::Matrix;
use adham_core::metrics::{
    auroc, c_index, individual_survival, individual_survival_decomposition, km_censoring, population_survival,
};
use adham_core::model::{AdhamModel, ModelShape};
use adham_core::refinement::{apply_merge, combine_clusters, correlation_matrix, correlation_of_rows, RefinementPlan};
use adham_core::rng;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

/// Generated cases per property.
pub const CASES: u32 = 150;

pub struct Property {
    pub name: &'static str,
    pub check: fn(&mut TestRunner) -> Result<(), String>,
}

/// Deterministic runner without failure persistence.
pub fn runner() -> TestRunner {
    let config = Config { cases: CASES, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn all() -> Vec<Property> {
    vec![
        Property { name: "simplex", check: simplex },
        Property { name: "positivity", check: positivity },
        Property { name: "monotone survival", check: monotone_survival },
        Property { name: "decomposition identity", check: decomposition },
        Property { name: "estimator determinism", check: determinism },
        Property { name: "fold partition determinism", check: folds },
        Property { name: "standardize idempotence", check: standardize_twice },
        Property { name: "quantile monotonicity", check: quantiles },
        Property { name: "ranking metric invariance", check: ranking_invariance },
        Property { name: "clustering monotone in h", check: clustering_monotone },
        Property { name: "merged model simplex", check: merged_simplex },
    ]
}

fn small_model(seed: u64, dim: usize, subgroups: usize, hidden: usize, depth: usize) -> AdhamModel {
    let shape = ModelShape { subgroups, hidden, depth, layer_norm: depth.is_multiple_of(2), add_const: seed.is_multiple_of(3) };
    let names = (0..dim).map(|d| format!("x{d}")).collect();
    let mut r = rng::seeded(seed);
    let mut model = AdhamModel::init(&shape, names, StandardizationStats::identity(dim), 2.0, &mut r).unwrap();
    // spread the importance rows beyond the narrow initial range
    for l in &mut model.importance.logits {
        *l = rng::uniform_range(&mut r, -3.0, 3.0);
    }
    model
}

fn model_strategy() -> impl Strategy<Value = AdhamModel> {
    (any::<u64>(), 1usize..=5, 1usize..=6, 1usize..=6, 0usize..=2)
        .prop_map(|(seed, dim, c, h, depth)| small_model(seed, dim, c, h, depth))
}

fn with_patients(n: usize) -> impl Strategy<Value = (AdhamModel, Vec<Vec<f64>>)> {
    model_strategy().prop_flat_map(move |m| {
        let dim = m.dim();
        (Just(m), prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 1..=n))
    })
}

fn records(xs: &[Vec<f64>], times: &[f64], events: &[bool]) -> Vec<SurvivalRecord> {
    xs.iter()
        .zip(times.iter().zip(events))
        .map(|(x, (&t, &e))| SurvivalRecord::new(x.clone(), t, e).unwrap())
        .collect()
}

fn grid(n: usize, t_max: f64) -> Vec<f64> {
    (1..=n).map(|k| t_max * k as f64 / n as f64).collect()
}

fn simplex(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&with_patients(6), |(model, xs)| {
            for x in &xs {
                let f = model.assignment_probs(x).unwrap();
                prop_assert_eq!(f.len(), model.subgroups());
                prop_assert!(f.iter().all(|&p| (0.0..=1.0).contains(&p)));
                prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let w = model.covariate_weight(x).unwrap();
                prop_assert!(w.iter().all(|&p| p >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let beta = model.importance.beta();
            for c in 0..beta.rows {
                prop_assert!((beta.row(c).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn positivity(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&(with_patients(4), 0.0f64..10.0), |((model, xs), t)| {
            for x in &xs {
                prop_assert!(model.marginal_hazard(x, t).unwrap() > 0.0);
                for d in 0..model.dim() {
                    prop_assert!(model.population_hazard(d, t, x[d]).unwrap() > 0.0);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn monotone_survival(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&(with_patients(3), any::<u64>(), 1usize..12), |((model, xs), seed, n)| {
            let times = grid(n, 3.0);
            for x in &xs {
                let s = individual_survival(&model, x, &times, 4, &mut rng::seeded(seed)).unwrap();
                prop_assert!(s.values.iter().all(|&v| v > 0.0 && v <= 1.0));
                prop_assert!(s.values.windows(2).all(|w| w[1] <= w[0]));
            }
            let p = population_survival(&model, 0, xs[0][0], &times, 4, &mut rng::seeded(seed)).unwrap();
            prop_assert!(p.values.windows(2).all(|w| w[1] <= w[0]));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn decomposition(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&(with_patients(2), any::<u64>()), |((model, xs), seed)| {
            let times = grid(7, 2.5);
            let x = &xs[0];
            let parts = model.hazard_decomposition(x, &times).unwrap();
            for (k, &t) in times.iter().enumerate() {
                let total: f64 = parts.iter().map(|p| p[k]).sum();
                let marginal = model.marginal_hazard(x, t).unwrap();
                prop_assert!((total - marginal).abs() <= 1e-12 * marginal.max(1.0));
            }
            let factors = individual_survival_decomposition(&model, x, &times, 5, &mut rng::seeded(seed)).unwrap();
            let whole = individual_survival(&model, x, &times, 5, &mut rng::seeded(seed)).unwrap();
            for k in 0..times.len() {
                let product: f64 = factors.iter().map(|f| f.values[k]).product();
                prop_assert!((product - whole.values[k]).abs() <= 1e-12);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn determinism(runner: &mut TestRunner) -> Result<(), String> {
    let strategy = (
        with_patients(5),
        any::<u64>(),
        prop::collection::vec(0.0f64..3.0, 5),
        prop::collection::vec(any::<bool>(), 5),
    );
    runner
        .run(&strategy, |((model, xs), seed, raw_t, events)| {
            let batch = records(&xs, &raw_t[..xs.len()], &events[..xs.len()]);
            let a = model.mc_loglik(&batch, 6, 100, &mut rng::seeded(seed)).unwrap();
            let b = model.mc_loglik(&batch, 6, 100, &mut rng::seeded(seed)).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            let a = model.mc_loglik_d(0, &batch, 6, 100, &mut rng::seeded(seed)).unwrap();
            let b = model.mc_loglik_d(0, &batch, 6, 100, &mut rng::seeded(seed)).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            let times = grid(4, 2.0);
            let s1 = individual_survival(&model, &xs[0], &times, 3, &mut rng::seeded(seed)).unwrap();
            let s2 = individual_survival(&model, &xs[0], &times, 3, &mut rng::seeded(seed)).unwrap();
            prop_assert_eq!(s1, s2);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn folds(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&(2usize..200, 2usize..8, any::<u64>()), |(n, k, seed)| {
            prop_assume!(k <= n);
            let folds = split_folds(n, k, seed).unwrap();
            prop_assert_eq!(&folds, &split_folds(n, k, seed).unwrap());
            let mut tests: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
            tests.sort_unstable();
            prop_assert_eq!(tests, (0..n).collect::<Vec<_>>());
            for f in &folds {
                let mut all: Vec<usize> = f.train.iter().chain(&f.validation).chain(&f.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn standardize_twice(runner: &mut TestRunner) -> Result<(), String> {
    let strategy = prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 8), 1..4);
    runner
        .run(&strategy, |cols| {
            let names = (0..cols.len()).map(|d| format!("x{d}")).collect();
            let recs = (0..8)
                .map(|i| SurvivalRecord::new(cols.iter().map(|c| c[i]).collect(), 1.0, true).unwrap())
                .collect();
            let data = Dataset::new(recs, names).unwrap();
            let (once, _) = standardize(&data).unwrap();
            let (twice, _) = standardize(&once).unwrap();
            for (a, b) in once.records.iter().zip(&twice.records) {
                for (u, v) in a.x.iter().zip(&b.x) {
                    prop_assert!((u - v).abs() < 1e-9);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn quantiles(runner: &mut TestRunner) -> Result<(), String> {
    let strategy = (
        prop::collection::vec(0.0f64..100.0, 1..30),
        prop::collection::vec(0.01f64..0.99, 1..6),
        any::<u64>(),
    );
    runner
        .run(&strategy, |(times, mut qs, seed)| {
            qs.sort_by(f64::total_cmp);
            let mut recs: Vec<SurvivalRecord> =
                times.iter().map(|&t| SurvivalRecord::new(vec![], t, true).unwrap()).collect();
            let h = quantile_horizons(&recs, &qs).unwrap();
            prop_assert!(h.windows(2).all(|w| w[0] <= w[1]));
            rng::shuffle(&mut rng::seeded(seed), &mut recs);
            prop_assert_eq!(h, quantile_horizons(&recs, &qs).unwrap());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn ranking_invariance(runner: &mut TestRunner) -> Result<(), String> {
    let strategy = (
        prop::collection::vec((0.1f64..10.0, any::<bool>(), 0.0f64..1.0), 2..15),
        0.5f64..8.0,
    );
    runner
        .run(&strategy, |(cases, horizon)| {
            let data: Vec<SurvivalRecord> =
                cases.iter().map(|&(t, e, _)| SurvivalRecord::new(vec![], t, e).unwrap()).collect();
            let s: Vec<f64> = cases.iter().map(|c| c.2).collect();
            // strictly increasing on [0, 1]
            let warped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 0.5 * v.powi(3)).collect();
            let g = km_censoring(&data);
            let (a, b) = (c_index(&s, &data, horizon, &g), c_index(&warped, &data, horizon, &g));
            prop_assert_eq!(a.is_ok(), b.is_ok());
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert_eq!(a, b);
            }
            prop_assert_eq!(auroc(&s, &data, horizon).unwrap(), auroc(&warped, &data, horizon).unwrap());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn clustering_monotone(runner: &mut TestRunner) -> Result<(), String> {
    let strategy = (
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 2..12),
        0.01f64..=1.0,
        0.01f64..=1.0,
    );
    runner
        .run(&strategy, |(rows, h1, h2)| {
            prop_assume!(rows.iter().all(|r| r.iter().sum::<f64>() > 0.0));
            let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
            let beta = Matrix::from_vec(rows.len(), 3, rows.concat());
            let rho = correlation_of_rows(&beta).unwrap();
            let fine = combine_clusters(&rho, hi).unwrap();
            let coarse = combine_clusters(&rho, lo).unwrap();
            prop_assert!(coarse.len() <= fine.len());
            // every fine group sits inside one coarse group
            for g in &fine.groups {
                let owner = coarse.groups.iter().position(|cg| cg.contains(&g[0])).unwrap();
                prop_assert!(g.iter().all(|m| coarse.groups[owner].contains(m)));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn merged_simplex(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(&(with_patients(4), 0.05f64..=1.0), |((model, xs), h)| {
            let rho = correlation_matrix(&model.importance).unwrap();
            let plan = combine_clusters(&rho, h).unwrap();
            let sample = records(&xs, &vec![1.0; xs.len()], &vec![true; xs.len()]);
            let merged = apply_merge(&model, &plan, &sample).unwrap();
            prop_assert_eq!(merged.subgroups(), plan.len());
            for x in &xs {
                let f = merged.assignment_probs(x).unwrap();
                prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let w = merged.covariate_weight(x).unwrap();
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(merged.marginal_hazard(x, 0.7).unwrap() > 0.0);
            }
            let same = apply_merge(&model, &RefinementPlan::identity(model.subgroups(), 1.0), &[]).unwrap();
            prop_assert_eq!(same, model);
            Ok(())
        })
        .map_err(|e| e.to_string())
}
