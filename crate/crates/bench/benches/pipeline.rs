use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use dropin_core::cohort_sim::{generate_development, generate_test_mt, InterceptSolverOptions, ScenarioConfig};
use dropin_core::harness::{self, ExperimentPlan};
use dropin_core::ipw::{compute_stabilized_weights, fit_treatment_models, TreatmentHistoryTable};
use dropin_core::logistic::{fit_weighted_logistic, DesignMatrix};
use dropin_core::metrics::{self, PredictionSet};
use dropin_core::strategies::{fit_strategy, StrategyKind, StrategyOptions};

fn scenario() -> ScenarioConfig {
    ScenarioConfig::observational_50()
        .with_gamma(-2.0)
        .solve_intercepts(&InterceptSolverOptions {
            n_mc: 200_000,
            ..Default::default()
        })
        .unwrap()
}

fn bench_components(c: &mut Criterion) {
    let cfg = scenario();
    let dev = generate_development(&cfg, 1).unwrap();
    let test = generate_test_mt(&cfg, 2).unwrap();

    c.bench_function("generate_test_cohort_100k", |b| {
        b.iter(|| generate_test_mt(black_box(&cfg), 3).unwrap())
    });

    let x = DesignMatrix::from_columns(vec![
        ("x0", test.rows.iter().map(|r| r.x0).collect()),
        ("a0", test.rows.iter().map(|r| f64::from(r.a0)).collect()),
        ("a1", test.rows.iter().map(|r| f64::from(r.a1)).collect()),
    ])
    .unwrap();
    let y: Vec<u8> = test.rows.iter().map(|r| r.y).collect();
    let w = vec![1.0; y.len()];
    c.bench_function("logistic_fit_100k_3_covariates", |b| {
        b.iter(|| fit_weighted_logistic(black_box(&x), &y, &w).unwrap())
    });

    c.bench_function("stabilized_weights_10k", |b| {
        b.iter(|| {
            let h = TreatmentHistoryTable::from_cohort(black_box(&dev)).unwrap();
            let m = fit_treatment_models(&h).unwrap();
            compute_stabilized_weights(&h, &m).unwrap()
        })
    });

    c.bench_function("fit_msm_10k", |b| {
        b.iter(|| fit_strategy(StrategyKind::Msm, black_box(&dev), StrategyOptions::default()).unwrap())
    });

    let model = fit_strategy(StrategyKind::BaselineTreatment, &dev, StrategyOptions::default()).unwrap();
    let lps: Vec<f64> = test.rows.iter().map(|r| model.observed_linear_predictor(r)).collect();
    let preds = PredictionSet::from_linear_predictors(lps, y.clone()).unwrap();
    c.bench_function("calibration_100k", |b| b.iter(|| metrics::calibration(black_box(&preds)).unwrap()));
    c.bench_function("auc_100k", |b| b.iter(|| metrics::auc(black_box(&preds)).unwrap()));
    c.bench_function("allocation_100k", |b| {
        b.iter(|| metrics::allocation_curve(black_box(preds.predictions()), &metrics::default_thresholds()).unwrap())
    });
}

fn bench_iteration(c: &mut Criterion) {
    let mut plan = ExperimentPlan::desk();
    plan.scenarios = vec![ScenarioConfig::observational_50()];
    plan.gamma_grid = vec![-2.0];
    plan.intercept_solver.n_mc = 200_000;
    let cells = harness::prepare_cells(&plan).unwrap();
    let mut group = c.benchmark_group("harness");
    group.sample_size(10);
    group.bench_function("run_iteration_full_size", |b| {
        b.iter_batched(
            || 0usize,
            |it| harness::run_iteration(&cells[0], it, plan.master_seed, &plan.thresholds, StrategyOptions::default()).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_components, bench_iteration);
criterion_main!(benches);
