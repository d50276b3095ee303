use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use dropin_core::cohort_sim::{ScenarioConfig, RCT_NAME};
use dropin_core::harness::output::{self, emit_outputs, read_results_csv, read_summary_csv, FigureId};
use dropin_core::harness::{self, ExperimentOutput, ExperimentPlan, Setting};
use dropin_core::metrics::MetricName;
use dropin_core::strategies::StrategyKind;

fn small_plan() -> ExperimentPlan {
    let mut plan = ExperimentPlan::desk();
    plan.gamma_grid = vec![-2.0, 0.0];
    plan.iterations = 3;
    plan.set_cohort_sizes(3_000, 20_000);
    plan.intercept_solver.n_mc = 200_000;
    plan.workers = 2;
    plan
}

#[test]
fn summary_file_is_reproduced_from_results_file() {
    let plan = small_plan();
    let out = harness::run_experiment(&plan).unwrap();
    assert!(out.failures.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let written = emit_outputs(dir.path(), &plan, &out).unwrap();
    assert_eq!(written.len(), 3 + FigureId::ALL.len());

    let results = read_results_csv(&dir.path().join("results.csv")).unwrap();
    assert_eq!(results, out.results);
    let recomputed = harness::summarize(&results);
    let again = dir.path().join("again.csv");
    output::write_summary_csv(&again, &recomputed).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("summary.csv")).unwrap(),
        std::fs::read(&again).unwrap()
    );
    let summary = read_summary_csv(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.len(), out.summary.len());
    assert!(summary.iter().all(|s| s.n == plan.iterations));
}

#[test]
fn results_schema_and_threshold_column() {
    let plan = small_plan();
    let out = harness::run_experiment(&plan).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(dir.path(), &plan, &out).unwrap();
    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario,gamma,iteration,strategy,setting,metric,threshold,value"
    );
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8, "{line}");
        assert_eq!(fields[5] == "allocation", !fields[6].is_empty(), "{line}");
    }
}

// The two models agree in expectation; single iterations differ by the extra
// sampling noise of fitting on the untreated-at-baseline rows only.
#[test]
fn naive_and_baseline_allocation_curves_coincide() {
    let mut plan = small_plan();
    plan.iterations = 12;
    plan.set_cohort_sizes(10_000, 20_000);
    let out = harness::run_experiment(&plan).unwrap();
    let mut diffs: HashMap<(String, u64, u64), Vec<f64>> = HashMap::new();
    let mut pairs: HashMap<(String, u64, usize, u64), HashMap<StrategyKind, f64>> = HashMap::new();
    for r in out
        .results
        .iter()
        .filter(|r| r.metric.name == MetricName::AllocationProportion && r.setting == Setting::NTT)
    {
        let t = r.metric.threshold.unwrap().to_bits();
        pairs
            .entry((r.scenario.clone(), r.gamma.to_bits(), r.iteration, t))
            .or_default()
            .insert(r.strategy, r.metric.value);
    }
    for ((scenario, gamma, _, t), values) in pairs {
        let d = values[&StrategyKind::TreatmentNaive] - values[&StrategyKind::BaselineTreatment];
        assert!(d.abs() < 0.05, "{scenario} {gamma} {t}: {d}");
        diffs.entry((scenario, gamma, t)).or_default().push(d);
    }
    assert!(!diffs.is_empty());
    for (key, d) in diffs {
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 0.006, "{key:?}: mean difference {mean}");
    }
}

#[test]
fn rct_auc_is_shared_across_strategies_without_baseline_treatment() {
    let plan = small_plan();
    let out = harness::run_experiment(&plan).unwrap();
    let mut groups: HashMap<(u64, usize, Setting), Vec<f64>> = HashMap::new();
    for r in out
        .results
        .iter()
        .filter(|r| r.scenario == RCT_NAME && r.metric.name == MetricName::Auc && r.setting != Setting::MT)
    {
        groups.entry((r.gamma.to_bits(), r.iteration, r.setting)).or_default().push(r.metric.value);
    }
    assert_eq!(groups.len(), 2 * 3 * 2);
    for values in groups.values() {
        assert_eq!(values.len(), 4);
        assert!(values.iter().all(|&v| v == values[0]), "{values:?}");
    }
}

#[test]
fn default_config_file_matches_built_in_plan() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let mut from_file = ExperimentPlan::load(&path, None).unwrap();
    let builtin = ExperimentPlan::desk();
    from_file.workers = builtin.workers;
    assert_eq!(from_file, builtin);
    let full = ExperimentPlan::load(&path, Some(dropin_core::harness::Profile::Full)).unwrap();
    assert_eq!(full.iterations, 1000);
    assert_eq!(full.scenarios, ScenarioConfig::study_scenarios());
}

#[test]
fn empty_run_writes_headers_only() {
    let plan = small_plan();
    let out = ExperimentOutput {
        cells: vec![],
        results: vec![],
        summary: vec![],
        failures: vec![],
        degraded_cells: vec![],
        iterations_attempted: 0,
        wall_time: Duration::ZERO,
    };
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(dir.path(), &plan, &out).unwrap();
    let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.trim_end(), "scenario,gamma,strategy,setting,metric,threshold,mean,sd,se,n");
    for id in FigureId::ALL {
        let fig = std::fs::read_to_string(dir.path().join(id.file_name())).unwrap();
        assert_eq!(fig.lines().count(), 1);
    }
    let report = std::fs::read_to_string(dir.path().join("run_report.txt")).unwrap();
    assert!(report.contains("attempted: 0"));
}

#[test]
fn intercepts_held_at_gamma_zero_when_not_resolved() {
    let mut plan = small_plan();
    plan.scenarios = vec![ScenarioConfig::observational_50()];
    plan.resolve_intercepts_per_gamma = false;
    let cells = harness::prepare_cells(&plan).unwrap();
    assert_eq!(cells.len(), 2);
    assert_eq!(cells[0].config.alpha_y, cells[1].config.alpha_y);
    assert_eq!(cells[0].config.alpha1, cells[1].config.alpha1);
    assert_eq!(cells[0].config.gamma, -2.0);
    plan.resolve_intercepts_per_gamma = true;
    let cells = harness::prepare_cells(&plan).unwrap();
    assert_ne!(cells[0].config.alpha_y, cells[1].config.alpha_y);
}
