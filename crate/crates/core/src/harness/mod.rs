//! Monte Carlo experiment driver: scenarios x gamma grid x iterations.
//!
//! Each (scenario, gamma, iteration) cell is a pure function of the master
//! seed and its indices, so cells can run on any number of workers and are
//! merged back in (scenario, gamma, iteration) order.

pub mod config;
pub mod output;
pub mod summary;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::cohort_sim::{
    filter_nbt, generate_development, generate_test_mt, generate_test_ntt, Cohort, ScenarioConfig, SimError,
};
use crate::metrics::{self, MetricError, MetricName, MetricValue, PredictionSet};
use crate::rng::{cohort_seed, iteration_seed, CohortRole};
use crate::strategies::{self, EstimandKind, FittedCpm, StrategyError, StrategyKind, StrategyOptions};

pub use config::{ExperimentPlan, Profile};
pub use summary::{summarize, SummaryRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("{setting} evaluation: {source}")]
    Metric {
        setting: Setting,
        #[source]
        source: MetricError,
    },
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl HarnessError {
    /// Short class name recorded for failed iterations.
    pub fn class(&self) -> &'static str {
        match self {
            HarnessError::Simulation(_) => "simulation",
            HarnessError::Strategy(StrategyError::Weights(_)) => "weights",
            HarnessError::Strategy(_) => "model_fit",
            HarnessError::Metric { .. } => "metric",
            HarnessError::Plan(_) | HarnessError::Config(_) => "config",
            HarnessError::Io { .. } | HarnessError::Csv { .. } | HarnessError::Parse { .. } => "io",
            HarnessError::Pool(_) => "pool",
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Performance setting: mixed-treatment test set, its baseline-untreated
/// subset, or the treatment-withheld test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    MT,
    NBT,
    NTT,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::MT, Setting::NBT, Setting::NTT];

    pub fn label(self) -> &'static str {
        match self {
            Setting::MT => "MT",
            Setting::NBT => "NBT",
            Setting::NTT => "NTT",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Setting::ALL
            .into_iter()
            .find(|x| x.label() == s)
            .ok_or_else(|| format!("unknown setting `{s}`"))
    }
}

/// One metric observation of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub scenario: String,
    pub gamma: f64,
    pub iteration: usize,
    pub strategy: StrategyKind,
    pub setting: Setting,
    pub metric: MetricValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationFailure {
    pub scenario: String,
    pub gamma: f64,
    pub iteration: usize,
    pub error_class: String,
    pub message: String,
}

/// A scenario at one gamma value with solved intercepts.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub scenario_index: usize,
    pub gamma_index: usize,
    pub config: ScenarioConfig,
}

/// Solves intercepts for every (scenario, gamma) cell of the plan.
pub fn prepare_cells(plan: &ExperimentPlan) -> Result<Vec<Cell>> {
    plan.validate()?;
    let mut specs = Vec::new();
    for (s, scenario) in plan.scenarios.iter().enumerate() {
        for (g, &gamma) in plan.gamma_grid.iter().enumerate() {
            specs.push((s, g, scenario.with_gamma(gamma)));
        }
    }
    let solve = |(s, g, cfg): &(usize, usize, ScenarioConfig)| -> Result<Cell> {
        let config = if plan.resolve_intercepts_per_gamma {
            cfg.solve_intercepts(&plan.intercept_solver)?
        } else {
            // intercepts held at their gamma = 0 values
            let at_zero = cfg.with_gamma(0.0).solve_intercepts(&plan.intercept_solver)?;
            at_zero.with_gamma(cfg.gamma)
        };
        Ok(Cell {
            scenario_index: *s,
            gamma_index: *g,
            config,
        })
    };
    specs.par_iter().map(solve).collect()
}

fn evaluate_setting(
    model: &FittedCpm,
    setting: Setting,
    cohort: &Cohort,
    push: &mut impl FnMut(Setting, MetricValue),
) -> Result<()> {
    let lps: Vec<f64> = match setting {
        Setting::NTT => cohort.rows.iter().map(|r| model.linear_predictor(r.x0, 0, 0)).collect(),
        Setting::MT | Setting::NBT => cohort.rows.iter().map(|r| model.observed_linear_predictor(r)).collect(),
    };
    let ys = cohort.rows.iter().map(|r| r.y).collect();
    let wrap = |source| HarnessError::Metric { setting, source };
    let preds = PredictionSet::from_linear_predictors(lps, ys).map_err(wrap)?;
    let cal = metrics::calibration(&preds).map_err(wrap)?;
    let auc = metrics::auc(&preds).map_err(wrap)?;
    push(setting, MetricValue::new(MetricName::CalibrationIntercept, cal.intercept));
    push(setting, MetricValue::new(MetricName::CalibrationSlope, cal.slope));
    push(setting, MetricValue::new(MetricName::CitlOffset, cal.citl_offset));
    push(setting, MetricValue::new(MetricName::Auc, auc));
    push(setting, MetricValue::new(MetricName::Brier, metrics::brier(&preds)));
    Ok(())
}

/// Simulates one development and two test cohorts, fits all strategies and
/// evaluates them in every performance setting.
pub fn run_iteration(
    cell: &Cell,
    iteration: usize,
    master_seed: u64,
    thresholds: &[f64],
    options: StrategyOptions,
) -> Result<Vec<ResultRecord>> {
    let cfg = &cell.config;
    let seed = iteration_seed(master_seed, cell.scenario_index, cell.gamma_index, iteration);
    let dev = generate_development(cfg, cohort_seed(seed, CohortRole::Development))?;
    let mt = generate_test_mt(cfg, cohort_seed(seed, CohortRole::TestMixed))?;
    let nbt = filter_nbt(&mt)?;
    let ntt = generate_test_ntt(cfg, cohort_seed(seed, CohortRole::TestWithheld))?;

    let per_strategy = 5 * Setting::ALL.len() + thresholds.len();
    let mut records = Vec::with_capacity(StrategyKind::ALL.len() * per_strategy);
    for kind in StrategyKind::ALL {
        let model = strategies::fit_strategy(kind, &dev, options)?;
        let mut push = |setting, metric| {
            records.push(ResultRecord {
                scenario: cfg.name.clone(),
                gamma: cfg.gamma,
                iteration,
                strategy: kind,
                setting,
                metric,
            })
        };
        for (setting, cohort) in [(Setting::MT, &mt), (Setting::NBT, &nbt), (Setting::NTT, &ntt)] {
            evaluate_setting(&model, setting, cohort, &mut push)?;
        }
        let e3: Vec<f64> = ntt
            .rows
            .iter()
            .map(|r| strategies::predict_risk(&model, r.x0, EstimandKind::E3))
            .collect::<std::result::Result<_, _>>()?;
        let curve = metrics::allocation_curve(&e3, thresholds).map_err(|source| HarnessError::Metric {
            setting: Setting::NTT,
            source,
        })?;
        for (t, share) in curve {
            push(Setting::NTT, MetricValue::allocation(t, share));
        }
    }
    Ok(records)
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub cells: Vec<Cell>,
    pub results: Vec<ResultRecord>,
    pub summary: Vec<SummaryRecord>,
    pub failures: Vec<IterationFailure>,
    /// Scenario/gamma cells where more than 5% of iterations failed.
    pub degraded_cells: Vec<(String, f64, usize)>,
    pub iterations_attempted: usize,
    pub wall_time: Duration,
}

impl ExperimentOutput {
    pub fn is_degraded(&self) -> bool {
        !self.degraded_cells.is_empty()
    }
}

/// Runs every cell of the plan on `plan.workers` threads.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let (cells, outcomes) = pool.install(|| -> Result<_> {
        let cells = prepare_cells(plan)?;
        for cell in &cells {
            log::info!(
                "{} gamma={}: alpha0={:?} alpha1={:?} alpha_y={:?}",
                cell.config.name,
                cell.config.gamma,
                cell.config.alpha0,
                cell.config.alpha1,
                cell.config.alpha_y
            );
        }
        let work: Vec<(usize, usize)> = (0..cells.len())
            .flat_map(|c| (0..plan.iterations).map(move |it| (c, it)))
            .collect();
        let options = StrategyOptions {
            msm_interactions: plan.msm_interactions,
        };
        let outcomes: Vec<Result<Vec<ResultRecord>>> = work
            .par_iter()
            .map(|&(c, it)| run_iteration(&cells[c], it, plan.master_seed, &plan.thresholds, options))
            .collect();
        Ok((cells, outcomes))
    })?;

    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut failed_per_cell = vec![0usize; cells.len()];
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        let (c, it) = (idx / plan.iterations, idx % plan.iterations);
        match outcome {
            Ok(records) => results.extend(records),
            Err(e) => {
                failed_per_cell[c] += 1;
                let cfg = &cells[c].config;
                log::warn!("{} gamma={} iteration {it} failed: {e}", cfg.name, cfg.gamma);
                failures.push(IterationFailure {
                    scenario: cfg.name.clone(),
                    gamma: cfg.gamma,
                    iteration: it,
                    error_class: e.class().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    let degraded_cells = cells
        .iter()
        .zip(&failed_per_cell)
        .filter(|(_, &f)| f as f64 > 0.05 * plan.iterations as f64)
        .map(|(c, &f)| (c.config.name.clone(), c.config.gamma, f))
        .collect();
    let summary = summarize(&results);
    Ok(ExperimentOutput {
        iterations_attempted: cells.len() * plan.iterations,
        cells,
        results,
        summary,
        failures,
        degraded_cells,
        wall_time: start.elapsed(),
    })
}
