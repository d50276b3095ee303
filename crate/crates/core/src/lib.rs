//! Simulation study of clinical prediction models under treatment drop-in.
//!
//! Longitudinal cohorts with a baseline and a follow-up treatment decision are
//! simulated ([`cohort_sim`]), four model-development strategies are fitted
//! ([`strategies`], using [`logistic`] and the stabilized weights of [`ipw`]),
//! and every model is scored on three test settings ([`metrics`]). The
//! [`harness`] repeats this over a grid of scenarios and treatment-effect
//! sizes.

pub mod cohort_sim;
pub mod harness;
pub mod ipw;
pub mod logistic;
pub mod metrics;
pub mod rng;
pub mod strategies;

pub use cohort_sim::{
    Cohort, CohortRow, GenerationMode, InterceptSolverOptions, ScenarioConfig, ScenarioKind, TreatmentPolicy,
};
pub use harness::{ExperimentOutput, ExperimentPlan, Profile, ResultRecord, Setting, SummaryRecord};
pub use ipw::{StabilizedWeightVector, TreatmentHistoryTable, WeightSummary};
pub use logistic::{DesignMatrix, FitResult, LogisticError};
pub use metrics::{MetricName, MetricValue, PredictionSet};
pub use strategies::{EstimandKind, FittedCpm, StrategyKind, StrategyOptions};
