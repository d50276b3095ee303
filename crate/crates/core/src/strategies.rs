//! The four prediction-model strategies and their risk predictions under the
//! estimands E1-E5.
//!
//! | strategy            | rows used      | terms                  | weights    |
//! |---------------------|----------------|------------------------|------------|
//! | `IgnoreTreatment`   | all            | x0                     | unit       |
//! | `TreatmentNaive`    | a0 = 0         | x0                     | unit       |
//! | `BaselineTreatment` | all            | x0, a0                 | unit       |
//! | `MSM`               | all            | x0, a0, a1 (+ a·x0)    | stabilized |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort_sim::{Cohort, CohortRow, GenerationMode};
use crate::ipw::{self, IpwError, TreatmentHistoryTable, WeightSummary};
use crate::logistic::{self, DesignMatrix, FitResult, LogisticError, INTERCEPT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("{strategy}: development cohort has mode {mode:?}")]
    WrongMode {
        strategy: StrategyKind,
        mode: GenerationMode,
    },
    #[error("{0}: no rows left to fit")]
    EmptySubset(StrategyKind),
    #[error("{strategy}: {source}")]
    Fit {
        strategy: StrategyKind,
        #[source]
        source: LogisticError,
    },
    #[error("MSM weights: {0}")]
    Weights(#[from] IpwError),
    #[error("{strategy} cannot estimate {estimand}: {reason}")]
    UnsupportedEstimand {
        strategy: StrategyKind,
        estimand: EstimandKind,
        reason: &'static str,
    },
    #[error("malformed model record: {0}")]
    Record(String),
}

pub type Result<T> = std::result::Result<T, StrategyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    IgnoreTreatment,
    TreatmentNaive,
    BaselineTreatment,
    #[serde(rename = "MSM")]
    Msm,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::IgnoreTreatment,
        StrategyKind::TreatmentNaive,
        StrategyKind::BaselineTreatment,
        StrategyKind::Msm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::IgnoreTreatment => "IgnoreTreatment",
            StrategyKind::TreatmentNaive => "TreatmentNaive",
            StrategyKind::BaselineTreatment => "BaselineTreatment",
            StrategyKind::Msm => "MSM",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// Risk estimands:
/// E1 `E[Y | X0]`, E2 `E[Y(A0=0) | X0]`, E3 `E[Y(A=0,0) | X0]`,
/// E4 `E[Y(A0=1) | X0]`, E5 `E[Y(A=1,1) | X0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimandKind {
    E1,
    E2,
    E3,
    E4,
    E5,
}

impl fmt::Display for EstimandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    X0,
    A0,
    A1,
    A0X0,
    A1X0,
}

impl Term {
    pub fn label(self) -> &'static str {
        match self {
            Term::X0 => "x0",
            Term::A0 => "a0",
            Term::A1 => "a1",
            Term::A0X0 => "a0:x0",
            Term::A1X0 => "a1:x0",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        [Term::X0, Term::A0, Term::A1, Term::A0X0, Term::A1X0]
            .into_iter()
            .find(|t| t.label() == s)
    }

    #[inline]
    fn value(self, x0: f64, a0: f64, a1: f64) -> f64 {
        match self {
            Term::X0 => x0,
            Term::A0 => a0,
            Term::A1 => a1,
            Term::A0X0 => a0 * x0,
            Term::A1X0 => a1 * x0,
        }
    }

    fn treatment(self) -> Option<Term> {
        match self {
            Term::X0 => None,
            Term::A0 | Term::A0X0 => Some(Term::A0),
            Term::A1 | Term::A1X0 => Some(Term::A1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StrategyOptions {
    /// Adds `a0:x0` and `a1:x0` to the MSM.
    pub msm_interactions: bool,
}

/// A fitted prediction model.
///
/// `terms` is the strategy's nominal schema. Treatment columns that were
/// constant in the fitting rows are listed in `dropped`; they have no
/// coefficient and contribute zero to predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedCpm {
    pub strategy: StrategyKind,
    pub fit: FitResult,
    pub terms: Vec<Term>,
    pub dropped: Vec<Term>,
    pub weights_used: Option<WeightSummary>,
    /// Coefficient per nominal term (0 for dropped terms), intercept first.
    coef: Vec<f64>,
}

impl FittedCpm {
    fn assemble(
        strategy: StrategyKind,
        fit: FitResult,
        terms: Vec<Term>,
        dropped: Vec<Term>,
        weights_used: Option<WeightSummary>,
    ) -> Self {
        let mut coef = Vec::with_capacity(terms.len() + 1);
        coef.push(fit.coefficient(INTERCEPT).unwrap_or(0.0));
        coef.extend(terms.iter().map(|t| fit.coefficient(t.label()).unwrap_or(0.0)));
        Self {
            strategy,
            fit,
            terms,
            dropped,
            weights_used,
            coef,
        }
    }

    /// Builds a model from explicit coefficients; terms not listed are absent.
    pub fn from_coefficients(strategy: StrategyKind, intercept: f64, coefficients: &[(Term, f64)]) -> Self {
        let terms = nominal_terms(strategy, coefficients.iter().any(|(t, _)| matches!(t, Term::A0X0 | Term::A1X0)));
        let mut named = vec![(INTERCEPT.to_string(), intercept)];
        named.extend(coefficients.iter().map(|(t, c)| (t.label().to_string(), *c)));
        let dropped = terms
            .iter()
            .copied()
            .filter(|t| !coefficients.iter().any(|(u, _)| u == t))
            .collect();
        Self::assemble(strategy, FitResult::from_coefficients(named), terms, dropped, None)
    }

    pub fn has_term(&self, term: Term) -> bool {
        self.terms.contains(&term)
    }

    pub fn coefficient(&self, term: Term) -> Option<f64> {
        self.fit.coefficient(term.label())
    }

    /// Linear predictor for baseline covariate `x0` and treatment path
    /// (`a0`, `a1`). Terms outside the schema are ignored.
    #[inline]
    pub fn linear_predictor(&self, x0: f64, a0: u8, a1: u8) -> f64 {
        let (a0, a1) = (f64::from(a0), f64::from(a1));
        self.coef[0]
            + self
                .terms
                .iter()
                .zip(&self.coef[1..])
                .map(|(t, b)| b * t.value(x0, a0, a1))
                .sum::<f64>()
    }

    /// Linear predictor on an observed row, using whichever of the row's
    /// variables the model includes.
    #[inline]
    pub fn observed_linear_predictor(&self, row: &CohortRow) -> f64 {
        self.linear_predictor(row.x0, row.a0, row.a1)
    }

    /// Flat audit record: `strategy=<label>;(Intercept)=<b>;x0=<b>;...`.
    pub fn to_record(&self) -> String {
        let mut s = format!("strategy={}", self.strategy);
        for (t, b) in self.fit.terms().iter().zip(self.fit.coefficients()) {
            s.push_str(&format!(";{t}={b}"));
        }
        s
    }

    pub fn from_record(record: &str) -> Result<Self> {
        let bad = |m: &str| StrategyError::Record(format!("{m} in `{record}`"));
        let mut parts = record.split(';');
        let strategy = parts
            .next()
            .and_then(|p| p.strip_prefix("strategy="))
            .ok_or_else(|| bad("missing strategy"))?
            .parse::<StrategyKind>()
            .map_err(|e| bad(&e))?;
        let mut intercept = None;
        let mut coefs = Vec::new();
        for part in parts {
            let (name, value) = part.split_once('=').ok_or_else(|| bad("missing `=`"))?;
            let value: f64 = value.parse().map_err(|_| bad("bad number"))?;
            if name == INTERCEPT {
                intercept = Some(value);
            } else {
                coefs.push((Term::from_label(name).ok_or_else(|| bad("unknown term"))?, value));
            }
        }
        Ok(Self::from_coefficients(
            strategy,
            intercept.ok_or_else(|| bad("missing intercept"))?,
            &coefs,
        ))
    }
}

fn nominal_terms(kind: StrategyKind, msm_interactions: bool) -> Vec<Term> {
    match kind {
        StrategyKind::IgnoreTreatment | StrategyKind::TreatmentNaive => vec![Term::X0],
        StrategyKind::BaselineTreatment => vec![Term::X0, Term::A0],
        StrategyKind::Msm if msm_interactions => {
            vec![Term::X0, Term::A0, Term::A1, Term::A0X0, Term::A1X0]
        }
        StrategyKind::Msm => vec![Term::X0, Term::A0, Term::A1],
    }
}

/// Fits one strategy on a development cohort.
pub fn fit_strategy(kind: StrategyKind, development: &Cohort, options: StrategyOptions) -> Result<FittedCpm> {
    if development.meta.mode != GenerationMode::Development {
        return Err(StrategyError::WrongMode {
            strategy: kind,
            mode: development.meta.mode,
        });
    }
    let rows: Vec<&CohortRow> = match kind {
        StrategyKind::TreatmentNaive => development.rows.iter().filter(|r| r.a0 == 0).collect(),
        _ => development.rows.iter().collect(),
    };
    if rows.is_empty() {
        return Err(StrategyError::EmptySubset(kind));
    }

    let (weights, weights_used) = if kind == StrategyKind::Msm {
        let history = TreatmentHistoryTable::from_cohort(development)?;
        let models = ipw::fit_treatment_models(&history)?;
        let sw = ipw::compute_stabilized_weights(&history, &models)?;
        (sw.sw, Some(sw.summary))
    } else {
        (vec![1.0; rows.len()], None)
    };

    let terms = nominal_terms(kind, options.msm_interactions);
    let constant = |get: fn(&CohortRow) -> u8| {
        let first = get(rows[0]);
        rows.iter().all(|r| get(r) == first)
    };
    let a0_constant = constant(|r| r.a0);
    let a1_constant = constant(|r| r.a1);
    let (active, dropped): (Vec<Term>, Vec<Term>) = terms.iter().partition(|t| match t.treatment() {
        Some(Term::A0) => !a0_constant,
        Some(Term::A1) => !a1_constant,
        _ => true,
    });

    let columns = active
        .iter()
        .map(|t| {
            let col = rows
                .iter()
                .map(|r| t.value(r.x0, f64::from(r.a0), f64::from(r.a1)))
                .collect();
            (t.label(), col)
        })
        .collect();
    let fit_err = |source| StrategyError::Fit {
        strategy: kind,
        source,
    };
    let x = DesignMatrix::from_columns(columns).map_err(fit_err)?;
    let y: Vec<u8> = rows.iter().map(|r| r.y).collect();
    let fit = logistic::fit_weighted_logistic(&x, &y, &weights).map_err(fit_err)?;
    Ok(FittedCpm::assemble(kind, fit, terms, dropped, weights_used))
}

/// Treatment path each strategy uses for an estimand, if it can express it.
fn estimand_path(model: &FittedCpm, estimand: EstimandKind) -> Result<(u8, u8)> {
    let unsupported = |reason| StrategyError::UnsupportedEstimand {
        strategy: model.strategy,
        estimand,
        reason,
    };
    if estimand == EstimandKind::E4 {
        return Err(unsupported(if model.has_term(Term::A1) {
            "future treatment is left free; use e4_bounds"
        } else {
            "model has no future-treatment term"
        }));
    }
    match model.strategy {
        // a single x0-only formula, attributed to whichever estimand is asked
        StrategyKind::IgnoreTreatment | StrategyKind::TreatmentNaive => Ok((0, 0)),
        StrategyKind::BaselineTreatment => match estimand {
            EstimandKind::E2 | EstimandKind::E3 => Ok((0, 0)),
            EstimandKind::E5 => Ok((1, 1)),
            _ => Err(unsupported("prediction needs an explicit baseline treatment")),
        },
        StrategyKind::Msm => match estimand {
            EstimandKind::E3 => Ok((0, 0)),
            EstimandKind::E5 => Ok((1, 1)),
            _ => Err(unsupported("the MSM predicts only fully specified treatment paths")),
        },
    }
}

/// Risk for baseline covariate `x0` under `estimand`.
pub fn predict_risk(model: &FittedCpm, x0: f64, estimand: EstimandKind) -> Result<f64> {
    let (a0, a1) = estimand_path(model, estimand)?;
    Ok(logistic::expit(model.linear_predictor(x0, a0, a1)))
}

/// Risks under "treat now, stop later" and "treat now and later", ordered
/// (low, high). These bound E4 for any future-treatment policy.
pub fn e4_bounds(model: &FittedCpm, x0: f64) -> Result<(f64, f64)> {
    if model.strategy != StrategyKind::Msm {
        return Err(StrategyError::UnsupportedEstimand {
            strategy: model.strategy,
            estimand: EstimandKind::E4,
            reason: "model has no future-treatment term",
        });
    }
    let stop = logistic::expit(model.linear_predictor(x0, 1, 0));
    let keep = logistic::expit(model.linear_predictor(x0, 1, 1));
    Ok((stop.min(keep), stop.max(keep)))
}

/// Absolute risk reduction of sustained treatment, E3 - E5, for an MSM.
pub fn counterfactual_effect(model: &FittedCpm, x0: f64) -> Result<f64> {
    if model.strategy != StrategyKind::Msm {
        return Err(StrategyError::UnsupportedEstimand {
            strategy: model.strategy,
            estimand: EstimandKind::E5,
            reason: "causal contrasts need the MSM",
        });
    }
    Ok(predict_risk(model, x0, EstimandKind::E3)? - predict_risk(model, x0, EstimandKind::E5)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort_sim::{generate_development, CohortMeta, InterceptSolverOptions, ScenarioConfig};
    use std::collections::HashMap;

    fn example_msm() -> FittedCpm {
        FittedCpm::from_coefficients(
            StrategyKind::Msm,
            -2.0,
            &[(Term::X0, 0.4), (Term::A0, -0.7), (Term::A1, -0.7)],
        )
    }

    #[test]
    fn msm_estimand_instantiation() {
        let m = example_msm();
        let e3 = predict_risk(&m, 0.0, EstimandKind::E3).unwrap();
        let e5 = predict_risk(&m, 0.0, EstimandKind::E5).unwrap();
        assert!((e3 - 0.119_202_922).abs() < 1e-8, "{e3}");
        assert!((e5 - 0.032_295_465).abs() < 1e-8, "{e5}");
        let eff = counterfactual_effect(&m, 0.0).unwrap();
        assert!((eff - 0.086_907_457).abs() < 1e-8, "{eff}");
        let (lo, hi) = e4_bounds(&m, 0.0).unwrap();
        assert!((hi - logistic::expit(-2.7)).abs() < 1e-15 && (lo - e5).abs() < 1e-15);
    }

    #[test]
    fn zero_treatment_coefficients_have_no_effect() {
        let m = FittedCpm::from_coefficients(StrategyKind::Msm, -1.0, &[(Term::X0, 0.5), (Term::A0, 0.0), (Term::A1, 0.0)]);
        assert_eq!(counterfactual_effect(&m, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn estimand_support_rules() {
        let ignore = FittedCpm::from_coefficients(StrategyKind::IgnoreTreatment, -1.0, &[(Term::X0, 0.5)]);
        assert!(predict_risk(&ignore, 0.0, EstimandKind::E1).is_ok());
        assert!(predict_risk(&ignore, 0.0, EstimandKind::E3).is_ok());
        assert!(matches!(
            predict_risk(&ignore, 0.0, EstimandKind::E4),
            Err(StrategyError::UnsupportedEstimand { .. })
        ));
        assert!(counterfactual_effect(&ignore, 0.0).is_err());
        let baseline = FittedCpm::from_coefficients(StrategyKind::BaselineTreatment, -1.0, &[(Term::X0, 0.5), (Term::A0, -0.6)]);
        assert!(predict_risk(&baseline, 0.0, EstimandKind::E4).is_err());
        assert!(predict_risk(&baseline, 0.0, EstimandKind::E1).is_err());
        assert!(predict_risk(&example_msm(), 0.0, EstimandKind::E4).is_err());
        assert!(predict_risk(&example_msm(), 0.0, EstimandKind::E2).is_err());
    }

    #[test]
    fn baseline_e3_equals_explicit_untreated_row() {
        let m = FittedCpm::from_coefficients(StrategyKind::BaselineTreatment, -1.3, &[(Term::X0, 0.45), (Term::A0, -0.8)]);
        for x0 in [-2.0, -0.1, 0.0, 1.7] {
            let via_estimand = predict_risk(&m, x0, EstimandKind::E3).unwrap();
            let row = HashMap::from([("x0", x0), ("a0", 0.0)]);
            let direct = m.fit.predict_prob(&row).unwrap();
            assert_eq!(via_estimand, direct);
        }
    }

    #[test]
    fn e3_increases_in_x0_and_dominates_e5() {
        let m = example_msm();
        let mut last = 0.0;
        for i in -30..30 {
            let x0 = f64::from(i) / 10.0;
            let e3 = predict_risk(&m, x0, EstimandKind::E3).unwrap();
            let e5 = predict_risk(&m, x0, EstimandKind::E5).unwrap();
            assert!(e3 > last && e3 >= e5);
            last = e3;
        }
    }

    #[test]
    fn audit_record_round_trip() {
        let m = example_msm();
        let rec = m.to_record();
        assert_eq!(rec, "strategy=MSM;(Intercept)=-2;x0=0.4;a0=-0.7;a1=-0.7");
        let back = FittedCpm::from_record(&rec).unwrap();
        assert_eq!(back.linear_predictor(0.3, 1, 0), m.linear_predictor(0.3, 1, 0));
        assert!(FittedCpm::from_record("strategy=Nope;(Intercept)=1").is_err());
    }

    fn solved(cfg: ScenarioConfig) -> ScenarioConfig {
        cfg.solve_intercepts(&InterceptSolverOptions {
            n_mc: 200_000,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn untreated_cohort_collapses_all_strategies() {
        let cfg = solved(ScenarioConfig::observational_50());
        let dev = generate_development(&cfg, 1).unwrap();
        let untreated = Cohort {
            rows: dev
                .rows
                .iter()
                .map(|r| CohortRow { a0: 0, a1: 0, ..*r })
                .collect(),
            meta: CohortMeta { ..dev.meta.clone() },
        };
        let fits: Vec<FittedCpm> = StrategyKind::ALL
            .iter()
            .map(|&k| fit_strategy(k, &untreated, StrategyOptions::default()).unwrap())
            .collect();
        let msm = &fits[3];
        assert_eq!(msm.dropped, vec![Term::A0, Term::A1]);
        let ws = msm.weights_used.unwrap();
        assert_eq!((ws.min, ws.max), (1.0, 1.0));
        for f in &fits[1..] {
            for (a, b) in f.fit.coefficients().iter().zip(fits[0].fit.coefficients()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(
                predict_risk(f, 0.7, EstimandKind::E3).unwrap(),
                predict_risk(&fits[0], 0.7, EstimandKind::E3).unwrap()
            );
        }
    }

    #[test]
    fn x0_only_strategies_ignore_treatment_columns() {
        let cfg = solved(ScenarioConfig::observational_20().with_gamma(-1.0));
        let dev = generate_development(&cfg, 2).unwrap();
        for kind in [StrategyKind::IgnoreTreatment, StrategyKind::TreatmentNaive] {
            let m = fit_strategy(kind, &dev, StrategyOptions::default()).unwrap();
            for r in dev.rows.iter().take(50) {
                let flipped = CohortRow { a0: 1 - r.a0, a1: 1 - r.a1, ..*r };
                assert_eq!(m.observed_linear_predictor(r), m.observed_linear_predictor(&flipped));
            }
        }
    }

    #[test]
    fn interactions_are_optional() {
        let cfg = solved(ScenarioConfig::observational_50().with_gamma(-1.0));
        let dev = generate_development(&cfg, 3).unwrap();
        let plain = fit_strategy(StrategyKind::Msm, &dev, StrategyOptions::default()).unwrap();
        assert_eq!(plain.fit.coefficients().len(), 4);
        let full = fit_strategy(StrategyKind::Msm, &dev, StrategyOptions { msm_interactions: true }).unwrap();
        assert_eq!(full.fit.coefficients().len(), 6);
        assert!(full.coefficient(Term::A1X0).is_some());
    }

    #[test]
    fn wrong_mode_is_rejected() {
        let cfg = solved(ScenarioConfig::rct_dropout());
        let mut dev = generate_development(&cfg, 4).unwrap();
        dev.meta.mode = GenerationMode::TestMT;
        assert!(matches!(
            fit_strategy(StrategyKind::Msm, &dev, StrategyOptions::default()),
            Err(StrategyError::WrongMode { .. })
        ));
    }

    #[test]
    fn empty_naive_subset_is_an_error() {
        let cfg = solved(ScenarioConfig::rct_dropout());
        let mut dev = generate_development(&cfg, 5).unwrap();
        for r in &mut dev.rows {
            r.a0 = 1;
        }
        assert_eq!(
            fit_strategy(StrategyKind::TreatmentNaive, &dev, StrategyOptions::default()).unwrap_err(),
            StrategyError::EmptySubset(StrategyKind::TreatmentNaive)
        );
    }
}
