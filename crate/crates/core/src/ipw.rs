//! Stabilized inverse-probability-of-treatment weights over K+1 timepoints.
//!
//! For individual `i` the weight is
//!
//! ```text
//! sw_i = prod_k  num_k(a_ki) / den_k(a_ki)
//! ```
//!
//! where `num_k` is the fitted probability of the observed treatment given
//! the previous treatment and the baseline covariate, and `den_k` the same
//! given the previous treatment and every covariate up to time `k`
//! (`a_{-1} = 0`). The product is accumulated in log space.
//!
//! Strata of the previous treatment in which `a_k` never varies (for example
//! the untreated arm of a trial, where nobody can start treatment later) are
//! structural: numerator and denominator both equal the empirical rate there,
//! so their factor is exactly 1 and no model is fitted on them.

use std::io::Write;

use thiserror::Error;

use crate::cohort_sim::Cohort;
use crate::logistic::{self, fit_weighted_logistic, DesignMatrix, FitResult, LogisticError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IpwError {
    #[error("treatment history is malformed: {0}")]
    InvalidHistory(String),
    #[error("treatment model for timepoint {k} ({side}): {source}")]
    Fit {
        k: usize,
        side: &'static str,
        #[source]
        source: LogisticError,
    },
    #[error("positivity violated at timepoint {k}: {side} probability of the observed treatment is 0 for individual {individual}")]
    Positivity {
        k: usize,
        side: &'static str,
        individual: usize,
    },
    #[error("models were fitted for horizon {models}, history has horizon {history}")]
    HorizonMismatch { models: usize, history: usize },
}

pub type Result<T> = std::result::Result<T, IpwError>;

/// Treatment and covariate histories, stored per timepoint.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentHistoryTable {
    treatments: Vec<Vec<u8>>,
    covariates: Vec<Vec<f64>>,
}

impl TreatmentHistoryTable {
    /// `treatments[k][i]` and `covariates[k][i]` for timepoints `0..=K`.
    pub fn new(treatments: Vec<Vec<u8>>, covariates: Vec<Vec<f64>>) -> Result<Self> {
        if treatments.is_empty() {
            return Err(IpwError::InvalidHistory("no timepoints".into()));
        }
        if treatments.len() != covariates.len() {
            return Err(IpwError::InvalidHistory(format!(
                "{} treatment timepoints but {} covariate timepoints",
                treatments.len(),
                covariates.len()
            )));
        }
        let n = treatments[0].len();
        if n == 0 {
            return Err(IpwError::InvalidHistory("no individuals".into()));
        }
        for k in 0..treatments.len() {
            if treatments[k].len() != n || covariates[k].len() != n {
                return Err(IpwError::InvalidHistory(format!(
                    "timepoint {k} does not cover all {n} individuals"
                )));
            }
            if treatments[k].iter().any(|&a| a > 1) {
                return Err(IpwError::InvalidHistory(format!("non-binary treatment at timepoint {k}")));
            }
            if covariates[k].iter().any(|x| !x.is_finite()) {
                return Err(IpwError::InvalidHistory(format!("non-finite covariate at timepoint {k}")));
            }
        }
        Ok(Self {
            treatments,
            covariates,
        })
    }

    /// Two-timepoint history (K = 1) of a simulated cohort.
    pub fn from_cohort(cohort: &Cohort) -> Result<Self> {
        let r = &cohort.rows;
        Self::new(
            vec![r.iter().map(|r| r.a0).collect(), r.iter().map(|r| r.a1).collect()],
            vec![r.iter().map(|r| r.x0).collect(), r.iter().map(|r| r.x1).collect()],
        )
    }

    /// Last timepoint index K.
    pub fn horizon(&self) -> usize {
        self.treatments.len() - 1
    }

    pub fn n_individuals(&self) -> usize {
        self.treatments[0].len()
    }

    pub fn treatment(&self, k: usize) -> &[u8] {
        &self.treatments[k]
    }

    pub fn covariate(&self, k: usize) -> &[f64] {
        &self.covariates[k]
    }

    #[inline]
    fn previous(&self, k: usize, i: usize) -> u8 {
        if k == 0 {
            0
        } else {
            self.treatments[k - 1][i]
        }
    }

    /// Row `i` reordered by `perm` (`new[j] = old[perm[j]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            treatments: self
                .treatments
                .iter()
                .map(|t| perm.iter().map(|&j| t[j]).collect())
                .collect(),
            covariates: self
                .covariates
                .iter()
                .map(|x| perm.iter().map(|&j| x[j]).collect())
                .collect(),
        }
    }
}

/// A stratum of the previous treatment in which `a_k` is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralStratum {
    pub previous: u8,
    pub rate: f64,
}

/// Treatment-assignment model for one timepoint on one side of the ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentModel {
    /// `None` when every stratum is structural.
    pub fit: Option<FitResult>,
    pub conditions_on_previous: bool,
    /// Covariates x_0..x_{n_covariates-1} enter the design.
    pub n_covariates: usize,
    pub structural: Vec<StructuralStratum>,
}

impl TreatmentModel {
    fn is_structural(&self, previous: u8) -> bool {
        self.structural.iter().any(|s| s.previous == previous)
    }

    fn design_row(&self, history: &TreatmentHistoryTable, k: usize, i: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.push(1.0);
        if self.conditions_on_previous {
            buf.push(f64::from(history.previous(k, i)));
        }
        for j in 0..self.n_covariates {
            buf.push(history.covariate(j)[i]);
        }
    }
}

/// Numerator and denominator models for timepoints `0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentModelPair {
    pub numerator: Vec<TreatmentModel>,
    pub denominator: Vec<TreatmentModel>,
}

impl TreatmentModelPair {
    pub fn horizon(&self) -> usize {
        self.numerator.len().saturating_sub(1)
    }
}

fn design_for(
    history: &TreatmentHistoryTable,
    k: usize,
    rows: &[usize],
    with_previous: bool,
    n_covariates: usize,
) -> std::result::Result<DesignMatrix, LogisticError> {
    let mut labels = vec![logistic::INTERCEPT.to_string()];
    if with_previous {
        labels.push("a_prev".into());
    }
    labels.extend((0..n_covariates).map(|j| format!("x{j}")));
    let p = labels.len();
    let mut values = Vec::with_capacity(rows.len() * p);
    for &i in rows {
        values.push(1.0);
        if with_previous {
            values.push(f64::from(history.previous(k, i)));
        }
        values.extend((0..n_covariates).map(|j| history.covariate(j)[i]));
    }
    DesignMatrix::from_row_major(labels, rows.len(), values)
}

/// Fits the numerator (previous treatment + baseline covariate) and
/// denominator (previous treatment + covariates up to `k`) models at every
/// timepoint with unit weights.
pub fn fit_treatment_models(history: &TreatmentHistoryTable) -> Result<TreatmentModelPair> {
    let n = history.n_individuals();
    let mut numerator = Vec::with_capacity(history.horizon() + 1);
    let mut denominator = Vec::with_capacity(history.horizon() + 1);

    for k in 0..=history.horizon() {
        let a = history.treatment(k);
        // [previous level][a_k level] counts
        let mut counts = [[0usize; 2]; 2];
        for i in 0..n {
            counts[history.previous(k, i) as usize][a[i] as usize] += 1;
        }
        let mut structural = Vec::new();
        let mut informative = Vec::new();
        for prev in 0..2u8 {
            let [c0, c1] = counts[prev as usize];
            match (c0, c1) {
                (0, 0) => {}
                (_, 0) => structural.push(StructuralStratum { previous: prev, rate: 0.0 }),
                (0, _) => structural.push(StructuralStratum { previous: prev, rate: 1.0 }),
                _ => informative.push(prev),
            }
        }
        let with_previous = k > 0 && informative.len() == 2;
        let rows: Vec<usize> = (0..n)
            .filter(|&i| informative.contains(&history.previous(k, i)))
            .collect();

        let fit_side = |side: &'static str, n_covariates: usize| -> Result<TreatmentModel> {
            let fit = if informative.is_empty() {
                None
            } else {
                let x = design_for(history, k, &rows, with_previous, n_covariates)
                    .map_err(|source| IpwError::Fit { k, side, source })?;
                let y: Vec<u8> = rows.iter().map(|&i| a[i]).collect();
                let w = vec![1.0; rows.len()];
                Some(
                    fit_weighted_logistic(&x, &y, &w)
                        .map_err(|source| IpwError::Fit { k, side, source })?,
                )
            };
            Ok(TreatmentModel {
                fit,
                conditions_on_previous: with_previous,
                n_covariates,
                structural: structural.clone(),
            })
        };
        numerator.push(fit_side("numerator", 1)?);
        denominator.push(fit_side("denominator", k + 1)?);
    }
    Ok(TreatmentModelPair {
        numerator,
        denominator,
    })
}

/// Log of each timepoint's factor, indexed `[k][i]`.
pub fn timepoint_log_factors(
    history: &TreatmentHistoryTable,
    models: &TreatmentModelPair,
) -> Result<Vec<Vec<f64>>> {
    if models.numerator.len() != history.horizon() + 1 || models.denominator.len() != history.horizon() + 1 {
        return Err(IpwError::HorizonMismatch {
            models: models.horizon(),
            history: history.horizon(),
        });
    }
    let n = history.n_individuals();
    let mut buf = Vec::new();
    let mut out = Vec::with_capacity(history.horizon() + 1);
    for k in 0..=history.horizon() {
        let (num, den) = (&models.numerator[k], &models.denominator[k]);
        let a = history.treatment(k);
        let mut factors = Vec::with_capacity(n);
        for i in 0..n {
            let prev = history.previous(k, i);
            if num.is_structural(prev) || den.is_structural(prev) {
                factors.push(0.0);
                continue;
            }
            let mut log_density = |model: &TreatmentModel, side: &'static str| -> Result<f64> {
                let fit = model.fit.as_ref().ok_or(IpwError::Positivity { k, side, individual: i })?;
                model.design_row(history, k, i, &mut buf);
                let eta = fit.linear_predictor(&buf);
                let p = logistic::expit(eta);
                let density = if a[i] == 1 { p } else { 1.0 - p };
                if !(density > 0.0) {
                    return Err(IpwError::Positivity { k, side, individual: i });
                }
                // log p = -softplus(-eta), log(1 - p) = -softplus(eta)
                Ok(if a[i] == 1 {
                    -logistic::softplus(-eta)
                } else {
                    -logistic::softplus(eta)
                })
            };
            let den_ld = log_density(den, "denominator")?;
            let num_ld = log_density(num, "numerator")?;
            factors.push(num_ld - den_ld);
        }
        out.push(factors);
    }
    Ok(out)
}

/// Per-individual stabilized weights with a distribution summary.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedWeightVector {
    pub sw: Vec<f64>,
    pub summary: WeightSummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub p01: f64,
    pub p99: f64,
}

impl WeightSummary {
    pub fn of(sw: &[f64]) -> Self {
        let mut sorted = sw.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Self {
            mean: sw.iter().sum::<f64>() / sw.len() as f64,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            p01: quantile_sorted(&sorted, 0.01),
            p99: quantile_sorted(&sorted, 0.99),
        }
    }
}

impl std::fmt::Display for WeightSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "mean={:.4} min={:.4} p01={:.4} p99={:.4} max={:.4}",
            self.mean, self.min, self.p01, self.p99, self.max
        )
    }
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl StabilizedWeightVector {
    pub fn new(sw: Vec<f64>) -> Self {
        let summary = WeightSummary::of(&sw);
        Self { sw, summary }
    }

    /// Clips weights to the given lower/upper quantiles of their own
    /// distribution.
    pub fn truncated(&self, lower_q: f64, upper_q: f64) -> Self {
        let mut sorted = self.sw.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let lo = quantile_sorted(&sorted, lower_q);
        let hi = quantile_sorted(&sorted, upper_q);
        Self::new(self.sw.iter().map(|w| w.clamp(lo, hi)).collect())
    }

    /// CSV with header `id,sw`, ids counting from 0.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "sw"])?;
        for (i, sw) in self.sw.iter().enumerate() {
            w.write_record([i.to_string(), sw.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn compute_stabilized_weights(
    history: &TreatmentHistoryTable,
    models: &TreatmentModelPair,
) -> Result<StabilizedWeightVector> {
    let factors = timepoint_log_factors(history, models)?;
    let n = history.n_individuals();
    let sw = (0..n)
        .map(|i| factors.iter().map(|f| f[i]).sum::<f64>().exp())
        .collect();
    Ok(StabilizedWeightVector::new(sw))
}
