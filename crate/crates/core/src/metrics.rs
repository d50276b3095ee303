//! Predictive performance: calibration intercept/slope, AUC, Brier score and
//! treatment-allocation proportions.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::logistic::{self, DesignMatrix, LogisticError, LogisticFitter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("prediction set: {0}")]
    InvalidInput(String),
    #[error("outcomes contain a single class")]
    SingleClass,
    #[error("linear predictor is constant; calibration slope is undefined")]
    ConstantPredictor,
    #[error("calibration fit: {0}")]
    Fit(#[from] LogisticError),
    #[error("thresholds must be strictly increasing within [0, 1]")]
    InvalidThresholds,
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Predictions, outcomes and the logits of the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    predictions: Vec<f64>,
    outcomes: Vec<u8>,
    linear_predictors: Vec<f64>,
}

impl PredictionSet {
    /// Builds the set from model linear predictors.
    pub fn from_linear_predictors(linear_predictors: Vec<f64>, outcomes: Vec<u8>) -> Result<Self> {
        let predictions = linear_predictors.iter().map(|&lp| logistic::expit(lp)).collect();
        Self::new(predictions, outcomes, linear_predictors)
    }

    /// Builds the set from probabilities; logits are derived.
    pub fn from_probabilities(predictions: Vec<f64>, outcomes: Vec<u8>) -> Result<Self> {
        let lps = predictions.iter().map(|&p| logistic::logit(p)).collect();
        Self::new(predictions, outcomes, lps)
    }

    pub fn new(predictions: Vec<f64>, outcomes: Vec<u8>, linear_predictors: Vec<f64>) -> Result<Self> {
        let n = predictions.len();
        if outcomes.len() != n || linear_predictors.len() != n {
            return Err(MetricError::InvalidInput("length mismatch".into()));
        }
        if n < 2 {
            return Err(MetricError::InvalidInput(format!("{n} observations, need at least 2")));
        }
        if outcomes.iter().any(|&y| y > 1) {
            return Err(MetricError::InvalidInput("outcomes must be 0/1".into()));
        }
        if predictions.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(MetricError::InvalidInput("predictions must lie in [0, 1]".into()));
        }
        Ok(Self {
            predictions,
            outcomes,
            linear_predictors,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.outcomes
    }

    pub fn linear_predictors(&self) -> &[f64] {
        &self.linear_predictors
    }

    fn has_both_classes(&self) -> bool {
        let first = self.outcomes[0];
        self.outcomes.iter().any(|&y| y != first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricName {
    CalibrationIntercept,
    CalibrationSlope,
    CitlOffset,
    Auc,
    Brier,
    AllocationProportion,
}

impl MetricName {
    pub const ALL: [MetricName; 6] = [
        MetricName::CalibrationIntercept,
        MetricName::CalibrationSlope,
        MetricName::CitlOffset,
        MetricName::Auc,
        MetricName::Brier,
        MetricName::AllocationProportion,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MetricName::CalibrationIntercept => "cal_intercept",
            MetricName::CalibrationSlope => "cal_slope",
            MetricName::CitlOffset => "citl_offset",
            MetricName::Auc => "auc",
            MetricName::Brier => "brier",
            MetricName::AllocationProportion => "allocation",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MetricName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub name: MetricName,
    pub value: f64,
    /// Set for allocation proportions only.
    pub threshold: Option<f64>,
}

impl MetricValue {
    pub fn new(name: MetricName, value: f64) -> Self {
        Self {
            name,
            value,
            threshold: None,
        }
    }

    pub fn allocation(threshold: f64, proportion: f64) -> Self {
        Self {
            name: MetricName::AllocationProportion,
            value: proportion,
            threshold: Some(threshold),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Intercept of `y ~ 1 + LP`.
    pub intercept: f64,
    /// Slope of `y ~ 1 + LP`.
    pub slope: f64,
    /// Intercept of `y ~ 1 + offset(LP)`.
    pub citl_offset: f64,
}

/// Logistic recalibration of outcomes on the linear predictor.
pub fn calibration(preds: &PredictionSet) -> Result<Calibration> {
    if !preds.has_both_classes() {
        return Err(MetricError::SingleClass);
    }
    let lp = preds.linear_predictors();
    if lp.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::InvalidInput("non-finite linear predictor".into()));
    }
    let first = lp[0];
    if lp.iter().all(|&v| v == first) {
        return Err(MetricError::ConstantPredictor);
    }
    let n = preds.len();
    let ones = vec![1.0; n];

    let joint = DesignMatrix::from_columns(vec![("lp", lp.to_vec())])?;
    // start at perfect calibration; well-specified models converge in a few steps
    let fit = LogisticFitter::new()
        .start(&[0.0, 1.0])
        .fit(&joint, preds.outcomes(), &ones)?;

    let intercept_only = DesignMatrix::intercept_only(n)?;
    let citl = LogisticFitter::new()
        .offset(lp)
        .fit(&intercept_only, preds.outcomes(), &ones)?;

    Ok(Calibration {
        intercept: fit.coefficients()[0],
        slope: fit.coefficients()[1],
        citl_offset: citl.coefficients()[0],
    })
}

/// Mann-Whitney estimate of P(case > control) + P(tie)/2 using midranks.
pub fn auc(preds: &PredictionSet) -> Result<f64> {
    let mut pairs: Vec<(f64, u8)> = preds
        .predictions()
        .iter()
        .copied()
        .zip(preds.outcomes().iter().copied())
        .collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let n_pos = pairs.iter().filter(|p| p.1 == 1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    // sum of (1-based) midranks of the cases
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i + 1;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let cases = pairs[i..j].iter().filter(|p| p.1 == 1).count();
        rank_sum += midrank * cases as f64;
        i = j;
    }
    let (n_pos, n_neg) = (n_pos as f64, n_neg as f64);
    let u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// Mean squared difference between prediction and outcome.
pub fn brier(preds: &PredictionSet) -> f64 {
    preds
        .predictions()
        .iter()
        .zip(preds.outcomes())
        .map(|(p, &y)| (p - f64::from(y)).powi(2))
        .sum::<f64>()
        / preds.len() as f64
}

/// Fraction of risks strictly above each threshold.
pub fn allocation_curve(e3_risks: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricError::InvalidThresholds);
    }
    if e3_risks.is_empty() {
        return Err(MetricError::InvalidInput("no risks".into()));
    }
    if e3_risks.iter().any(|r| r.is_nan()) {
        return Err(MetricError::InvalidInput("NaN risk".into()));
    }
    // by_rank[k]: risks exceeding exactly the k lowest thresholds
    let mut by_rank = vec![0usize; thresholds.len() + 1];
    for &r in e3_risks {
        by_rank[thresholds.partition_point(|&t| t < r)] += 1;
    }
    let n = e3_risks.len() as f64;
    let mut above = e3_risks.len() - by_rank[0];
    Ok(thresholds
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let share = (t, above as f64 / n);
            above -= by_rank[j + 1];
            share
        })
        .collect())
}

/// Thresholds 5%, 10%, ..., 70%.
pub fn default_thresholds() -> Vec<f64> {
    (1..=14).map(|k| f64::from(k * 5) / 100.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn probs(p: &[f64], y: &[u8]) -> PredictionSet {
        PredictionSet::from_probabilities(p.to_vec(), y.to_vec()).unwrap()
    }

    /// Exhaustive pairwise concordance.
    fn pairwise_auc(p: &[f64], y: &[u8]) -> f64 {
        let mut score = 0.0;
        let mut pairs = 0.0;
        for i in 0..p.len() {
            for j in 0..p.len() {
                if y[i] == 1 && y[j] == 0 {
                    pairs += 1.0;
                    score += if p[i] > p[j] {
                        1.0
                    } else if p[i] == p[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        score / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&probs(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auc(&probs(&[0.3; 6], &[1, 0, 1, 0, 0, 1])).unwrap(), 0.5);
        let p = [0.8, 0.5, 0.5, 0.5, 0.3, 0.1];
        let y = [1, 1, 1, 0, 0, 0];
        assert_eq!(pairwise_auc(&p, &y), 8.0 / 9.0);
        assert_eq!(auc(&probs(&p, &y)).unwrap(), 8.0 / 9.0);
        assert_eq!(auc(&probs(&[0.2, 0.4], &[1, 1])).unwrap_err(), MetricError::SingleClass);
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&probs(&[0.5, 0.5, 0.5], &[1, 0, 0])), 0.25);
        let perfect = PredictionSet::new(vec![1.0, 0.0], vec![1, 0], vec![f64::INFINITY, f64::NEG_INFINITY]).unwrap();
        assert_eq!(brier(&perfect), 0.0);
        assert!((brier(&probs(&[0.2, 0.7], &[0, 1])) - 0.065).abs() < 1e-15);
        // prevalence forecast scores prevalence * (1 - prevalence)
        let y = [1, 0, 0, 0, 1, 0, 0, 0];
        assert!((brier(&probs(&[0.25; 8], &y)) - 0.25 * 0.75).abs() < 1e-15);
    }

    #[test]
    fn allocation_examples() {
        let risks = [0.1, 0.35, 0.4, 0.41, 0.9];
        let curve = allocation_curve(&risks, &[0.0, 0.4, 1.0]).unwrap();
        assert_eq!(curve, vec![(0.0, 1.0), (0.4, 0.4), (1.0, 0.0)]);
        assert!(allocation_curve(&risks, &[0.5, 0.4]).is_err());
        assert!(allocation_curve(&risks, &[0.1, 1.5]).is_err());
        let t = default_thresholds();
        assert_eq!(t.len(), 14);
        assert_eq!((t[0], t[2], t[13]), (0.05, 0.15, 0.7));
    }

    fn simulate_known(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lp = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let eta = -1.4 + 0.9 * z;
            y.push(u8::from(rng.random::<f64>() < logistic::expit(eta)));
            lp.push(eta);
        }
        (lp, y)
    }

    #[test]
    fn calibration_of_true_probabilities() {
        let (lp, y) = simulate_known(100_000, 1);
        let cal = calibration(&PredictionSet::from_linear_predictors(lp.clone(), y.clone()).unwrap()).unwrap();
        assert!(cal.intercept.abs() < 0.05 && (cal.slope - 1.0).abs() < 0.05, "{cal:?}");
        assert!(cal.citl_offset.abs() < 0.05);

        let shifted: Vec<f64> = lp.iter().map(|v| v + 0.5).collect();
        let cal = calibration(&PredictionSet::from_linear_predictors(shifted, y.clone()).unwrap()).unwrap();
        assert!((cal.slope - 1.0).abs() < 0.05 && (cal.intercept + 0.5).abs() < 0.06, "{cal:?}");
        assert!((cal.citl_offset + 0.5).abs() < 0.05);

        let scaled: Vec<f64> = lp.iter().map(|v| 2.0 * v).collect();
        let cal = calibration(&PredictionSet::from_linear_predictors(scaled, y).unwrap()).unwrap();
        assert!((cal.slope - 0.5).abs() < 0.03, "{cal:?}");
    }

    #[test]
    fn apparent_calibration_is_exact() {
        let (lp, y) = simulate_known(5_000, 2);
        let x = DesignMatrix::from_columns(vec![("z", lp.clone())]).unwrap();
        let fit = logistic::fit_weighted_logistic(&x, &y, &vec![1.0; 5_000]).unwrap();
        let own: Vec<f64> = x.rows().map(|r| fit.linear_predictor(r)).collect();
        let cal = calibration(&PredictionSet::from_linear_predictors(own, y).unwrap()).unwrap();
        assert!(cal.intercept.abs() < 1e-6 && (cal.slope - 1.0).abs() < 1e-6, "{cal:?}");
    }

    #[test]
    fn calibration_errors() {
        let p = PredictionSet::from_linear_predictors(vec![0.3; 10], vec![0, 1, 0, 1, 0, 1, 0, 0, 0, 1]).unwrap();
        assert_eq!(calibration(&p).unwrap_err(), MetricError::ConstantPredictor);
        let p = PredictionSet::from_linear_predictors(vec![0.3, 0.2], vec![1, 1]).unwrap();
        assert_eq!(calibration(&p).unwrap_err(), MetricError::SingleClass);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_and_is_rank_invariant(
            data in prop::collection::vec((0u8..20, 0u8..2), 2..60),
        ) {
            let p: Vec<f64> = data.iter().map(|(v, _)| f64::from(*v) / 20.0 + 0.01).collect();
            let y: Vec<u8> = data.iter().map(|(_, c)| *c).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let a = auc(&probs(&p, &y)).unwrap();
            prop_assert!((a - pairwise_auc(&p, &y)).abs() < 1e-12);
            let transformed: Vec<f64> = p.iter().map(|v| v.powi(3) / 2.0).collect();
            prop_assert_eq!(auc(&probs(&transformed, &y)).unwrap(), a);
        }

        #[test]
        fn allocation_is_non_increasing(risks in prop::collection::vec(0.001f64..0.999, 1..100)) {
            let curve = allocation_curve(&risks, &default_thresholds()).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[1].1 <= w[0].1);
            }
        }
    }
}
