//! Per-cell aggregation of iteration results.

use indexmap::IndexMap;

use super::{ResultRecord, Setting};
use crate::metrics::MetricName;
use crate::strategies::StrategyKind;

/// Mean, standard deviation and standard error of one metric across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub scenario: String,
    pub gamma: f64,
    pub strategy: StrategyKind,
    pub setting: Setting,
    pub metric: MetricName,
    pub threshold: Option<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); NaN when n = 1.
    pub sd: f64,
    pub se: f64,
    pub n: usize,
}

type Key = (String, u64, StrategyKind, Setting, MetricName, Option<u64>);

/// Groups by (scenario, gamma, strategy, setting, metric, threshold) in order
/// of first appearance.
pub fn summarize(results: &[ResultRecord]) -> Vec<SummaryRecord> {
    let mut groups: IndexMap<Key, Vec<f64>> = IndexMap::new();
    for r in results {
        let key = (
            r.scenario.clone(),
            r.gamma.to_bits(),
            r.strategy,
            r.setting,
            r.metric.name,
            r.metric.threshold.map(f64::to_bits),
        );
        groups.entry(key).or_default().push(r.metric.value);
    }
    groups
        .into_iter()
        .map(|((scenario, gamma, strategy, setting, metric, threshold), values)| {
            let (mean, sd) = mean_sd(&values);
            let n = values.len();
            SummaryRecord {
                scenario,
                gamma: f64::from_bits(gamma),
                strategy,
                setting,
                metric,
                threshold: threshold.map(f64::from_bits),
                mean,
                sd,
                se: sd / (n as f64).sqrt(),
                n,
            }
        })
        .collect()
}

/// Arithmetic mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricValue;

    fn rec(it: usize, gamma: f64, metric: MetricValue) -> ResultRecord {
        ResultRecord {
            scenario: "s".into(),
            gamma,
            iteration: it,
            strategy: StrategyKind::Msm,
            setting: Setting::NTT,
            metric,
        }
    }

    #[test]
    fn groups_and_moments() {
        let results = vec![
            rec(0, -1.0, MetricValue::new(MetricName::Auc, 0.7)),
            rec(0, -1.0, MetricValue::allocation(0.1, 0.5)),
            rec(1, -1.0, MetricValue::new(MetricName::Auc, 0.8)),
            rec(1, -1.0, MetricValue::allocation(0.1, 0.7)),
            rec(2, -1.0, MetricValue::new(MetricName::Auc, 0.9)),
            rec(0, 0.0, MetricValue::new(MetricName::Auc, 0.6)),
        ];
        let s = summarize(&results);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].metric, MetricName::Auc);
        assert_eq!(s[0].n, 3);
        assert!((s[0].mean - 0.8).abs() < 1e-12);
        assert!((s[0].sd - 0.1).abs() < 1e-12);
        assert!((s[0].se - 0.1 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[1].threshold, Some(0.1));
        assert!((s[1].mean - 0.6).abs() < 1e-12);
        assert_eq!(s[2].gamma, 0.0);
        assert!(s[2].sd.is_nan());
    }
}
