//! Result files: per-iteration results, summaries, figure tables and the run report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::summary::SummaryRecord;
use super::{ExperimentOutput, ExperimentPlan, HarnessError, ResultRecord, Result, Setting};
use crate::cohort_sim::{OBS20_NAME, OBS50_NAME, RCT_NAME};
use crate::metrics::{MetricName, MetricValue};

pub const RESULTS_HEADER: [&str; 8] = ["scenario", "gamma", "iteration", "strategy", "setting", "metric", "threshold", "value"];
pub const SUMMARY_HEADER: [&str; 10] = [
    "scenario", "gamma", "strategy", "setting", "metric", "threshold", "mean", "sd", "se", "n",
];

/// Shortest round-trip decimal, with negative zero written as `0`.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

fn opt_number(x: Option<f64>) -> String {
    x.map(format_number).unwrap_or_default()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl std::fmt::Display) -> HarnessError {
    HarnessError::Parse {
        path: path.display().to_string(),
        message: format!("record {line}: {message}"),
    }
}

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let found = r.headers().map_err(csv_err(path))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(path, 0, format!("expected header {}", header.join(","))));
    }
    r.records().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

fn field<T: FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    rec[i]
        .parse()
        .map_err(|e| parse_err(path, line, format!("column {name}: {e}")))
}

fn opt_field(path: &Path, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<Option<f64>> {
    if rec[i].is_empty() {
        Ok(None)
    } else {
        field(path, line, rec, i, name).map(Some)
    }
}

pub fn write_results_csv(path: &Path, results: &[ResultRecord]) -> Result<()> {
    let rows = results.iter().map(|r| {
        vec![
            r.scenario.clone(),
            format_number(r.gamma),
            r.iteration.to_string(),
            r.strategy.label().to_string(),
            r.setting.label().to_string(),
            r.metric.name.label().to_string(),
            opt_number(r.metric.threshold),
            format_number(r.metric.value),
        ]
    });
    write_table(path, &RESULTS_HEADER, rows)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let records = read_table(path, &RESULTS_HEADER)?;
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 1;
            let name: MetricName = field(path, line, rec, 5, "metric")?;
            let threshold = opt_field(path, line, rec, 6, "threshold")?;
            let value = field(path, line, rec, 7, "value")?;
            let metric = match (name, threshold) {
                (MetricName::AllocationProportion, Some(t)) => MetricValue::allocation(t, value),
                (MetricName::AllocationProportion, None) => {
                    return Err(parse_err(path, line, "allocation row without threshold"))
                }
                (_, None) => MetricValue::new(name, value),
                (_, Some(_)) => return Err(parse_err(path, line, "threshold on a non-allocation metric")),
            };
            Ok(ResultRecord {
                scenario: rec[0].to_string(),
                gamma: field(path, line, rec, 1, "gamma")?,
                iteration: field(path, line, rec, 2, "iteration")?,
                strategy: field(path, line, rec, 3, "strategy")?,
                setting: field(path, line, rec, 4, "setting")?,
                metric,
            })
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, summary: &[SummaryRecord]) -> Result<()> {
    let rows = summary.iter().map(|s| {
        vec![
            s.scenario.clone(),
            format_number(s.gamma),
            s.strategy.label().to_string(),
            s.setting.label().to_string(),
            s.metric.label().to_string(),
            opt_number(s.threshold),
            format_number(s.mean),
            format_number(s.sd),
            format_number(s.se),
            s.n.to_string(),
        ]
    });
    write_table(path, &SUMMARY_HEADER, rows)
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRecord>> {
    let records = read_table(path, &SUMMARY_HEADER)?;
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let line = i + 1;
            Ok(SummaryRecord {
                scenario: rec[0].to_string(),
                gamma: field(path, line, rec, 1, "gamma")?,
                strategy: field(path, line, rec, 2, "strategy")?,
                setting: field(path, line, rec, 3, "setting")?,
                metric: field(path, line, rec, 4, "metric")?,
                threshold: opt_field(path, line, rec, 5, "threshold")?,
                mean: field(path, line, rec, 6, "mean")?,
                sd: field(path, line, rec, 7, "sd")?,
                se: field(path, line, rec, 8, "se")?,
                n: field(path, line, rec, 9, "n")?,
            })
        })
        .collect()
}

/// The published figures that can be regenerated from a summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    /// Calibration intercept, every scenario and setting.
    Fig3,
    /// Calibration slope, every scenario and setting.
    Fig4,
    /// Treatment allocation, observational 50% treated, gamma in {-3, -2, -1, 0}.
    Fig5,
    /// Discrimination and Brier score, RCT.
    S1,
    /// Treatment allocation, RCT.
    S2,
    /// Treatment allocation, observational 20% treated.
    S3,
}

impl FigureId {
    pub const ALL: [FigureId; 6] = [
        FigureId::Fig3,
        FigureId::Fig4,
        FigureId::Fig5,
        FigureId::S1,
        FigureId::S2,
        FigureId::S3,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FigureId::Fig3 => "3",
            FigureId::Fig4 => "4",
            FigureId::Fig5 => "5",
            FigureId::S1 => "S1",
            FigureId::S2 => "S2",
            FigureId::S3 => "S3",
        }
    }

    pub fn file_name(self) -> String {
        format!("figure_{}.csv", self.label())
    }
}

impl FromStr for FigureId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        FigureId::ALL
            .into_iter()
            .find(|f| f.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown figure `{s}` (expected one of 3, 4, 5, S1, S2, S3)"))
    }
}

/// Header plus rows of a figure's data table.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

fn moments(s: &SummaryRecord) -> [String; 4] {
    [format_number(s.mean), format_number(s.sd), format_number(s.se), s.n.to_string()]
}

pub fn figure_table(id: FigureId, summary: &[SummaryRecord]) -> FigureTable {
    let mut scenarios: Vec<&str> = Vec::new();
    for s in summary {
        if !scenarios.contains(&s.scenario.as_str()) {
            scenarios.push(&s.scenario);
        }
    }
    let scenario_rank = |name: &str| scenarios.iter().position(|s| *s == name).unwrap_or(usize::MAX);
    let by_setting = |metric: MetricName| -> FigureTable {
        let mut picked: Vec<&SummaryRecord> = summary.iter().filter(|s| s.metric == metric).collect();
        picked.sort_by(|a, b| {
            scenario_rank(&a.scenario)
                .cmp(&scenario_rank(&b.scenario))
                .then(a.setting.cmp(&b.setting))
                .then(a.gamma.total_cmp(&b.gamma))
                .then(a.strategy.cmp(&b.strategy))
        });
        let rows = picked
            .into_iter()
            .map(|s| {
                let mut row = vec![
                    s.scenario.clone(),
                    s.setting.label().to_string(),
                    format_number(s.gamma),
                    s.strategy.label().to_string(),
                ];
                row.extend(moments(s));
                row
            })
            .collect();
        FigureTable {
            header: vec!["scenario", "setting", "gamma", "strategy", "mean", "sd", "se", "n"],
            rows,
        }
    };
    let allocation = |scenario: &str, gammas: Option<&[f64]>| -> FigureTable {
        let mut picked: Vec<&SummaryRecord> = summary
            .iter()
            .filter(|s| {
                s.scenario == scenario
                    && s.metric == MetricName::AllocationProportion
                    && s.setting == Setting::NTT
                    && gammas.is_none_or(|g| g.contains(&s.gamma))
            })
            .collect();
        picked.sort_by(|a, b| {
            a.strategy
                .cmp(&b.strategy)
                .then(a.gamma.total_cmp(&b.gamma))
                .then(a.threshold.unwrap_or(0.0).total_cmp(&b.threshold.unwrap_or(0.0)))
        });
        let rows = picked
            .into_iter()
            .map(|s| {
                let mut row = vec![s.strategy.label().to_string(), format_number(s.gamma), opt_number(s.threshold)];
                row.extend(moments(s));
                row
            })
            .collect();
        FigureTable {
            header: vec!["strategy", "gamma", "threshold", "mean", "sd", "se", "n"],
            rows,
        }
    };
    match id {
        FigureId::Fig3 => by_setting(MetricName::CalibrationIntercept),
        FigureId::Fig4 => by_setting(MetricName::CalibrationSlope),
        FigureId::Fig5 => allocation(OBS50_NAME, Some(&[-3.0, -2.0, -1.0, 0.0])),
        FigureId::S1 => {
            let mut picked: Vec<&SummaryRecord> = summary
                .iter()
                .filter(|s| s.scenario == RCT_NAME && matches!(s.metric, MetricName::Auc | MetricName::Brier))
                .collect();
            picked.sort_by(|a, b| {
                a.metric
                    .cmp(&b.metric)
                    .then(a.setting.cmp(&b.setting))
                    .then(a.gamma.total_cmp(&b.gamma))
                    .then(a.strategy.cmp(&b.strategy))
            });
            let rows = picked
                .into_iter()
                .map(|s| {
                    let mut row = vec![
                        s.metric.label().to_string(),
                        s.setting.label().to_string(),
                        format_number(s.gamma),
                        s.strategy.label().to_string(),
                    ];
                    row.extend(moments(s));
                    row
                })
                .collect();
            FigureTable {
                header: vec!["metric", "setting", "gamma", "strategy", "mean", "sd", "se", "n"],
                rows,
            }
        }
        FigureId::S2 => allocation(RCT_NAME, None),
        FigureId::S3 => allocation(OBS20_NAME, None),
    }
}

pub fn write_figure_csv(dir: &Path, id: FigureId, summary: &[SummaryRecord]) -> Result<PathBuf> {
    let path = dir.join(id.file_name());
    let table = figure_table(id, summary);
    write_table(&path, &table.header, table.rows)?;
    Ok(path)
}

/// Human-readable account of a run: effective plan, solved intercepts,
/// failures and timing.
pub fn run_report(plan: &ExperimentPlan, output: &ExperimentOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# effective plan");
    s.push_str(&plan.to_toml());
    let _ = writeln!(s, "\n# solved intercepts");
    for cell in &output.cells {
        let c = &cell.config;
        let fmt = |a: Option<f64>| a.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            s,
            "{} gamma={}: alpha0={} alpha1={} alpha_y={}",
            c.name,
            format_number(c.gamma),
            fmt(c.alpha0),
            fmt(c.alpha1),
            fmt(c.alpha_y)
        );
    }
    let _ = writeln!(s, "\n# iterations");
    let _ = writeln!(s, "attempted: {}", output.iterations_attempted);
    let _ = writeln!(s, "failed: {}", output.failures.len());
    let _ = writeln!(s, "result rows: {}", output.results.len());
    for f in &output.failures {
        let _ = writeln!(
            s,
            "failure: {} gamma={} iteration={} class={} {}",
            f.scenario,
            format_number(f.gamma),
            f.iteration,
            f.error_class,
            f.message
        );
    }
    if output.is_degraded() {
        let _ = writeln!(s, "status: DEGRADED");
        for (name, gamma, failed) in &output.degraded_cells {
            let _ = writeln!(s, "degraded: {name} gamma={} failed={failed}", format_number(*gamma));
        }
    } else {
        let _ = writeln!(s, "status: ok");
    }
    let _ = writeln!(s, "wall time: {:.3} s", output.wall_time.as_secs_f64());
    s
}

/// Writes results.csv, summary.csv, run_report.txt and every figure table into `dir`.
pub fn emit_outputs(dir: &Path, plan: &ExperimentPlan, output: &ExperimentOutput) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let results = dir.join("results.csv");
    write_results_csv(&results, &output.results)?;
    written.push(results);
    let summary = dir.join("summary.csv");
    write_summary_csv(&summary, &output.summary)?;
    written.push(summary);
    let report = dir.join("run_report.txt");
    fs::write(&report, run_report(plan, output)).map_err(io_err(&report))?;
    written.push(report);
    for id in FigureId::ALL {
        written.push(write_figure_csv(dir, id, &output.summary)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::StrategyKind;

    fn sample_results() -> Vec<ResultRecord> {
        let mut v = Vec::new();
        for (it, val) in [0.1, -0.0, 1e-17].into_iter().enumerate() {
            v.push(ResultRecord {
                scenario: OBS50_NAME.to_string(),
                gamma: -2.5,
                iteration: it,
                strategy: StrategyKind::Msm,
                setting: Setting::NTT,
                metric: MetricValue::new(MetricName::CalibrationIntercept, val),
            });
            v.push(ResultRecord {
                scenario: OBS50_NAME.to_string(),
                gamma: -2.0,
                iteration: it,
                strategy: StrategyKind::BaselineTreatment,
                setting: Setting::NTT,
                metric: MetricValue::allocation(0.15, 0.3 + val),
            });
        }
        v
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(0.15), "0.15");
        assert_eq!(format_number(-3.0), "-3");
        assert_eq!(format_number(f64::NAN), "NaN");
    }

    #[test]
    fn results_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let results = sample_results();
        write_results_csv(&path, &results).unwrap();
        let back = read_results_csv(&path).unwrap();
        assert_eq!(back.len(), results.len());
        for (a, b) in back.iter().zip(&results) {
            assert_eq!(a.metric.value, b.metric.value);
            assert_eq!(a.metric.threshold, b.metric.threshold);
            assert_eq!((a.strategy, a.setting, a.iteration), (b.strategy, b.setting, b.iteration));
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("scenario,gamma,iteration,strategy,setting,metric,threshold,value\n"));
        assert!(text.contains("Observational: 50% treated,-2.5,1,MSM,NTT,cal_intercept,,0\n"));
    }

    #[test]
    fn summary_round_trip_and_figures() {
        let dir = tempfile::tempdir().unwrap();
        let summary = super::super::summarize(&sample_results());
        let path = dir.path().join("summary.csv");
        write_summary_csv(&path, &summary).unwrap();
        let back = read_summary_csv(&path).unwrap();
        assert_eq!(back, summary);

        let fig3 = figure_table(FigureId::Fig3, &summary);
        assert_eq!(fig3.rows.len(), 1);
        let fig5 = figure_table(FigureId::Fig5, &summary);
        assert_eq!(fig5.rows.len(), 1);
        assert_eq!(fig5.rows[0][..3], ["BaselineTreatment".to_string(), "-2".into(), "0.15".into()]);
        assert!(figure_table(FigureId::S3, &summary).rows.is_empty());
        let p = write_figure_csv(dir.path(), FigureId::Fig5, &summary).unwrap();
        assert!(fs::read_to_string(p).unwrap().starts_with("strategy,gamma,threshold,mean,sd,se,n\n"));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_results_csv(&path), Err(HarnessError::Parse { .. })));
        let mut text = RESULTS_HEADER.join(",");
        text.push_str("\ns,-1,0,MSM,NTT,auc,0.1,0.7\n");
        fs::write(&path, text).unwrap();
        assert!(read_results_csv(&path).is_err());
        assert!(read_results_csv(&dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn figure_ids_parse() {
        assert_eq!("s2".parse::<FigureId>().unwrap(), FigureId::S2);
        assert_eq!("4".parse::<FigureId>().unwrap(), FigureId::Fig4);
        assert!("6".parse::<FigureId>().is_err());
    }
}
