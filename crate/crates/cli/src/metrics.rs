//! Metric records and their canonical CSV form.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TimeSaved,
    AccuracyRankAny,
    AccuracyPerRank,
    ExtraCallRatio,
    ConvergenceTick,
    RecoveryMeanLatency,
    EmpiricalRatio,
    ClosedFormRatio,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::TimeSaved => "time_saved",
            Metric::AccuracyRankAny => "accuracy_rank_any",
            Metric::AccuracyPerRank => "accuracy_per_rank",
            Metric::ExtraCallRatio => "extra_call_ratio",
            Metric::ConvergenceTick => "convergence_tick",
            Metric::RecoveryMeanLatency => "recovery_mean_latency",
            Metric::EmpiricalRatio => "empirical_ratio",
            Metric::ClosedFormRatio => "closed_form_ratio",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameter tuple of a record, kept sorted by key.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Params(pub BTreeMap<String, String>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.0.insert(key.to_owned(), value.to_string());
        self
    }

    /// Numeric-aware comparison, so `k=2` sorts before `k=10`.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        let mut a = self.0.iter();
        let mut b = other.0.iter();
        loop {
            match (a.next(), b.next()) {
                (None, None) => return Ordering::Equal,
                (None, Some(_)) => return Ordering::Less,
                (Some(_), None) => return Ordering::Greater,
                (Some((ka, va)), Some((kb, vb))) => {
                    let ord = ka.cmp(kb).then_with(|| value_cmp(va, vb));
                    if ord != Ordering::Equal {
                        return ord;
                    }
                }
            }
        }
    }
}

fn value_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub metric: Metric,
    pub value: f64,
    pub stderr: Option<f64>,
    pub params: Params,
}

impl MetricsRecord {
    pub fn new(run_id: impl Into<String>, metric: Metric, value: f64, params: Params) -> Self {
        Self { run_id: run_id.into(), metric, value, stderr: None, params }
    }

    pub fn with_stderr(mut self, stderr: f64) -> Self {
        self.stderr = Some(stderr);
        self
    }
}

/// Sort records by parameter tuple, then metric, then run id.
pub fn canonical_sort(records: &mut [MetricsRecord]) {
    records.sort_by(|a, b| {
        a.params.canonical_cmp(&b.params).then_with(|| a.metric.cmp(&b.metric)).then_with(|| a.run_id.cmp(&b.run_id))
    });
}

/// CSV with columns `run_id,metric,value,stderr,params`, canonically sorted.
pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut sorted = records.to_vec();
    canonical_sort(&mut sorted);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "metric", "value", "stderr", "params"]).expect("in-memory write");
    for r in &sorted {
        let stderr = r.stderr.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([r.run_id.as_str(), r.metric.name(), &r.value.to_string(), &stderr, &r.params.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Mean and standard error of the mean (zero for a single sample).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_order_ignores_input_order() {
        let rec = |k: usize, m: Metric| MetricsRecord::new(format!("r{k}"), m, k as f64, Params::new().with("k", k));
        let a = vec![rec(10, Metric::TimeSaved), rec(2, Metric::ExtraCallRatio), rec(2, Metric::TimeSaved)];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(to_csv(&a), to_csv(&b));
        let csv = to_csv(&a);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[1], "r2,time_saved,2,,k=2");
        assert_eq!(lines[3], "r10,time_saved,10,,k=10");
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_stderr(&[3.0, 3.0, 3.0]), (3.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
