use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("confusion matrix has {rows} rows of lengths {lengths:?} for {labels} labels")]
    DimensionMismatch {
        labels: usize,
        rows: usize,
        lengths: Vec<usize>,
    },
    #[error("label '{0}' is not in the matrix label set")]
    UnknownLabel(String),
    #[error("reports cover different label sets")]
    LabelSetMismatch,
}

/// `counts[i][j]` = instances of true label `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_pairs<'a>(
        labels: Vec<String>,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, MetricsError> {
        let mut m = ConfusionMatrix::new(labels);
        for (t, p) in pairs {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn record(&mut self, truth: &str, predicted: &str) -> Result<(), MetricsError> {
        let t = self
            .index(truth)
            .ok_or_else(|| MetricsError::UnknownLabel(truth.to_string()))?;
        let p = self
            .index(predicted)
            .ok_or_else(|| MetricsError::UnknownLabel(predicted.to_string()))?;
        self.counts[t][p] += 1;
        Ok(())
    }

    /// Element-wise sum; label sets must be identical.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.labels != other.labels {
            return Err(MetricsError::LabelSetMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), MetricsError> {
        let n = self.labels.len();
        if self.counts.len() != n || self.counts.iter().any(|r| r.len() != n) {
            return Err(MetricsError::DimensionMismatch {
                labels: n,
                rows: self.counts.len(),
                lengths: self.counts.iter().map(Vec::len).collect(),
            });
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Largest off-diagonal cell as `(true, predicted, count)`. Ties go to
    /// the first cell in row-major order.
    pub fn most_confused(&self) -> Option<(&str, &str, u64)> {
        let mut best: Option<(usize, usize, u64)> = None;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if i != j && c > 0 && best.is_none_or(|(_, _, b)| c > b) {
                    best = Some((i, j, c));
                }
            }
        }
        best.map(|(i, j, c)| (self.labels[i].as_str(), self.labels[j].as_str(), c))
    }

    /// CSV with a header row of predicted labels and one row per true label.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).expect("in-memory csv");
        for (label, row) in self.labels.iter().zip(&self.counts) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }
}

fn ratio(n: u64, d: u64) -> BigRational {
    if d == 0 {
        BigRational::zero()
    } else {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Harmonic mean of precision and recall, zero when both are zero.
pub fn f1_score(precision: &BigRational, recall: &BigRational) -> BigRational {
    let sum = precision + recall;
    if sum.is_zero() {
        BigRational::zero()
    } else {
        BigRational::from_integer(BigInt::from(2)) * precision * recall / sum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "wire::ClassMetricsWire", try_from = "wire::ClassMetricsWire")]
pub struct ClassMetrics {
    pub label: String,
    pub precision: BigRational,
    pub recall: BigRational,
    pub f1: BigRational,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub matrix: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    /// Support-weighted means over classes with support > 0; `support` is
    /// the instance count.
    pub weighted: ClassMetrics,
}

pub const WEIGHTED_LABEL: &str = "Average / Total";

pub fn compute_metrics(matrix: &ConfusionMatrix) -> Result<EvaluationReport, MetricsError> {
    matrix.check()?;
    let per_class: Vec<ClassMetrics> = matrix
        .labels
        .iter()
        .enumerate()
        .map(|(c, label)| {
            let tp = matrix.counts[c][c];
            let support = matrix.row_sum(c);
            let precision = ratio(tp, matrix.col_sum(c));
            let recall = ratio(tp, support);
            let f1 = f1_score(&precision, &recall);
            ClassMetrics {
                label: label.clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();

    let total: u64 = per_class.iter().map(|m| m.support).sum();
    let weighted_mean = |get: fn(&ClassMetrics) -> &BigRational| -> BigRational {
        if total == 0 {
            return BigRational::zero();
        }
        let sum = per_class
            .iter()
            .filter(|m| m.support > 0)
            .fold(BigRational::zero(), |acc, m| acc + get(m) * BigInt::from(m.support));
        sum / BigInt::from(total)
    };
    let weighted = ClassMetrics {
        label: WEIGHTED_LABEL.to_string(),
        precision: weighted_mean(|m| &m.precision),
        recall: weighted_mean(|m| &m.recall),
        f1: weighted_mean(|m| &m.f1),
        support: total,
    };
    Ok(EvaluationReport {
        matrix: matrix.clone(),
        per_class,
        weighted,
    })
}

impl EvaluationReport {
    pub fn from_matrix(matrix: &ConfusionMatrix) -> Result<Self, MetricsError> {
        compute_metrics(matrix)
    }

    pub fn labels(&self) -> &[String] {
        &self.matrix.labels
    }

    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.label == label)
    }

    pub fn accuracy(&self) -> BigRational {
        ratio(self.matrix.correct(), self.matrix.total())
    }

    pub fn most_confused(&self) -> Option<(&str, &str, u64)> {
        self.matrix.most_confused()
    }

    /// Fixed-width table: label, precision, recall, f1-score, support, and a
    /// closing weighted row. Values are rounded to two decimals.
    pub fn to_table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|m| m.label.chars().count())
            .chain(std::iter::once(WEIGHTED_LABEL.len()))
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "", "precision", "recall", "f1-score", "support"
        );
        let row = |m: &ClassMetrics, out: &mut String| {
            let _ = writeln!(
                out,
                "{:width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>9}",
                m.label,
                to_f64(&m.precision),
                to_f64(&m.recall),
                to_f64(&m.f1),
                m.support
            );
        };
        for m in &self.per_class {
            row(m, &mut out);
        }
        out.push('\n');
        row(&self.weighted, &mut out);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: i64,
    #[serde(skip)]
    pub exact: [BigRational; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportComparison {
    pub per_class: Vec<MetricDelta>,
    pub weighted: MetricDelta,
}

fn delta(before: &ClassMetrics, after: &ClassMetrics) -> MetricDelta {
    let exact = [
        &after.precision - &before.precision,
        &after.recall - &before.recall,
        &after.f1 - &before.f1,
    ];
    MetricDelta {
        label: after.label.clone(),
        precision: to_f64(&exact[0]),
        recall: to_f64(&exact[1]),
        f1: to_f64(&exact[2]),
        support: after.support as i64 - before.support as i64,
        exact,
    }
}

/// Signed `after − before` for every class and for the weighted row.
pub fn compare_reports(before: &EvaluationReport, after: &EvaluationReport) -> Result<ReportComparison, MetricsError> {
    if before.labels() != after.labels() {
        return Err(MetricsError::LabelSetMismatch);
    }
    Ok(ReportComparison {
        per_class: before
            .per_class
            .iter()
            .zip(&after.per_class)
            .map(|(b, a)| delta(b, a))
            .collect(),
        weighted: delta(&before.weighted, &after.weighted),
    })
}

impl ReportComparison {
    pub fn class(&self, label: &str) -> Option<&MetricDelta> {
        self.per_class.iter().find(|d| d.label == label)
    }

    pub fn to_table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|d| d.label.chars().count())
            .chain(std::iter::once(WEIGHTED_LABEL.len()))
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "", "Δprec", "Δrecall", "Δf1", "Δsupport"
        );
        for d in self.per_class.iter().chain(std::iter::once(&self.weighted)) {
            let _ = writeln!(
                out,
                "{:width$}  {:>+9.4}  {:>+9.4}  {:>+9.4}  {:>+9}",
                d.label, d.precision, d.recall, d.f1, d.support
            );
        }
        out
    }
}

mod wire {
    use std::str::FromStr;

    use num_rational::BigRational;
    use serde::{Deserialize, Serialize};

    use super::{to_f64, ClassMetrics};

    /// Exact values travel as `"n/d"` strings; the float fields are for
    /// display and ignored on input.
    #[derive(Serialize, Deserialize)]
    pub struct ClassMetricsWire {
        label: String,
        precision: String,
        recall: String,
        f1: String,
        support: u64,
        #[serde(default)]
        precision_value: f64,
        #[serde(default)]
        recall_value: f64,
        #[serde(default)]
        f1_value: f64,
    }

    impl From<ClassMetrics> for ClassMetricsWire {
        fn from(m: ClassMetrics) -> Self {
            ClassMetricsWire {
                precision_value: to_f64(&m.precision),
                recall_value: to_f64(&m.recall),
                f1_value: to_f64(&m.f1),
                precision: m.precision.to_string(),
                recall: m.recall.to_string(),
                f1: m.f1.to_string(),
                label: m.label,
                support: m.support,
            }
        }
    }

    impl TryFrom<ClassMetricsWire> for ClassMetrics {
        type Error = String;

        fn try_from(w: ClassMetricsWire) -> Result<Self, String> {
            let parse = |s: &str| BigRational::from_str(s).map_err(|e| format!("bad rational '{s}': {e}"));
            Ok(ClassMetrics {
                precision: parse(&w.precision)?,
                recall: parse(&w.recall)?,
                f1: parse(&w.f1)?,
                label: w.label,
                support: w.support,
            })
        }
    }
}
