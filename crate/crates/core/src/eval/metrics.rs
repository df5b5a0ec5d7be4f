use serde::{Deserialize, Serialize};

use super::EvalError;

/// Counts with rows as ground truth and columns as predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: &[&str], counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let c = classes.len();
        if counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(EvalError::Shape(format!(
                "a {c}-class matrix needs {c}×{c} counts"
            )));
        }
        Ok(Self {
            classes: classes.iter().map(|s| s.to_string()).collect(),
            counts,
        })
    }

    pub fn from_indices(truth: &[usize], pred: &[usize], classes: &[&str]) -> Result<Self, EvalError> {
        if truth.len() != pred.len() {
            return Err(EvalError::LengthMismatch {
                truth: truth.len(),
                pred: pred.len(),
            });
        }
        let c = classes.len();
        let mut counts = vec![vec![0u64; c]; c];
        for (&t, &p) in truth.iter().zip(pred) {
            for l in [t, p] {
                if l >= c {
                    return Err(EvalError::UnknownLabel(l.to_string()));
                }
            }
            counts[t][p] += 1;
        }
        Self::from_counts(classes, counts)
    }

    pub fn from_labels<S: AsRef<str>>(truth: &[S], pred: &[S], classes: &[&str]) -> Result<Self, EvalError> {
        let index = |l: &S| {
            classes
                .iter()
                .position(|c| *c == l.as_ref())
                .ok_or_else(|| EvalError::UnknownLabel(l.as_ref().to_string()))
        };
        let t = truth.iter().map(index).collect::<Result<Vec<_>, _>>()?;
        let p = pred.iter().map(index).collect::<Result<Vec<_>, _>>()?;
        Self::from_indices(&t, &p, classes)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a zero denominator forced a value to 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.num_classes())
        .map(|c| {
            let tp = cm.counts[c][c];
            let (precision, dp) = ratio(tp, cm.col_sum(c));
            let (recall, dr) = ratio(tp, cm.row_sum(c));
            let (f1, df) = if precision + recall == 0.0 {
                (0.0, true)
            } else {
                (2.0 * precision * recall / (precision + recall), false)
            };
            ClassMetrics {
                class: cm.classes[c].clone(),
                precision,
                recall,
                f1,
                support: cm.row_sum(c),
                degenerate: dp || dr || df,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub accuracy: f64,
    /// Unweighted mean over every class in the schema.
    pub macro_f1: f64,
    /// Support-weighted mean.
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

pub fn summarize(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let n = cm.total();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let per_class = per_class_metrics(cm);
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
    let weighted_f1 = per_class
        .iter()
        .map(|m| m.f1 * m.support as f64 / n as f64)
        .sum();
    Ok(MetricsReport {
        n,
        accuracy: cm.trace() as f64 / n as f64,
        macro_f1,
        weighted_f1,
        per_class,
        confusion: cm.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Accuracy,
    MacroF1,
    WeightedF1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Accuracy, Metric::MacroF1, Metric::WeightedF1];

    pub fn of(self, r: &MetricsReport) -> f64 {
        match self {
            Metric::Accuracy => r.accuracy,
            Metric::MacroF1 => r.macro_f1,
            Metric::WeightedF1 => r.weighted_f1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro-f1",
            Metric::WeightedF1 => "weighted-f1",
        }
    }
}

/// Predicts the most frequent training class; ties go to the lower index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityClassifier {
    pub class: usize,
}

impl MajorityClassifier {
    pub fn fit(labels: &[usize], num_classes: usize) -> Result<Self, EvalError> {
        if labels.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut counts = vec![0usize; num_classes];
        for &l in labels {
            *counts
                .get_mut(l)
                .ok_or_else(|| EvalError::UnknownLabel(l.to_string()))? += 1;
        }
        let best = counts.iter().copied().max().unwrap_or(0);
        Ok(Self {
            class: counts.iter().position(|&c| c == best).unwrap_or(0),
        })
    }

    pub fn predict(&self, n: usize) -> Vec<usize> {
        vec![self.class; n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_all_wrong() {
        let cm = ConfusionMatrix::from_labels(&["A", "B"], &["A", "B"], &["A", "B"]).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0], vec![0, 1]]);
        let m = per_class_metrics(&cm);
        assert!(m.iter().all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
        let cm = ConfusionMatrix::from_labels(&["A", "B"], &["B", "A"], &["A", "B"]).unwrap();
        assert_eq!(cm.trace(), 0);
        assert_eq!(cm.row_sum(0), 1);
    }

    #[test]
    fn unknown_label_is_named() {
        let err = ConfusionMatrix::from_labels(&["A", "Z"], &["A", "A"], &["A", "B"]).unwrap_err();
        assert!(err.to_string().contains("\"Z\""), "{err}");
    }

    #[test]
    fn majority_seven_three() {
        let labels: Vec<usize> = [0; 7].iter().chain(&[1; 3]).copied().collect();
        let maj = MajorityClassifier::fit(&labels, 2).unwrap();
        assert_eq!(maj.class, 0);
        let cm = ConfusionMatrix::from_indices(&labels, &maj.predict(10), &["A", "B"]).unwrap();
        let r = summarize(&cm).unwrap();
        assert!((r.accuracy - 0.7).abs() < 1e-12);
        // f1_A = 2·0.7·1/(1.7) = 14/17, f1_B = 0
        assert!((r.macro_f1 - 7.0 / 17.0).abs() < 1e-12);
        assert!((r.macro_f1 - 0.4118).abs() < 5e-5);
        assert!(r.per_class[1].degenerate);
    }

    #[test]
    fn majority_tie_goes_to_schema_first() {
        let labels = [1, 0, 1, 0, 0, 1, 1, 0, 0, 1];
        assert_eq!(MajorityClassifier::fit(&labels, 3).unwrap().class, 0);
        assert!(MajorityClassifier::fit(&[], 3).is_err());
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let cm = ConfusionMatrix::from_counts(&["A", "B"], vec![vec![0, 0], vec![0, 0]]).unwrap();
        assert!(matches!(summarize(&cm), Err(EvalError::Empty)));
    }
}
