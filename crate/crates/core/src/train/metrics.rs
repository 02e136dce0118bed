use std::fmt::Write as _;

use crate::{Error, Result};

/// Classification metrics with macro-averaged precision, recall and F1.
///
/// Classes whose precision or recall denominator is zero contribute 0 to the
/// corresponding average.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn from_predictions(predicted: &[usize], actual: &[usize], num_classes: usize) -> Result<Self> {
        if actual.is_empty() {
            return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
        }
        if predicted.len() != actual.len() {
            return Err(Error::Invalid(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&p, &a) in predicted.iter().zip(actual) {
            if p >= num_classes || a >= num_classes {
                return Err(Error::Invalid(format!("class index out of range for {num_classes} classes")));
            }
            confusion[a][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let k = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for c in 0..k {
            let tp = confusion[c][c];
            let predicted: usize = (0..k).map(|a| confusion[a][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            p_sum += p;
            r_sum += r;
            f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        let kf = k.max(1) as f64;
        Metrics {
            accuracy: ratio(correct, total),
            precision: p_sum / kf,
            recall: r_sum / kf,
            f1: f_sum / kf,
            confusion,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// `key=value` lines: acc, prec, rec, f1 and the confusion matrix with
    /// rows separated by `;`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [("acc", self.accuracy), ("prec", self.precision), ("rec", self.recall), ("f1", self.f1)] {
            let _ = writeln!(s, "{k}={v}");
        }
        let rows: Vec<String> = self
            .confusion
            .iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "))
            .collect();
        let _ = writeln!(s, "confusion={}", rows.join(";"));
        s
    }
}
