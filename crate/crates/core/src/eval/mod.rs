//! Classification metrics, McNemar's test, the majority baseline, and the
//! train-on-one-year / test-on-another harness.

mod cross_year;

pub use cross_year::{cross_year, CrossYearMatrix, Labelled};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{0}")]
    Trial(String),
}

/// Chi-squared critical value with one degree of freedom at alpha = 0.05.
pub const CHI2_1DF_05: f64 = 3.841;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// True when precision or recall had a zero denominator and was set to 0.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_examples: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    /// `confusion[gold][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Metrics over class indices `0..n_classes`.
pub fn compute_metrics(gold: &[usize], pred: &[usize], n_classes: usize) -> Result<EvaluationReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Usage(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(EvalError::Usage("cannot evaluate zero examples".into()));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&g, &p) in gold.iter().zip(pred) {
        if g >= n_classes || p >= n_classes {
            return Err(EvalError::Usage(format!("label {} outside 0..{n_classes}", g.max(p))));
        }
        confusion[g][p] += 1;
    }
    let n = gold.len();
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassScores> = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..n_classes).map(|g| confusion[g][c]).sum();
            let (precision, dp) = ratio(tp, predicted);
            let (recall, dr) = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                precision,
                recall,
                f1,
                support,
                degenerate: dp || dr,
            }
        })
        .collect();
    let weighted = |f: fn(&ClassScores) -> f64| -> f64 {
        per_class.iter().map(|s| s.support as f64 * f(s)).sum::<f64>() / n as f64
    };
    Ok(EvaluationReport {
        n_examples: n,
        accuracy: correct as f64 / n as f64,
        weighted_precision: weighted(|s| s.precision),
        // Support-weighted recall reduces to sum(tp) / n; computing it in
        // that form keeps it bit-identical to accuracy.
        weighted_recall: correct as f64 / n as f64,
        weighted_f1: weighted(|s| s.f1),
        macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / n_classes as f64,
        per_class,
        confusion,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// System A correct, system B wrong.
    pub b: usize,
    /// System A wrong, system B correct.
    pub c: usize,
    pub statistic: f64,
    pub significant_at_05: bool,
}

impl McNemarResult {
    /// Continuity-corrected statistic from the discordant counts.
    pub fn from_counts(b: usize, c: usize) -> Self {
        let statistic = if b + c == 0 {
            0.0
        } else {
            let d = (b as f64 - c as f64).abs() - 1.0;
            d * d / (b + c) as f64
        };
        Self {
            b,
            c,
            statistic,
            significant_at_05: statistic > CHI2_1DF_05,
        }
    }
}

pub fn mcnemar(gold: &[usize], pred_a: &[usize], pred_b: &[usize]) -> Result<McNemarResult, EvalError> {
    if gold.len() != pred_a.len() || gold.len() != pred_b.len() {
        return Err(EvalError::Usage("gold and prediction vectors differ in length".into()));
    }
    let mut b = 0;
    let mut c = 0;
    for ((g, a), bb) in gold.iter().zip(pred_a).zip(pred_b) {
        match (a == g, bb == g) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(McNemarResult::from_counts(b, c))
}

/// Most frequent training class; ties go to the lowest index (`real`).
pub fn majority_class(train_labels: &[usize], n_classes: usize) -> Result<usize, EvalError> {
    if train_labels.is_empty() {
        return Err(EvalError::Usage("majority baseline needs training labels".into()));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in train_labels {
        if l >= n_classes {
            return Err(EvalError::Usage(format!("label {l} outside 0..{n_classes}")));
        }
        counts[l] += 1;
    }
    let mut best = 0;
    for (c, &k) in counts.iter().enumerate() {
        if k > counts[best] {
            best = c;
        }
    }
    Ok(best)
}

pub fn majority_baseline(
    train_labels: &[usize],
    test_gold: &[usize],
    n_classes: usize,
) -> Result<EvaluationReport, EvalError> {
    let majority = majority_class(train_labels, n_classes)?;
    compute_metrics(test_gold, &vec![majority; test_gold.len()], n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Explicit loops over the confusion matrix, written independently.
    fn oracle(gold: &[usize], pred: &[usize], k: usize) -> (Vec<(f64, f64, f64)>, f64, f64, f64) {
        let mut m = vec![vec![0usize; k]; k];
        for i in 0..gold.len() {
            m[gold[i]][pred[i]] += 1;
        }
        let mut scores = Vec::new();
        for c in 0..k {
            let tp = m[c][c];
            let mut fp = 0;
            let mut fn_ = 0;
            for o in 0..k {
                if o != c {
                    fp += m[o][c];
                    fn_ += m[c][o];
                }
            }
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            scores.push((p, r, f));
        }
        let acc = (0..k).map(|c| m[c][c]).sum::<usize>() as f64 / gold.len() as f64;
        let macro_f1 = scores.iter().map(|s| s.2).sum::<f64>() / k as f64;
        let mut wf = 0.0;
        for c in 0..k {
            wf += m[c].iter().sum::<usize>() as f64 * scores[c].2;
        }
        (scores, acc, macro_f1, wf / gold.len() as f64)
    }

    #[test]
    fn perfect_predictions() {
        let g = [0, 1, 1, 0, 1];
        let r = compute_metrics(&g, &g, 2).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        assert_eq!(r.weighted_precision, 1.0);
    }

    #[test]
    fn hand_counted_example() {
        // real = 0, fake = 1; gold [r, r, f, f], pred [r, f, f, f].
        let r = compute_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(r.confusion, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[0].recall, 0.5);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class[1].precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].recall, 1.0);
        assert!((r.per_class[1].f1 - 0.8).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.75);
        assert!((r.weighted_precision - 5.0 / 6.0).abs() < 1e-15);
        assert!((r.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn majority_on_59_41_split() {
        let gold: Vec<usize> = (0..100).map(|i| usize::from(i >= 59)).collect();
        let r = majority_baseline(&gold, &gold, 2).unwrap();
        assert_eq!(r.accuracy, 0.59);
        assert!((r.macro_f1 - 0.37).abs() < 0.01, "{}", r.macro_f1);
        assert!(r.per_class[1].degenerate);
        assert!(!r.per_class[0].degenerate);
    }

    #[test]
    fn majority_tie_prefers_real() {
        assert_eq!(majority_class(&[1, 0, 1, 0], 2).unwrap(), 0);
        assert_eq!(majority_class(&[1, 1, 1, 0, 0], 2).unwrap(), 1);
        assert!(majority_class(&[], 2).is_err());
    }

    #[test]
    fn length_mismatch_is_usage_error() {
        assert!(matches!(compute_metrics(&[0, 1], &[0], 2), Err(EvalError::Usage(_))));
    }

    #[test]
    fn mcnemar_examples() {
        let r = McNemarResult::from_counts(15, 5);
        assert_eq!(r.statistic, 81.0 / 20.0);
        assert!(r.significant_at_05);
        let r = McNemarResult::from_counts(10, 10);
        assert_eq!(r.statistic, 0.05);
        assert!(!r.significant_at_05);
        let g = [0, 1, 1, 0];
        let same = mcnemar(&g, &[1, 1, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!((same.b, same.c, same.statistic, same.significant_at_05), (0, 0, 0.0, false));
    }

    proptest! {
        #[test]
        fn matches_bruteforce(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60), k in 2usize..4) {
            let gold: Vec<usize> = pairs.iter().map(|p| p.0 % k).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1 % k).collect();
            let r = compute_metrics(&gold, &pred, k).unwrap();
            let (scores, acc, macro_f1, wf) = oracle(&gold, &pred, k);
            for (s, o) in r.per_class.iter().zip(&scores) {
                prop_assert_eq!((s.precision, s.recall, s.f1), *o);
            }
            prop_assert_eq!(r.accuracy, acc);
            prop_assert_eq!(r.macro_f1, macro_f1);
            prop_assert_eq!(r.weighted_f1, wf);
            prop_assert_eq!(r.weighted_recall, r.accuracy);
            prop_assert_eq!(r.confusion.iter().flatten().sum::<usize>(), gold.len());
        }

        #[test]
        fn mcnemar_swap_symmetry(triples in prop::collection::vec((0usize..2, 0usize..2, 0usize..2), 1..80)) {
            let g: Vec<usize> = triples.iter().map(|t| t.0).collect();
            let a: Vec<usize> = triples.iter().map(|t| t.1).collect();
            let b: Vec<usize> = triples.iter().map(|t| t.2).collect();
            let ab = mcnemar(&g, &a, &b).unwrap();
            let ba = mcnemar(&g, &b, &a).unwrap();
            prop_assert_eq!((ab.b, ab.c), (ba.c, ba.b));
            prop_assert_eq!(ab.statistic, ba.statistic);
            prop_assert!(ab.statistic >= 0.0);
        }
    }
}
