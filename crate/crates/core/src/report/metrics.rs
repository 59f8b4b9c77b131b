use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::align::NormReport;
use crate::{Error, Result};

/// Index of the largest value; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose label is among the `k` largest logits. A class
/// outranks the label if its logit is larger, or equal with a lower index.
pub fn topk_accuracy(logits: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(o, &y)| {
            let target = o[y];
            let rank = o
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > target || (v == target && j < y))
                .count();
            rank < k
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// Counts of wrong predictions split by where they come from and go to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    /// New-class samples predicted wrongly.
    pub e_n: u64,
    /// Old-class samples predicted wrongly.
    pub e_o: u64,
    /// Old-class samples predicted as a new class.
    pub e_on: u64,
    /// Old-class samples predicted as a different old class.
    pub e_oo: u64,
    pub correct: u64,
    pub total: u64,
}

pub fn error_decomposition(predictions: &[usize], labels: &[usize], old_classes: &BTreeSet<usize>) -> ErrorDecomposition {
    let mut e = ErrorDecomposition::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        e.total += 1;
        if p == y {
            e.correct += 1;
        } else if old_classes.contains(&y) {
            e.e_o += 1;
            if old_classes.contains(&p) {
                e.e_oo += 1;
            } else {
                e.e_on += 1;
            }
        } else {
            e.e_n += 1;
        }
    }
    e
}

/// `m[i][j]` counts samples of true class `i` predicted as `j`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= num_classes || y >= num_classes {
            return Err(Error::invalid(format!(
                "class ({y}, {p}) out of range for {num_classes} classes"
            )));
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// Everything recorded about one incremental step. Class indices are head
/// columns, i.e. positions in the schedule's class order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based.
    pub step: usize,
    pub seen_classes: usize,
    pub new_classes: usize,
    pub top1: f64,
    pub top5: f64,
    pub errors: ErrorDecomposition,
    pub confusion: Vec<Vec<u64>>,
    /// Head norms captured before any post-training correction.
    pub norms: NormReport,
    /// Scale applied by weight aligning at this step, if it ran.
    pub gamma_applied: Option<f64>,
    /// Largest gap between logits of the aligned head and rescaled logits of
    /// the uncorrected head, over a probe batch of test samples.
    pub wa_equivalence_max_abs_diff: Option<f64>,
    /// Stored exemplars per class, in class order, after this step.
    pub memory_counts: Vec<usize>,
    pub epoch_losses: Vec<f64>,
    /// Kept out of the JSON record so metrics files are reproducible.
    #[serde(skip)]
    pub wallclock_seconds: f64,
}

pub const METRICS_CSV_HEADER: [&str; 11] = [
    "step",
    "seen_classes",
    "top1",
    "top5",
    "e_n",
    "e_o",
    "e_on",
    "e_oo",
    "gamma",
    "mean_norm_old",
    "mean_norm_new",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Aggregate CSV, one row per step.
pub fn metrics_csv(steps: &[StepMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_CSV_HEADER)?;
    for m in steps {
        w.write_record([
            m.step.to_string(),
            m.seen_classes.to_string(),
            m.top1.to_string(),
            m.top5.to_string(),
            m.errors.e_n.to_string(),
            m.errors.e_o.to_string(),
            m.errors.e_on.to_string(),
            m.errors.e_oo.to_string(),
            opt(m.norms.gamma),
            opt(m.norms.mean_old),
            m.norms.mean_new.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("flushing metrics CSV", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }

    #[test]
    fn topk_perfect_and_full() {
        let logits = vec![vec![5.0, 1.0, 0.0], vec![0.0, 2.0, 1.0]];
        assert_eq!(topk_accuracy(&logits, &[0, 1], 1), 1.0);
        assert_eq!(topk_accuracy(&logits, &[2, 0], 3), 1.0);
        assert_eq!(topk_accuracy(&logits, &[2, 0], 1), 0.0);
    }

    #[test]
    fn topk_tie_goes_to_lower_index() {
        let logits = vec![vec![1.0, 1.0]];
        assert_eq!(topk_accuracy(&logits, &[0], 1), 1.0);
        assert_eq!(topk_accuracy(&logits, &[1], 1), 0.0);
    }

    #[test]
    fn topk_matches_sort_oracle() {
        let mut rng = crate::seed::rng(1, "topk", &[]);
        let logits: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..7).map(|_| f64::from(rng.random_range(0..4u8))).collect())
            .collect();
        let labels: Vec<usize> = (0..20).map(|_| rng.random_range(0..7)).collect();
        for k in 1..=7 {
            let oracle = logits
                .iter()
                .zip(&labels)
                .filter(|(o, &y)| {
                    let mut idx: Vec<usize> = (0..7).collect();
                    // stable sort by descending value keeps lower index first on ties
                    idx.sort_by(|&a, &b| o[b].partial_cmp(&o[a]).unwrap());
                    idx[..k].contains(&y)
                })
                .count() as f64
                / 20.0;
            assert_eq!(topk_accuracy(&logits, &labels, k), oracle);
        }
    }

    #[test]
    fn decomposition_all_correct() {
        let e = error_decomposition(&[0, 1, 2], &[0, 1, 2], &[0].into());
        assert_eq!((e.e_n, e.e_o, e.e_on, e.e_oo), (0, 0, 0, 0));
        assert_eq!(e.correct, 3);
    }

    #[test]
    fn decomposition_matches_counting_oracle() {
        let mut rng = crate::seed::rng(2, "dec", &[]);
        let labels: Vec<usize> = (0..50).map(|_| rng.random_range(0..5)).collect();
        let preds: Vec<usize> = (0..50).map(|_| rng.random_range(0..5)).collect();
        let old: BTreeSet<usize> = [0, 1, 2].into();
        let e = error_decomposition(&preds, &labels, &old);
        let (mut en, mut eo, mut eon, mut eoo) = (0, 0, 0, 0);
        for i in 0..50 {
            let (y, p) = (labels[i], preds[i]);
            let y_old = y < 3;
            let p_old = p < 3;
            if y != p && !y_old {
                en += 1;
            }
            if y != p && y_old {
                eo += 1;
            }
            if y_old && !p_old {
                eon += 1;
            }
            if y_old && p_old && y != p {
                eoo += 1;
            }
        }
        assert_eq!((e.e_n, e.e_o, e.e_on, e.e_oo), (en, eo, eon, eoo));
        assert_eq!(e.e_o, e.e_on + e.e_oo);
        assert_eq!(e.e_n + e.e_o + e.correct, e.total);
    }

    #[test]
    fn table_schema_additivity() {
        // the CE row of the published error table
        let e = ErrorDecomposition { e_n: 314, e_o: 5360, e_on: 4027, e_oo: 1333, correct: 0, total: 0 };
        assert_eq!(e.e_o, e.e_on + e.e_oo);
    }

    #[test]
    fn confusion_cases() {
        let m = confusion_matrix(&[0, 1, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(m, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        let m = confusion_matrix(&[2], &[0], 3).unwrap();
        assert_eq!(m[0][2], 1);
        assert_eq!(m.iter().flatten().sum::<u64>(), 1);
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
    }

    #[test]
    fn confusion_matches_counting_oracle() {
        let mut rng = crate::seed::rng(3, "conf", &[]);
        let labels: Vec<usize> = (0..60).map(|_| rng.random_range(0..4)).collect();
        let preds: Vec<usize> = (0..60).map(|_| rng.random_range(0..4)).collect();
        let m = confusion_matrix(&preds, &labels, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let n = (0..60).filter(|&s| labels[s] == i && preds[s] == j).count() as u64;
                assert_eq!(m[i][j], n);
            }
            let row: u64 = m[i].iter().sum();
            assert_eq!(row, labels.iter().filter(|&&l| l == i).count() as u64);
        }
    }
}
