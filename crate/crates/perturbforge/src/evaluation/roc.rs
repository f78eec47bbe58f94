//! ROC curves and AUC by threshold sweep.

use std::path::Path;

use super::EvalError;

/// Points run from (0, 0) to (1, 1), nondecreasing in both coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweep thresholds over the sorted unique scores (ties grouped) and
/// integrate with the trapezoid rule. The result equals the pair-ordering
/// statistic: P(score_pos > score_neg) + 0.5 P(tie).
pub fn roc_auc(scores: &[f32], labels: &[bool]) -> Result<RocCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass(format!(
            "{n_pos} positives, {n_neg} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }

    let mut auc = 0.0f64;
    for pair in points.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        auc += (x1 - x0) * (y0 + y1) * 0.5;
    }
    Ok(RocCurve { points, auc })
}

/// fpr,tpr rows.
pub fn write_roc_csv(curve: &RocCurve, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut out = String::from("fpr,tpr\n");
    for (fpr, tpr) in &curve.points {
        out.push_str(&format!("{fpr},{tpr}\n"));
    }
    std::fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force pair counting: the independent oracle for AUC.
    pub(crate) fn auc_by_pair_counting(scores: &[f32], labels: &[bool]) -> f64 {
        let mut won = 0.0f64;
        let mut total = 0.0f64;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                total += 1.0;
                if scores[i] > scores[j] {
                    won += 1.0;
                } else if scores[i] == scores[j] {
                    won += 0.5;
                }
            }
        }
        won / total
    }

    #[test]
    fn perfectly_separated_scores_have_auc_one() {
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1];
        let labels = [true, true, true, false, false];
        let curve = roc_auc(&scores, &labels).unwrap();
        assert_eq!(curve.auc, 1.0);
        assert_eq!(*curve.points.first().unwrap(), (0.0, 0.0));
        assert_eq!(*curve.points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn fully_tied_scores_have_auc_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, true, false];
        let curve = roc_auc(&scores, &labels).unwrap();
        assert!((curve.auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn four_point_example() {
        // 3 of the 4 positive/negative pairs are ordered correctly.
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        let curve = roc_auc(&scores, &labels).unwrap();
        assert!((curve.auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn matches_reference_auc_on_frozen_case() {
        // Expected value computed with scikit-learn's roc_auc_score.
        let scores = [
            0.6723, 0.4881, 0.8255, 0.0314, 0.808, 0.5656, 0.2976, 0.0467, 0.9906, 0.0068,
            0.7698, 0.7468, 0.3774, 0.4941, 0.9289, 0.3955, 0.974, 0.5244, 0.0936, 0.8133,
            0.2117, 0.5543, 0.2923, 0.8161,
        ];
        let labels = [
            true, false, true, false, false, false, false, false, true, false, false, false,
            true, true, false, true, true, false, true, true, true, true, false, true,
        ];
        let curve = roc_auc(&scores, &labels).unwrap();
        assert!((curve.auc - 0.6527777777777778).abs() < 1e-9);
        assert!((curve.auc - auc_by_pair_counting(&scores, &labels)).abs() < 1e-9);
    }

    #[test]
    fn single_class_input_is_rejected() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(EvalError::SingleClass(_))
        ));
    }

    #[test]
    fn curve_is_monotone() {
        let scores = [0.1, 0.9, 0.4, 0.4, 0.6, 0.3, 0.7, 0.2];
        let labels = [false, true, true, false, true, false, false, true];
        let curve = roc_auc(&scores, &labels).unwrap();
        for pair in curve.points.windows(2) {
            assert!(pair[1].0 >= pair[0].0);
            assert!(pair[1].1 >= pair[0].1);
        }
    }
}
