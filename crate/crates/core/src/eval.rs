//! Alignment quality metrics against ground truth.
//!
//! Ground truth maps each frame of journey a to its best frame of journey
//! b. A predicted alignment is scored on the frames it actually ventured
//! an answer for: the hit rate is the fraction of predictions within the
//! frame tolerance, and coverage reports how much of the ground truth was
//! answered at all. A cautious matcher can therefore have high precision
//! and low coverage; both numbers are reported so neither can hide.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Fraction of ground-truth frames with at least one prediction.
    pub coverage: f64,
    /// Fraction of evaluated predictions within the tolerance.
    pub hit_rate: f64,
    /// Mean absolute frame offset over evaluated predictions.
    pub mean_abs_offset: f64,
    /// Median absolute frame offset over evaluated predictions.
    pub median_abs_offset: f64,
    /// Predictions whose source frame exists in the ground truth.
    pub evaluated: usize,
}

/// Scores predicted `(frame_a, frame_b)` pairs against ground-truth pairs.
/// Predictions for frames absent from the ground truth are ignored; with no
/// evaluable predictions all metrics are zero and `evaluated` says so.
pub fn evaluate(
    predicted: &[(usize, usize)],
    truth: &[(usize, usize)],
    tolerance: usize,
) -> EvalReport {
    let reference: BTreeMap<usize, usize> = truth.iter().copied().collect();
    let mut offsets: Vec<f64> = Vec::new();
    let mut hits = 0usize;
    let mut answered: BTreeMap<usize, bool> = BTreeMap::new();
    for &(a, b) in predicted {
        if let Some(&want) = reference.get(&a) {
            let off = b.abs_diff(want);
            if off <= tolerance {
                hits += 1;
            }
            offsets.push(off as f64);
            answered.insert(a, true);
        }
    }
    let evaluated = offsets.len();
    if evaluated == 0 {
        return EvalReport {
            coverage: 0.0,
            hit_rate: 0.0,
            mean_abs_offset: 0.0,
            median_abs_offset: 0.0,
            evaluated: 0,
        };
    }
    let coverage = if reference.is_empty() {
        0.0
    } else {
        answered.len() as f64 / reference.len() as f64
    };
    let mean = offsets.iter().sum::<f64>() / evaluated as f64;
    let mut sorted = offsets;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if evaluated % 2 == 1 {
        sorted[evaluated / 2]
    } else {
        0.5 * (sorted[evaluated / 2 - 1] + sorted[evaluated / 2])
    };
    EvalReport {
        coverage,
        hit_rate: hits as f64 / evaluated as f64,
        mean_abs_offset: mean,
        median_abs_offset: median,
        evaluated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_scores_one() {
        let truth: Vec<(usize, usize)> = (0..50).map(|i| (i, 2 * i)).collect();
        let report = evaluate(&truth, &truth, 0);
        assert_eq!(report.hit_rate, 1.0);
        assert_eq!(report.coverage, 1.0);
        assert_eq!(report.mean_abs_offset, 0.0);
        assert_eq!(report.evaluated, 50);
    }

    #[test]
    fn tolerance_separates_near_and_far_misses() {
        let truth = vec![(0, 10), (1, 20), (2, 30), (3, 40)];
        let predicted = vec![(0, 10), (1, 24), (2, 37), (3, 90)];
        let report = evaluate(&predicted, &truth, 4);
        // Offsets: 0, 4, 7, 50. Hits at tolerance 4: two of four.
        assert_eq!(report.hit_rate, 0.5);
        assert_eq!(report.evaluated, 4);
        assert_eq!(report.mean_abs_offset, (0.0 + 4.0 + 7.0 + 50.0) / 4.0);
        assert_eq!(report.median_abs_offset, (4.0 + 7.0) / 2.0);
    }

    #[test]
    fn unknown_frames_are_ignored() {
        let truth = vec![(10, 100), (11, 110)];
        let predicted = vec![(10, 100), (999, 0), (500, 1)];
        let report = evaluate(&predicted, &truth, 0);
        assert_eq!(report.evaluated, 1);
        assert_eq!(report.hit_rate, 1.0);
        assert_eq!(report.coverage, 0.5);
    }

    #[test]
    fn empty_prediction_is_all_zero() {
        let truth = vec![(0, 0), (1, 1)];
        let report = evaluate(&[], &truth, 4);
        assert_eq!(report.evaluated, 0);
        assert_eq!(report.hit_rate, 0.0);
        assert_eq!(report.coverage, 0.0);
    }

    #[test]
    fn repeated_source_frames_each_count() {
        // A time warp can propose several b-frames for one a-frame; every
        // proposal is scored, coverage counts the frame once.
        let truth = vec![(5, 50)];
        let predicted = vec![(5, 50), (5, 53), (5, 80)];
        let report = evaluate(&predicted, &truth, 4);
        assert_eq!(report.evaluated, 3);
        assert!((report.hit_rate - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.coverage, 1.0);
    }
}
