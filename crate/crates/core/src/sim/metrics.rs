//! Test-split metrics.

/// Root mean squared error; `0` for empty input.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let sq: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    (sq / predictions.len() as f64).sqrt()
}

/// F1 of the positive class after binarizing both sides at `threshold`
/// (positive means `value >= threshold`).
pub fn f1(predictions: &[f64], truths: &[f64], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (p, t) in predictions.iter().zip(truths) {
        match (*p >= threshold, *t >= threshold) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let v = [0.1, 0.6, 0.9];
        assert_eq!(rmse(&v, &v), 0.0);
        assert_eq!(f1(&v, &v, 0.5), 1.0);
    }

    #[test]
    fn hand_computed_f1() {
        assert!((f1(&[0.6, 0.4], &[0.7, 0.6], 0.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1(&[0.1, 0.2], &[0.7, 0.6], 0.5), 0.0);
        assert_eq!(f1(&[0.5], &[0.5], 0.5), 1.0);
    }

    #[test]
    fn constant_prediction_rmse() {
        let truths = [0.0, 1.0, 0.25, 0.75];
        let expect = ((0.25 + 0.25 + 0.0625 + 0.0625) / 4.0f64).sqrt();
        assert!((rmse(&[0.5; 4], &truths) - expect).abs() < 1e-15);
    }
}
