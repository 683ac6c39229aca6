//! Precision and success measures.
//!
//! Precision thresholds are inclusive (`error <= t`); success thresholds are
//! strict (`overlap > t`). The success AUC is the plain mean over the 21
//! thresholds `0, 0.05, ..., 1`, so a perfect run scores 20/21.

pub const SUCCESS_STEPS: usize = 21;

/// Fraction of frames whose center error is at most `threshold` pixels.
/// An empty input scores 0.
pub fn precision_at(center_errors: &[f64], threshold: f64) -> f64 {
    if center_errors.is_empty() {
        log::warn!("precision of an empty sequence is taken as 0");
        return 0.0;
    }
    center_errors.iter().filter(|&&e| e <= threshold).count() as f64 / center_errors.len() as f64
}

pub fn success_thresholds() -> Vec<f64> {
    (0..SUCCESS_STEPS).map(|i| i as f64 / 20.0).collect()
}

/// Success rate at each threshold and its mean.
pub fn success_curve(overlaps: &[f64]) -> (Vec<f64>, f64) {
    let curve: Vec<f64> = success_thresholds()
        .into_iter()
        .map(|t| {
            if overlaps.is_empty() {
                0.0
            } else {
                overlaps.iter().filter(|&&o| o > t).count() as f64 / overlaps.len() as f64
            }
        })
        .collect();
    let auc = curve.iter().sum::<f64>() / curve.len() as f64;
    (curve, auc)
}

/// Precision curve over integer pixel thresholds `0..=max`.
pub fn precision_curve(center_errors: &[f64], max: usize) -> Vec<f64> {
    (0..=max).map(|t| precision_at(center_errors, t as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_examples() {
        assert!((precision_at(&[5.0, 25.0, 10.0], 20.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_at(&[], 20.0), 0.0);
        assert_eq!(precision_at(&[20.0], 20.0), 1.0);
    }

    #[test]
    fn success_examples() {
        let (_, auc) = success_curve(&[1.0; 10]);
        assert!((auc - 20.0 / 21.0).abs() < 1e-15);
        assert_eq!(success_curve(&[0.0; 4]).1, 0.0);
        let (curve, _) = success_curve(&[0.5]);
        for (i, v) in curve.iter().enumerate() {
            assert_eq!(*v, if i < 10 { 1.0 } else { 0.0 }, "threshold {i}");
        }
    }
}
