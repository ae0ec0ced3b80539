//! ROC AUC, equal-error-rate threshold and HTER.

use crate::error::{Error, Result};

/// Area under the exact ROC curve by the trapezoidal rule, with
/// `positive` scores expected to be larger. Tied scores contribute the
/// diagonal, i.e. half credit.
pub fn roc_auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::InvalidArgument("AUC needs both positive and negative scores".into()));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let score = all[i].0;
        while i < all.len() && all[i].0 == score {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp as f64 / np, fp as f64 / nn);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

/// How the HTER operating point is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Equal-error-rate point of the evaluated scores.
    Eer,
    Fixed(f64),
}

/// Evaluation summary; a sample is accepted as real when its score is at
/// least `eer_threshold` (the fixed threshold in fixed mode).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub auc: f64,
    pub hter: f64,
    pub eer_threshold: f64,
    /// Fraction of fakes accepted as real.
    pub far: f64,
    /// Fraction of reals rejected.
    pub frr: f64,
}

fn rates(real: &[f64], fake: &[f64], threshold: f64) -> (f64, f64) {
    // both slices sorted ascending
    let fake_accepted = fake.len() - fake.partition_point(|&s| s < threshold);
    let real_rejected = real.partition_point(|&s| s < threshold);
    (
        fake_accepted as f64 / fake.len() as f64,
        real_rejected as f64 / real.len() as f64,
    )
}

/// Metrics for "real-ness" scores of real and fake samples.
pub fn evaluate_scores(real_scores: &[f64], fake_scores: &[f64], mode: ThresholdMode) -> Result<Metrics> {
    let auc = roc_auc(real_scores, fake_scores)?;
    let mut real = real_scores.to_vec();
    let mut fake = fake_scores.to_vec();
    real.sort_by(f64::total_cmp);
    fake.sort_by(f64::total_cmp);

    let threshold = match mode {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Eer => {
            let mut candidates: Vec<f64> = real.iter().chain(&fake).copied().collect();
            candidates.sort_by(f64::total_cmp);
            candidates.dedup();
            candidates.push(f64::INFINITY);
            let mut best = (f64::INFINITY, f64::INFINITY, candidates[0]);
            for &t in &candidates {
                let (far, frr) = rates(&real, &fake, t);
                let key = ((far - frr).abs(), (far + frr) / 2.0);
                if key.0 < best.0 || (key.0 == best.0 && key.1 < best.1) {
                    best = (key.0, key.1, t);
                }
            }
            best.2
        }
    };
    let (far, frr) = rates(&real, &fake, threshold);
    Ok(Metrics {
        auc,
        hter: (far + frr) / 2.0,
        eer_threshold: threshold,
        far,
        frr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        let m = evaluate_scores(&[0.9, 0.8, 0.7], &[0.1, 0.2], ThresholdMode::Eer).unwrap();
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.hter, 0.0);
        let m = evaluate_scores(&[0.1, 0.2], &[0.9, 0.8, 0.7], ThresholdMode::Eer).unwrap();
        assert_eq!(m.auc, 0.0);
    }

    #[test]
    fn three_quarter_example() {
        // fake-ness as the positive score
        let auc = roc_auc(&[0.9, 0.4], &[0.1, 0.6]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn ties_get_half_credit() {
        assert_eq!(roc_auc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.5, 0.7], &[0.5]).unwrap(), 0.75);
    }

    #[test]
    fn single_class_rejected() {
        assert!(evaluate_scores(&[0.3], &[], ThresholdMode::Eer).is_err());
    }

    #[test]
    fn fixed_threshold_mode() {
        let m = evaluate_scores(&[0.9, 0.4], &[0.6, 0.1], ThresholdMode::Fixed(0.5)).unwrap();
        assert_eq!((m.far, m.frr, m.hter), (0.5, 0.5, 0.5));
    }
}
