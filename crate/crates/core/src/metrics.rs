//! Classifier and trade-off metrics.
//!
//! ROC curves use grouped thresholds: tied scores advance as one block, so
//! the trapezoidal AUC equals the pairwise Mann-Whitney statistic with ties
//! counted as half. The Welch t-test evaluates its two-sided p-value through
//! the regularized incomplete beta function.

use crate::segmenter::{dice_score, segment, SegError, SegmenterParams};
use crate::volume::Sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scores and labels must have equal nonzero length")]
    ShapeMismatch,
    #[error("both classes must be present")]
    SingleClass,
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("group has {0} values; need at least 2")]
    GroupTooSmall(usize),
    #[error("group variance is zero")]
    ZeroVariance,
    #[error("auc value {0} outside [0, 1]")]
    AucOutOfRange(f64),
}

/// Ordered `(fpr, tpr)` points from (0,0) to (1,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

/// One checkpoint's place on the privacy/utility/fidelity curves.
/// `privacy` is always `2 * (1 - auc)` of the stored attack AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyUtilityPoint {
    pub step: u64,
    pub utility: f64,
    pub privacy: f64,
    pub auc: f64,
    pub fidelity: crate::radiomics::FidelityScore,
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricsError> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(MetricsError::ShapeMismatch);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((positives, negatives))
}

/// Threshold sweep over distinct score values, descending; tied scores
/// advance as one group, producing a diagonal segment.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, MetricsError> {
    let (positives, negatives) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == threshold {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
        i = j;
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under [`roc_curve`]; equal to the fraction of
/// (positive, negative) pairs ranked correctly with ties counted half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let curve = roc_curve(scores, labels)?;
    let mut area = 0.0;
    for pair in curve.points.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(area)
}

/// Welch unequal-variance t-test; returns `(t, two_sided_p)`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64), MetricsError> {
    for group in [a, b] {
        if group.len() < 2 {
            return Err(MetricsError::GroupTooSmall(group.len()));
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    if va == 0.0 || vb == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa = va / na;
    let sb = vb / nb;
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok((t, student_t_two_sided_p(t, df)))
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom,
/// `P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Privacy protection from an attack AUC: `2 * (1 - auc)`, implemented
/// literally with no clamping, so an anti-correlated attacker (AUC < 0.5)
/// yields a value above 1 and stays visible downstream.
pub fn privacy_protection(auc_value: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&auc_value) {
        return Err(MetricsError::AucOutOfRange(auc_value));
    }
    Ok(2.0 * (1.0 - auc_value))
}

/// Mean Dice between truth masks and the segmenter's predictions on real
/// validation images.
pub fn utility_synthetic(
    seg: &SegmenterParams,
    validation: &[Sample],
    threshold: f64,
) -> Result<f64, SegError> {
    if validation.is_empty() {
        return Err(SegError::EmptyDataset);
    }
    let scores = crate::exec::map_slice(validation, |s| {
        let pred = segment(seg, &s.volume, threshold)?;
        dice_score(&pred, &s.mask)
    });
    let mut sum = 0.0;
    for s in scores {
        sum += s?;
    }
    Ok(sum / validation.len() as f64)
}

/// Increase in mean Dice of the synthetic-augmented segmenter over the
/// real-only baseline, on the same validation set.
pub fn utility_augmentation(
    augmented: &SegmenterParams,
    baseline: &SegmenterParams,
    validation: &[Sample],
    threshold: f64,
) -> Result<f64, SegError> {
    let u_aug = utility_synthetic(augmented, validation, threshold)?;
    let u_base = utility_synthetic(baseline, validation, threshold)?;
    Ok(u_aug - u_base)
}

// --- special functions -----------------------------------------------------

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = 0.99999999999980993;
        for (i, c) in COEFFS.iter().enumerate() {
            acc += c / (x + i as f64 + 1.0);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const EPS: f64 = 3e-16;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force AUC: fraction of (positive, negative) pairs with the
    /// positive scored higher, ties counted half.
    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
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
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / total
    }

    /// Brute-force ROC points: one confusion matrix per distinct threshold.
    fn threshold_roc(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let p = labels.iter().filter(|&&l| l).count() as f64;
        let n = labels.len() as f64 - p;
        let mut points = vec![(0.0, 0.0)];
        for th in thresholds {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(s, &l)| l && **s >= th)
                .count() as f64;
            let fp = scores
                .iter()
                .zip(labels)
                .filter(|(s, &l)| !l && **s >= th)
                .count() as f64;
            points.push((fp / n, tp / p));
        }
        points
    }

    /// Two-sided Student-t p-value by numerical integration of the density,
    /// with the substitution u = t + s/(1-s) to cover the infinite tail.
    fn integrated_t_two_sided_p(t: f64, df: f64) -> f64 {
        let log_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
        let pdf = |u: f64| (log_norm - (df + 1.0) / 2.0 * (1.0 + u * u / df).ln()).exp();
        let t = t.abs();
        let steps = 200_000;
        let h = 1.0 / steps as f64;
        // Simpson over s in [0, 1): g(s) = pdf(t + s/(1-s)) / (1-s)^2
        let g = |s: f64| {
            let one_minus = 1.0 - s;
            if one_minus <= 1e-12 {
                0.0
            } else {
                pdf(t + s / one_minus) / (one_minus * one_minus)
            }
        };
        let mut sum = g(0.0);
        for i in 1..steps {
            let s = i as f64 * h;
            sum += if i % 2 == 1 { 4.0 * g(s) } else { 2.0 * g(s) };
        }
        let tail = h / 3.0 * sum;
        2.0 * tail
    }

    #[test]
    fn auc_trivial_cases() {
        // perfect separation
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        // one tied pair gives half credit
        assert_eq!(auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        // frozen mixed case: 3 wins of 4 pairs
        let scores = [0.8, 0.4, 0.6, 0.2];
        let labels = [true, true, false, false];
        assert_eq!(auc(&scores, &labels).unwrap(), 0.75);
        assert_eq!(pairwise_auc(&scores, &labels), 0.75);
    }

    #[test]
    fn roc_trivial_cases() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        let curve = roc_curve(&scores, &labels).unwrap();
        assert!(curve.points.contains(&(0.0, 1.0)));
        // all scores equal: single diagonal segment
        let curve = roc_curve(&[0.3; 5], &[true, true, false, false, false]).unwrap();
        assert_eq!(curve.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn roc_matches_threshold_enumeration() {
        let scores = [0.9, 0.1, 0.5, 0.5, 0.3, 0.7];
        let labels = [true, false, true, false, false, true];
        let curve = roc_curve(&scores, &labels).unwrap();
        assert_eq!(curve.points, threshold_roc(&scores, &labels));
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(matches!(roc_curve(&[0.1, 0.2], &[true, true]), Err(MetricsError::SingleClass)));
    }

    #[test]
    fn welch_symmetric_groups_give_zero_t_unit_p() {
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 1.0, 3.0];
        let (t, p) = welch_t_test(&a, &b).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn welch_matches_integrated_density() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let (t, p) = welch_t_test(&a, &b).unwrap();
        assert!((t + 1.0).abs() < 1e-12, "t = {t}");
        // df = 8 for these symmetric groups
        let oracle = integrated_t_two_sided_p(t, 8.0);
        assert!((p - oracle).abs() < 1e-6, "p = {p}, oracle = {oracle}");
        // antisymmetry
        let (t2, p2) = welch_t_test(&b, &a).unwrap();
        assert_eq!(t2, -t);
        assert_eq!(p2, p);
    }

    #[test]
    fn welch_separated_groups_have_tiny_p() {
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..10).map(|i| 100.0 + i as f64 * 0.1).collect();
        let (_, p) = welch_t_test(&a, &b).unwrap();
        assert!(p < 1e-4, "p = {p}");
    }

    #[test]
    fn welch_rejects_degenerate_groups() {
        assert!(matches!(welch_t_test(&[1.0], &[1.0, 2.0]), Err(MetricsError::GroupTooSmall(1))));
        assert!(matches!(welch_t_test(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricsError::ZeroVariance)));
    }

    #[test]
    fn privacy_protection_paper_values() {
        assert!((privacy_protection(0.999).unwrap() - 0.002).abs() < 1e-15);
        assert_eq!(privacy_protection(0.5).unwrap(), 1.0);
        assert!((privacy_protection(0.51).unwrap() - 0.98).abs() < 1e-15);
        // literal formula: anti-correlated attacker surfaces as P > 1
        assert!(privacy_protection(0.25).unwrap() > 1.0);
        assert!(privacy_protection(1.2).is_err());
    }

    #[test]
    fn incomplete_beta_endpoints() {
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 1.0), 1.0);
        // I_x(1,1) = x
        assert!((regularized_incomplete_beta(1.0, 1.0, 0.37) - 0.37).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn trapezoid_equals_pairwise(n in 4usize..40, seed in 0u64..500) {
            use rand::Rng;
            let mut rng = crate::seed::rng_from_seed(seed);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64) / 10.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            labels[0] = true;
            labels[1] = false;
            let lhs = auc(&scores, &labels).unwrap();
            let rhs = pairwise_auc(&scores, &labels);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn auc_flip_identity(n in 4usize..30, seed in 0u64..200) {
            use rand::Rng;
            let mut rng = crate::seed::rng_from_seed(seed ^ 0xabcd);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = auc(&scores, &labels).unwrap();
            let b = auc(&scores, &flipped).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(n in 4usize..30, seed in 0u64..200) {
            use rand::Rng;
            let mut rng = crate::seed::rng_from_seed(seed ^ 0x1234);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            let a = auc(&scores, &labels).unwrap();
            let b = auc(&transformed, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
