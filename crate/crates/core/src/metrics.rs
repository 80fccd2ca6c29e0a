//! Equal error rate, per-attack error rates and DET points.
//!
//! Scores are spoof scores: a trial is declared spoofed when its score is
//! `>= threshold` (ties count as spoof). The false positive rate is the
//! fraction of genuine trials declared spoofed, the false negative rate the
//! fraction of spoofed trials declared genuine.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audio_io::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    /// Decision threshold; `+inf` for the all-genuine end point.
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    /// Fraction in [0, 1].
    pub eer: f64,
    pub threshold: f64,
}

fn check(scores: &[f64], labels: &[Label]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let spoofed = labels.iter().filter(|&&l| l == Label::Spoofed).count();
    let genuine = labels.len() - spoofed;
    if spoofed == 0 || genuine == 0 {
        return Err(Error::Data("EER needs both genuine and spoofed trials".into()));
    }
    Ok((genuine, spoofed))
}

/// Operating points at every distinct score, ascending, plus the `(0, 1)` end point.
///
/// The first point is always `(1, 0)`.
pub fn det_points(scores: &[f64], labels: &[Label]) -> Result<Vec<DetPoint>> {
    let (genuine, spoofed) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut points = Vec::new();
    // Counts of genuine trials at or above the threshold / spoofed trials below it.
    let (mut genuine_above, mut spoofed_below) = (genuine, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        points.push(DetPoint {
            threshold,
            fpr: genuine_above as f64 / genuine as f64,
            fnr: spoofed_below as f64 / spoofed as f64,
        });
        while i < order.len() && scores[order[i]] == threshold {
            match labels[order[i]] {
                Label::Genuine => genuine_above -= 1,
                Label::Spoofed => spoofed_below += 1,
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        fnr: 1.0,
    });
    Ok(points)
}

/// EER with linear interpolation where `FPR - FNR` changes sign.
pub fn compute_eer(scores: &[f64], labels: &[Label]) -> Result<EerResult> {
    let points = det_points(scores, labels)?;
    eer_from_points(&points)
}

/// EER from an ascending-threshold operating-point sweep starting at `(1, 0)`.
pub fn eer_from_points(points: &[DetPoint]) -> Result<EerResult> {
    let cross = points
        .iter()
        .position(|p| p.fpr - p.fnr <= 0.0)
        .ok_or_else(|| Error::Numeric("DET sweep never crosses FPR = FNR".into()))?;
    let b = points[cross];
    if b.fpr == b.fnr || cross == 0 {
        return Ok(EerResult {
            eer: b.fpr,
            threshold: b.threshold,
        });
    }
    let a = points[cross - 1];
    let (da, db) = (a.fpr - a.fnr, b.fpr - b.fnr);
    let alpha = da / (da - db);
    let eer = a.fpr + alpha * (b.fpr - a.fpr);
    let upper = if b.threshold.is_finite() {
        b.threshold
    } else {
        a.threshold.next_up()
    };
    Ok(EerResult {
        eer,
        threshold: a.threshold + alpha * (upper - a.threshold),
    })
}

/// FPR and FNR at a fixed threshold.
pub fn rates_at(scores: &[f64], labels: &[Label], threshold: f64) -> Result<(f64, f64)> {
    let (genuine, spoofed) = check(scores, labels)?;
    let fp = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| **l == Label::Genuine && **s >= threshold)
        .count();
    let fn_ = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| **l == Label::Spoofed && **s < threshold)
        .count();
    Ok((fp as f64 / genuine as f64, fn_ as f64 / spoofed as f64))
}

/// Error percentage per attack at `threshold`; genuine trials are reported
/// under "None" (fraction declared spoofed), attacks by the fraction declared
/// genuine.
pub fn per_attack_error(scores: &[f64], labels: &[Label], attacks: &[&str], threshold: f64) -> BTreeMap<String, f64> {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((&s, &l), &a) in scores.iter().zip(labels).zip(attacks) {
        let name = if l == Label::Genuine { "None" } else { a };
        let wrong = match l {
            Label::Genuine => s >= threshold,
            Label::Spoofed => s < threshold,
        };
        let e = tally.entry(name.to_string()).or_default();
        e.0 += usize::from(wrong);
        e.1 += 1;
    }
    tally
        .into_iter()
        .map(|(k, (wrong, total))| (k, 100.0 * wrong as f64 / total as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Genuine as G, Spoofed as S};

    #[test]
    fn separable_is_zero() {
        let r = compute_eer(&[0.1, 0.1, 0.9, 0.9], &[G, G, S, S]).unwrap();
        assert_eq!(r.eer, 0.0);
        let (fpr, fnr) = rates_at(&[0.1, 0.1, 0.9, 0.9], &[G, G, S, S], r.threshold).unwrap();
        assert_eq!((fpr, fnr), (0.0, 0.0));
    }

    #[test]
    fn identical_scores_are_chance() {
        let r = compute_eer(&[0.3; 6], &[G, S, G, S, S, G]).unwrap();
        assert_eq!(r.eer, 0.5);
    }

    #[test]
    fn staircase_vertex() {
        // Operating points (1,0) (0.5,0) (0.5,0.5) (0,0.5) (0,1): the sweep
        // meets FPR = FNR at the vertex (0.5, 0.5).
        let r = compute_eer(&[0.1, 0.4, 0.3, 0.8], &[G, G, S, S]).unwrap();
        assert_eq!(r.eer, 0.5);
        assert_eq!(r.threshold, 0.4);
    }

    #[test]
    fn interpolated_crossing() {
        // Points (1,0) (2/3,0) (2/3,1/2) (1/3,1/2) (1/3,1) (0,1): crossing between thresholds 0.3 and 0.5.
        let scores = [0.1, 0.3, 0.5, 0.2, 0.9];
        let labels = [G, G, G, S, S];
        let r = compute_eer(&scores, &labels).unwrap();
        // FPR-FNR goes from 2/3-1/2 = 1/6 to 1/3-1/2 = -1/6: midway, EER = 1/2.
        assert!((r.eer - 0.5).abs() < 1e-15);
        assert!((r.threshold - 0.4).abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        assert!(compute_eer(&[0.1, 0.2], &[G, G]).is_err());
        assert!(det_points(&[0.1], &[S]).is_err());
        assert!(compute_eer(&[0.1], &[G, S]).is_err());
    }

    #[test]
    fn det_shape() {
        let scores = [0.2, 0.4, 0.4, 0.7, 0.9];
        let labels = [G, S, G, S, G];
        let pts = det_points(&scores, &labels).unwrap();
        assert!(pts.len() <= 4 + 1);
        assert_eq!((pts[0].fpr, pts[0].fnr), (1.0, 0.0));
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.fnr), (0.0, 1.0));
        for w in pts.windows(2) {
            assert!(w[1].threshold > w[0].threshold);
            assert!(w[1].fpr <= w[0].fpr && w[1].fnr >= w[0].fnr);
        }
    }

    #[test]
    fn det_separable_and_chance() {
        let pts = det_points(&[0.1, 0.2, 0.8, 0.9], &[G, G, S, S]).unwrap();
        assert!(pts.iter().any(|p| p.fpr == 0.0 && p.fnr == 0.0));
        let pts = det_points(&[0.5; 4], &[G, S, G, S]).unwrap();
        let closest = pts
            .iter()
            .map(|p| (p.fpr - 0.5).abs() + (p.fnr - 0.5).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(closest <= 1.0);
    }

    #[test]
    fn per_attack_counts() {
        let scores = [0.1, 0.2, 0.9, 0.8, 0.1, 0.1, 0.1, 0.9];
        let labels = [G, G, S, S, S, S, S, S];
        let attacks = ["-", "-", "A01", "A01", "A02", "A02", "A02", "A02"];
        let e = per_attack_error(&scores, &labels, &attacks, 0.5);
        assert_eq!(e["None"], 0.0);
        assert_eq!(e["A01"], 0.0);
        assert_eq!(e["A02"], 75.0);
        let e = per_attack_error(&scores, &labels, &attacks, 0.95);
        assert_eq!(e["A01"], 100.0);
    }
}
