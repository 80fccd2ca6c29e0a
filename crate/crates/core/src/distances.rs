//! The eight PMF similarity measures, numbered 1 to 8 in their canonical order.
//!
//! Measures 2 (normalized cross correlation) and 4 (histogram intersection)
//! grow with similarity; the others are distances or divergences. Natural
//! logarithms throughout. KL-based measures smooth both PMFs with
//! `(x + eps) / (1 + B * eps)` so empty bins never produce infinities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pmf::PmfHistogram;

/// Additive smoothing applied by the KL-based measures.
pub const DEFAULT_SMOOTHING: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    QuadraticChi,
    NormalizedCrossCorrelation,
    Hellinger,
    HistogramIntersection,
    JensenShannon,
    SymmetricKl,
    KlDivergence,
    ModifiedKs,
}

impl Measure {
    pub const ALL: [Measure; 8] = [
        Measure::QuadraticChi,
        Measure::NormalizedCrossCorrelation,
        Measure::Hellinger,
        Measure::HistogramIntersection,
        Measure::JensenShannon,
        Measure::SymmetricKl,
        Measure::KlDivergence,
        Measure::ModifiedKs,
    ];

    /// 1-based position in the canonical listing.
    pub fn index(self) -> usize {
        Measure::ALL.iter().position(|&m| m == self).unwrap() + 1
    }

    pub fn from_index(index: usize) -> Result<Self> {
        index
            .checked_sub(1)
            .and_then(|i| Measure::ALL.get(i).copied())
            .ok_or_else(|| Error::InvalidArgument(format!("measure index {index} not in 1..=8")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::QuadraticChi => "quadratic_chi",
            Measure::NormalizedCrossCorrelation => "normalized_cross_correlation",
            Measure::Hellinger => "hellinger",
            Measure::HistogramIntersection => "histogram_intersection",
            Measure::JensenShannon => "jensen_shannon",
            Measure::SymmetricKl => "symmetric_kl",
            Measure::KlDivergence => "kl_divergence",
            Measure::ModifiedKs => "modified_ks",
        }
    }

    /// True for measures that increase as the PMFs become more alike.
    pub fn is_similarity(self) -> bool {
        matches!(
            self,
            Measure::NormalizedCrossCorrelation | Measure::HistogramIntersection
        )
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown measure `{s}`")))
    }
}

/// Statistic used for measure 8.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsVariant {
    /// `max |F_p - F_q|`.
    #[default]
    Plain,
    /// Kuiper's `max(F_p - F_q) + max(F_q - F_p)`.
    Kuiper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureOptions {
    pub smoothing: f64,
    pub ks_variant: KsVariant,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions {
            smoothing: DEFAULT_SMOOTHING,
            ks_variant: KsVariant::Plain,
        }
    }
}

/// Running prefix sum of `p`.
pub fn cdf(p: &PmfHistogram) -> Vec<f64> {
    cumulative(p.probabilities())
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Measure `m` between `p` and `q` with default options.
pub fn similarity(m: Measure, p: &PmfHistogram, q: &PmfHistogram) -> Result<f64> {
    similarity_with(m, p, q, &MeasureOptions::default())
}

pub fn similarity_with(
    m: Measure,
    p: &PmfHistogram,
    q: &PmfHistogram,
    opts: &MeasureOptions,
) -> Result<f64> {
    if p.bin_count() != q.bin_count() {
        return Err(Error::InvalidArgument(format!(
            "bin count mismatch: {} vs {}",
            p.bin_count(),
            q.bin_count()
        )));
    }
    let (p, q) = (p.probabilities(), q.probabilities());
    Ok(match m {
        Measure::QuadraticChi => quadratic_chi(p, q),
        Measure::NormalizedCrossCorrelation => normalized_cross_correlation(p, q),
        Measure::Hellinger => hellinger(p, q),
        Measure::HistogramIntersection => p.iter().zip(q).map(|(a, b)| a.min(*b)).sum(),
        Measure::JensenShannon => jensen_shannon(p, q),
        Measure::SymmetricKl => {
            let (ps, qs) = (smooth(p, opts.smoothing), smooth(q, opts.smoothing));
            kl(&ps, &qs) + kl(&qs, &ps)
        }
        Measure::KlDivergence => kl(&smooth(p, opts.smoothing), &smooth(q, opts.smoothing)),
        Measure::ModifiedKs => ks(p, q, opts.ks_variant),
    })
}

/// Evaluates several measures on the same pair; output follows `measures`.
pub fn similarities(
    measures: &[Measure],
    p: &PmfHistogram,
    q: &PmfHistogram,
    opts: &MeasureOptions,
) -> Result<Vec<f64>> {
    measures
        .iter()
        .map(|&m| similarity_with(m, p, q, opts))
        .collect()
}

fn quadratic_chi(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .filter(|(a, b)| *a + *b > 0.0)
        .map(|(a, b)| (a - b) * (a - b) / (a + b))
        .sum::<f64>()
}

fn normalized_cross_correlation(p: &[f64], q: &[f64]) -> f64 {
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let np: f64 = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nq: f64 = q.iter().map(|b| b * b).sum::<f64>().sqrt();
    (dot / (np * nq)).min(1.0)
}

// sqrt(1 - BC) rewritten as sqrt(0.5 * sum (sqrt p - sqrt q)^2), which is
// exactly zero for identical inputs.
fn hellinger(p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    (0.5 * s).sqrt().min(1.0)
}

fn smooth(p: &[f64], eps: f64) -> Vec<f64> {
    let denom = 1.0 + p.len() as f64 * eps;
    p.iter().map(|x| (x + eps) / denom).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let half = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    let js: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            0.5 * (half(a, m) + half(b, m))
        })
        .sum();
    js.clamp(0.0, std::f64::consts::LN_2)
}

fn ks(p: &[f64], q: &[f64], variant: KsVariant) -> f64 {
    let (fp, fq) = (cumulative(p), cumulative(q));
    let (mut up, mut down) = (0.0f64, 0.0f64);
    for (a, b) in fp.iter().zip(&fq) {
        up = up.max(a - b);
        down = down.max(b - a);
    }
    match variant {
        KsVariant::Plain => up.max(down).min(1.0),
        KsVariant::Kuiper => (up + down).min(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn pmf(v: &[f64]) -> PmfHistogram {
        PmfHistogram::from_probabilities(v.to_vec()).unwrap()
    }

    fn all(p: &PmfHistogram, q: &PmfHistogram) -> Vec<f64> {
        similarities(&Measure::ALL, p, q, &MeasureOptions::default()).unwrap()
    }

    #[test]
    fn ordering_and_names() {
        assert_eq!(Measure::QuadraticChi.index(), 1);
        assert_eq!(Measure::ModifiedKs.index(), 8);
        for (i, m) in Measure::ALL.iter().enumerate() {
            assert_eq!(Measure::from_index(i + 1).unwrap(), *m);
            assert_eq!(m.name().parse::<Measure>().unwrap(), *m);
        }
        assert!(Measure::from_index(0).is_err());
        assert!(Measure::from_index(9).is_err());
    }

    #[test]
    fn self_similarity() {
        let p = pmf(&[0.1, 0.0, 0.6, 0.3]);
        let d = all(&p, &p);
        for m in Measure::ALL {
            let v = d[m.index() - 1];
            let expected = if m.is_similarity() { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12, "{m}: {v}");
        }
    }

    #[test]
    fn disjoint_supports() {
        let (p, q) = (pmf(&[1.0, 0.0]), pmf(&[0.0, 1.0]));
        let d = all(&p, &q);
        assert_eq!(d[Measure::Hellinger.index() - 1], 1.0);
        assert_eq!(d[Measure::HistogramIntersection.index() - 1], 0.0);
        assert_relative_eq!(d[Measure::JensenShannon.index() - 1], LN_2, epsilon = 1e-15);
        assert_eq!(d[Measure::ModifiedKs.index() - 1], 1.0);
        assert_eq!(d[Measure::NormalizedCrossCorrelation.index() - 1], 0.0);
        assert_eq!(d[Measure::QuadraticChi.index() - 1], 1.0);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn hand_computed_kl() {
        let (p, q) = (pmf(&[0.5, 0.5]), pmf(&[0.25, 0.75]));
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let kl = similarity(Measure::KlDivergence, &p, &q).unwrap();
        assert!((kl - expected).abs() < 1e-9);
        assert!((kl - 0.14384).abs() < 1e-5);
        assert_eq!(similarity(Measure::HistogramIntersection, &p, &q).unwrap(), 0.75);
    }

    #[test]
    fn kl_is_asymmetric() {
        let (p, q) = (pmf(&[0.5, 0.5]), pmf(&[0.25, 0.75]));
        let a = similarity(Measure::KlDivergence, &p, &q).unwrap();
        let b = similarity(Measure::KlDivergence, &q, &p).unwrap();
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(cdf(&pmf(&[1.0, 0.0])), vec![1.0, 1.0]);
        assert_eq!(cdf(&pmf(&[0.25, 0.25, 0.5])), vec![0.25, 0.5, 1.0]);
        let u = pmf(&[0.125; 8]);
        for (i, c) in cdf(&u).iter().enumerate() {
            assert_eq!(*c, (i + 1) as f64 / 8.0);
        }
    }

    #[test]
    fn kuiper_variant() {
        let opts = MeasureOptions {
            ks_variant: KsVariant::Kuiper,
            ..Default::default()
        };
        let (p, q) = (pmf(&[0.5, 0.0, 0.5]), pmf(&[0.0, 1.0, 0.0]));
        let plain = similarity(Measure::ModifiedKs, &p, &q).unwrap();
        let kuiper = similarity_with(Measure::ModifiedKs, &p, &q, &opts).unwrap();
        assert_eq!(plain, 0.5);
        assert_eq!(kuiper, 1.0);
    }

    #[test]
    fn mismatch_rejected() {
        assert!(similarity(Measure::Hellinger, &pmf(&[1.0]), &pmf(&[0.5, 0.5])).is_err());
    }

    fn arb_pmf(len: usize) -> impl Strategy<Value = PmfHistogram> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], len).prop_filter_map(
            "all zero",
            |w| {
                let s: f64 = w.iter().sum();
                (s > 0.0).then(|| pmf(&w.iter().map(|x| x / s).collect::<Vec<_>>()))
            },
        )
    }

    fn arb_positive_pmf(len: usize) -> impl Strategy<Value = PmfHistogram> {
        prop::collection::vec(0.01f64..1.0, len).prop_map(|w| {
            let s: f64 = w.iter().sum();
            pmf(&w.iter().map(|x| x / s).collect::<Vec<_>>())
        })
    }

    proptest! {
        #[test]
        fn symmetry_and_bounds((p, q) in (arb_pmf(16), arb_pmf(16))) {
            let pq = all(&p, &q);
            let qp = all(&q, &p);
            for m in Measure::ALL {
                let i = m.index() - 1;
                prop_assert!(pq[i].is_finite());
                if m != Measure::KlDivergence {
                    prop_assert!((pq[i] - qp[i]).abs() < 1e-12, "{} not symmetric", m);
                }
                prop_assert!(pq[i] >= 0.0);
            }
            prop_assert!(pq[Measure::HistogramIntersection.index() - 1] <= 1.0);
            prop_assert!(pq[Measure::Hellinger.index() - 1] <= 1.0);
            prop_assert!(pq[Measure::JensenShannon.index() - 1] <= LN_2);
            prop_assert!(pq[Measure::NormalizedCrossCorrelation.index() - 1] <= 1.0);
            prop_assert!(pq[Measure::ModifiedKs.index() - 1] <= 1.0);
        }

        #[test]
        fn identity_of_indiscernibles((p, q) in (arb_pmf(12), arb_pmf(12))) {
            let same = all(&p, &p);
            let diff = all(&p, &q);
            let distinct = p.probabilities().iter().zip(q.probabilities())
                .any(|(a, b)| (a - b).abs() > 1e-6);
            for m in Measure::ALL.into_iter().filter(|m| !m.is_similarity()) {
                let i = m.index() - 1;
                prop_assert!(same[i].abs() < 1e-9);
                if distinct {
                    prop_assert!(diff[i] > 0.0, "{} vanished", m);
                }
            }
        }

        #[test]
        fn smoothing_is_immaterial_on_positive_pmfs((p, q) in (arb_positive_pmf(32), arb_positive_pmf(32))) {
            let half = MeasureOptions { smoothing: DEFAULT_SMOOTHING / 2.0, ..Default::default() };
            for m in [Measure::KlDivergence, Measure::SymmetricKl] {
                let a = similarity(m, &p, &q).unwrap();
                let b = similarity_with(m, &p, &q, &half).unwrap();
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
