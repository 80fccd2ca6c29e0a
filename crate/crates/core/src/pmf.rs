//! Amplitude probability mass functions on a fixed bin grid over [-1, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bin count dictated by 16-bit audio.
pub const RAW_BINS: usize = 1 << 16;

/// Default bin count after merging, used for the similarity measures.
pub const DISTANCE_BINS: usize = 1 << 12;

/// Bin holding `x` on a grid of `bin_count` uniform bins over [-1, 1].
///
/// Values outside the support are clipped to the boundary bins and `x = 1`
/// falls in the last bin.
#[inline]
pub fn bin_index(x: f64, bin_count: usize) -> usize {
    if x <= -1.0 {
        0
    } else if x >= 1.0 {
        bin_count - 1
    } else {
        // (x + 1) / (2 / B), written so that power-of-two B keeps it exact.
        (((x + 1.0) * (bin_count as f64 / 2.0)).floor() as usize).min(bin_count - 1)
    }
}

fn check_bin_count(bin_count: usize) -> Result<()> {
    if bin_count < 2 || !bin_count.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "bin count {bin_count} is not a power of two >= 2"
        )));
    }
    Ok(())
}

/// Raw bin counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    counts: Vec<u64>,
}

impl Histogram {
    pub fn zeros(bin_count: usize) -> Result<Self> {
        check_bin_count(bin_count)?;
        Ok(Histogram {
            counts: vec![0; bin_count],
        })
    }

    pub fn from_samples(samples: &[f64], bin_count: usize) -> Result<Self> {
        let mut h = Histogram::zeros(bin_count)?;
        h.add_samples(samples)?;
        Ok(h)
    }

    pub fn add_samples(&mut self, samples: &[f64]) -> Result<()> {
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("NaN sample in PMF input".into()));
        }
        let b = self.counts.len();
        for &x in samples {
            self.counts[bin_index(x, b)] += 1;
        }
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin-wise sum with another histogram on the same grid.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if other.bin_count() != self.bin_count() {
            return Err(Error::InvalidArgument(format!(
                "cannot merge histograms with {} and {} bins",
                self.bin_count(),
                other.bin_count()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Merges adjacent bins down to `target` bins (a power of two dividing the current count).
    pub fn rebin(&self, target: usize) -> Result<Histogram> {
        check_bin_count(target)?;
        if target > self.bin_count() {
            return Err(Error::InvalidArgument(format!(
                "cannot rebin {} bins up to {target}",
                self.bin_count()
            )));
        }
        let group = self.bin_count() / target;
        Ok(Histogram {
            counts: self.counts.chunks(group).map(|c| c.iter().sum()).collect(),
        })
    }

    pub fn to_pmf(&self) -> Result<PmfHistogram> {
        let total = self.total();
        if total == 0 {
            return Err(Error::InvalidArgument("PMF of an empty sample set".into()));
        }
        let denom = total as f64;
        Ok(PmfHistogram {
            probabilities: self.counts.iter().map(|&c| c as f64 / denom).collect(),
            total_samples: total,
        })
    }
}

/// Normalized histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfHistogram {
    probabilities: Vec<f64>,
    total_samples: u64,
}

impl PmfHistogram {
    /// Wraps explicit probabilities; they must be non-negative and sum to 1.
    pub fn from_probabilities(probabilities: Vec<f64>) -> Result<Self> {
        Self::with_total(probabilities, 0)
    }

    pub(crate) fn with_total(probabilities: Vec<f64>, total_samples: u64) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidArgument("PMF needs at least one bin".into()));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("PMF entries must be finite and >= 0".into()));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("PMF sums to {sum}, not 1")));
        }
        Ok(PmfHistogram {
            probabilities,
            total_samples,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn bin_count(&self) -> usize {
        self.probabilities.len()
    }

    /// Number of samples behind the estimate (0 when built from explicit probabilities).
    pub fn total_samples(&self) -> u64 {
        self.total_samples
    }
}

/// PMF of `samples` on `bin_count` bins.
pub fn estimate_pmf(samples: &[f64], bin_count: usize) -> Result<PmfHistogram> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot estimate PMF of empty input".into()));
    }
    Histogram::from_samples(samples, bin_count)?.to_pmf()
}

/// Pools raw-count histograms; equal to the PMF of the concatenated samples.
pub fn accumulate(histograms: &[Histogram]) -> Result<PmfHistogram> {
    let (first, rest) = histograms
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("nothing to accumulate".into()))?;
    let mut pooled = first.clone();
    for h in rest {
        pooled.merge(h)?;
    }
    pooled.to_pmf()
}
