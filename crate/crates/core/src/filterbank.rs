//! Time-domain filter banks: gammatone, inverse gammatone and mel.
//!
//! Gammatone channels use the all-pole-plus-zeros realization from Slaney's
//! auditory toolbox: four cascaded second-order sections per channel with
//! bandwidth `1.019 * ERB(fc)`, normalized to unit gain at the centre
//! frequency. The inverse bank is obtained by spectral inversion, i.e. the
//! input is modulated by `(-1)^n`, filtered by the gammatone bank and the
//! output modulated again, which mirrors every passband around `fs / 4`
//! (`f -> fs/2 - f`). Mel channels are 511-tap linear-phase FIR filters
//! obtained by frequency sampling of triangular weights.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;
use crate::error::{Error, Result};
use crate::par;

/// Number of taps of each mel FIR channel.
pub const MEL_FIR_TAPS: usize = 511;

/// Glasberg-Moore ERB-rate, in ERB numbers.
pub fn erb_rate(f_hz: f64) -> f64 {
    21.4 * (4.37 * f_hz / 1000.0 + 1.0).log10()
}

/// Inverse of [`erb_rate`].
pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) * 1000.0 / 4.37
}

/// Equivalent rectangular bandwidth at `f_hz`.
pub fn erb(f_hz: f64) -> f64 {
    24.7 * (4.37 * f_hz / 1000.0 + 1.0)
}

pub fn hz_to_mel(f_hz: f64) -> f64 {
    2595.0 * (1.0 + f_hz / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankKind {
    Gammatone,
    InverseGammatone,
    Mel,
}

impl BankKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BankKind::Gammatone => "gammatone",
            BankKind::InverseGammatone => "inverse_gammatone",
            BankKind::Mel => "mel",
        }
    }
}

impl fmt::Display for BankKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BankKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gammatone" => Ok(BankKind::Gammatone),
            "inverse_gammatone" => Ok(BankKind::InverseGammatone),
            "mel" => Ok(BankKind::Mel),
            _ => Err(Error::InvalidArgument(format!("unknown filter bank `{s}`"))),
        }
    }
}

/// Parameters that fully determine a filter bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankSpec {
    pub kind: BankKind,
    pub n_channels: usize,
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub sample_rate_hz: u32,
}

impl BankSpec {
    pub fn design(&self) -> Result<FilterBank> {
        match self.kind {
            BankKind::Gammatone => {
                design_gammatone(self.n_channels, self.f_low_hz, self.f_high_hz, self.sample_rate_hz)
            }
            BankKind::InverseGammatone => design_inverse_gammatone(
                self.n_channels,
                self.f_low_hz,
                self.f_high_hz,
                self.sample_rate_hz,
            ),
            BankKind::Mel => {
                design_mel(self.n_channels, self.f_low_hz, self.f_high_hz, self.sample_rate_hz)
            }
        }
    }
}

/// Second-order section `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Filters `x` in place (transposed direct form II, zero initial state).
    pub fn run(&self, x: &mut [f64]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + s1;
            s1 = b1 * input - a1 * y + s2;
            s2 = b2 * input - a2 * y;
            *v = y;
        }
    }

    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        num / den
    }

    /// Largest pole radius.
    pub fn pole_radius(&self) -> f64 {
        let [a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        let p1 = (-a1 + disc) / 2.0;
        let p2 = (-a1 - disc) / 2.0;
        p1.norm().max(p2.norm())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Realization {
    /// Cascade of recursive sections.
    Recursive(Vec<Biquad>),
    /// Causal FIR taps.
    Fir(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFilter {
    /// 1-based channel number.
    pub index: usize,
    /// Effective centre frequency of the passband.
    pub center_freq_hz: f64,
    pub realization: Realization,
    /// Input and output are modulated by `(-1)^n` around the realization.
    pub spectrally_inverted: bool,
}

impl ChannelFilter {
    /// Filters `samples`; output has the same length as the input.
    pub fn filter(&self, samples: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = samples.to_vec();
        if self.spectrally_inverted {
            alternate_sign(&mut y);
        }
        match &self.realization {
            Realization::Recursive(sections) => {
                for s in sections {
                    s.run(&mut y);
                }
            }
            Realization::Fir(taps) => y = fir(taps, &y),
        }
        if self.spectrally_inverted {
            alternate_sign(&mut y);
        }
        y
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: u32) -> Complex64 {
        let mut omega = 2.0 * PI * freq_hz / f64::from(sample_rate_hz);
        if self.spectrally_inverted {
            omega -= PI;
        }
        match &self.realization {
            Realization::Recursive(sections) => sections
                .iter()
                .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(omega)),
            Realization::Fir(taps) => taps
                .iter()
                .enumerate()
                .map(|(n, &h)| Complex64::from_polar(h, -omega * n as f64))
                .sum(),
        }
    }

    pub fn is_stable(&self) -> bool {
        match &self.realization {
            Realization::Recursive(sections) => sections.iter().all(|s| s.pole_radius() < 1.0),
            Realization::Fir(_) => true,
        }
    }

    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut x = vec![0.0; len];
        if len > 0 {
            x[0] = 1.0;
        }
        self.filter(&x)
    }
}

fn alternate_sign(x: &mut [f64]) {
    for v in x.iter_mut().skip(1).step_by(2) {
        *v = -*v;
    }
}

fn fir(taps: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let k_max = n.min(taps.len() - 1);
            (0..=k_max).map(|k| taps[k] * x[n - k]).sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub spec: BankSpec,
    /// Ordered by channel index, channel 1 first.
    pub channels: Vec<ChannelFilter>,
}

/// One filtered signal per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWaveform {
    pub channels: Vec<Vec<f64>>,
    pub file_id: String,
}

impl FilterBank {
    pub fn kind(&self) -> BankKind {
        self.spec.kind
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn center_frequencies(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.center_freq_hz).collect()
    }

    /// Filters `w` through every channel.
    pub fn apply(&self, w: &Waveform) -> Result<MultichannelWaveform> {
        let channels = (1..=self.len()).collect::<Vec<_>>();
        self.apply_channels(w, &channels)
    }

    /// Filters `w` through the listed 1-based channels only, in the order given.
    pub fn apply_channels(&self, w: &Waveform, channels: &[usize]) -> Result<MultichannelWaveform> {
        if w.sample_rate_hz != self.spec.sample_rate_hz {
            return Err(Error::InvalidArgument(format!(
                "{}: sample rate {} Hz does not match {} bank designed for {} Hz",
                w.file_id, w.sample_rate_hz, self.spec.kind, self.spec.sample_rate_hz
            )));
        }
        let filters = channels
            .iter()
            .map(|&c| {
                self.channels.get(c.wrapping_sub(1)).ok_or_else(|| {
                    Error::InvalidArgument(format!("channel {c} not in {} bank", self.spec.kind))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultichannelWaveform {
            channels: filters.iter().map(|f| f.filter(&w.samples)).collect(),
            file_id: w.file_id.clone(),
        })
    }

    /// Filters a batch of waveforms, one output per input, in input order.
    pub fn apply_batch(&self, waves: &[Waveform]) -> Result<Vec<MultichannelWaveform>> {
        par::map(waves, |w| self.apply(w)).into_iter().collect()
    }
}

fn check_band(n_channels: usize, f_low: f64, f_high: f64, fs: u32) -> Result<()> {
    let nyquist = f64::from(fs) / 2.0;
    if n_channels == 0 {
        return Err(Error::InvalidArgument("filter bank needs at least one channel".into()));
    }
    if fs == 0 || !f_low.is_finite() || !f_high.is_finite() {
        return Err(Error::InvalidArgument("band edges and rate must be finite".into()));
    }
    if !(0.0 <= f_low && f_low < f_high && f_high <= nyquist) {
        return Err(Error::InvalidArgument(format!(
            "invalid band [{f_low}, {f_high}] Hz for sample rate {fs} Hz"
        )));
    }
    Ok(())
}

/// Centre frequencies equally spaced in ERB-rate, half a step in from each band edge.
pub fn erb_space(n_channels: usize, f_low: f64, f_high: f64) -> Vec<f64> {
    let lo = erb_rate(f_low);
    let step = (erb_rate(f_high) - lo) / n_channels as f64;
    (0..n_channels)
        .map(|i| erb_rate_to_hz(lo + (i as f64 + 0.5) * step))
        .collect()
}

fn gammatone_sections(fc: f64, fs: f64) -> Vec<Biquad> {
    let t = 1.0 / fs;
    let b = 1.019 * 2.0 * PI * erb(fc);
    let arg = 2.0 * PI * fc * t;
    let decay = (-b * t).exp();
    let (cos, sin) = (arg.cos(), arg.sin());
    let a1 = [-2.0 * cos * decay, (-2.0 * b * t).exp()];
    let r_plus = (3.0 + 2f64.powf(1.5)).sqrt();
    let r_minus = (3.0 - 2f64.powf(1.5)).sqrt();
    let zero = |r: f64| -(2.0 * t * cos * decay + 2.0 * r * t * sin * decay) / 2.0;
    let mut sections: Vec<Biquad> = [r_plus, -r_plus, r_minus, -r_minus]
        .iter()
        .map(|&r| Biquad {
            b: [t, zero(r), 0.0],
            a: a1,
        })
        .collect();
    let gain = sections
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(arg))
        .norm();
    for c in sections[0].b.iter_mut() {
        *c /= gain;
    }
    sections
}

/// Gammatone bank with ERB-spaced channels between `f_low_hz` and `f_high_hz`.
pub fn design_gammatone(
    n_channels: usize,
    f_low_hz: f64,
    f_high_hz: f64,
    sample_rate_hz: u32,
) -> Result<FilterBank> {
    check_band(n_channels, f_low_hz, f_high_hz, sample_rate_hz)?;
    let fs = f64::from(sample_rate_hz);
    let channels = erb_space(n_channels, f_low_hz, f_high_hz)
        .into_iter()
        .enumerate()
        .map(|(i, fc)| ChannelFilter {
            index: i + 1,
            center_freq_hz: fc,
            realization: Realization::Recursive(gammatone_sections(fc, fs)),
            spectrally_inverted: false,
        })
        .collect();
    Ok(FilterBank {
        spec: BankSpec {
            kind: BankKind::Gammatone,
            n_channels,
            f_low_hz,
            f_high_hz,
            sample_rate_hz,
        },
        channels,
    })
}

/// Gammatone bank mirrored along the frequency axis by spectral inversion.
///
/// Channel `i` is the mirror of gammatone channel `i`, so channel 1 has the
/// highest effective centre frequency.
pub fn design_inverse_gammatone(
    n_channels: usize,
    f_low_hz: f64,
    f_high_hz: f64,
    sample_rate_hz: u32,
) -> Result<FilterBank> {
    let mut bank = design_gammatone(n_channels, f_low_hz, f_high_hz, sample_rate_hz)?;
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    for ch in &mut bank.channels {
        ch.center_freq_hz = nyquist - ch.center_freq_hz;
        ch.spectrally_inverted = true;
    }
    bank.spec.kind = BankKind::InverseGammatone;
    Ok(bank)
}

/// Triangular weight with corners at `lo`, `mid`, `hi` (Hz).
fn triangle(f: f64, lo: f64, mid: f64, hi: f64) -> f64 {
    if f <= lo || f >= hi {
        0.0
    } else if f <= mid {
        (f - lo) / (mid - lo)
    } else {
        (hi - f) / (hi - mid)
    }
}

/// Mel bank of linear-phase FIR filters approximating triangular weights.
pub fn design_mel(
    n_channels: usize,
    f_low_hz: f64,
    f_high_hz: f64,
    sample_rate_hz: u32,
) -> Result<FilterBank> {
    check_band(n_channels, f_low_hz, f_high_hz, sample_rate_hz)?;
    let fs = f64::from(sample_rate_hz);
    let (m_lo, m_hi) = (hz_to_mel(f_low_hz), hz_to_mel(f_high_hz));
    let step = (m_hi - m_lo) / (n_channels + 1) as f64;
    let edges: Vec<f64> = (0..n_channels + 2)
        .map(|i| mel_to_hz(m_lo + i as f64 * step))
        .collect();
    let n = MEL_FIR_TAPS;
    let half = (n - 1) / 2;
    let channels = (0..n_channels)
        .map(|i| {
            let (lo, mid, hi) = (edges[i], edges[i + 1], edges[i + 2]);
            let weights: Vec<f64> = (0..=half)
                .map(|k| triangle(k as f64 * fs / n as f64, lo, mid, hi))
                .collect();
            let taps = (0..n)
                .map(|t| {
                    let shift = t as f64 - half as f64;
                    let sum: f64 = weights
                        .iter()
                        .enumerate()
                        .skip(1)
                        .map(|(k, &w)| 2.0 * w * (2.0 * PI * k as f64 * shift / n as f64).cos())
                        .sum();
                    (weights[0] + sum) / n as f64
                })
                .collect();
            ChannelFilter {
                index: i + 1,
                center_freq_hz: mid,
                realization: Realization::Fir(taps),
                spectrally_inverted: false,
            }
        })
        .collect();
    Ok(FilterBank {
        spec: BankSpec {
            kind: BankKind::Mel,
            n_channels,
            f_low_hz,
            f_high_hz,
            sample_rate_hz,
        },
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform {
            samples,
            sample_rate_hz: 16000,
            file_id: "t".into(),
        }
    }

    #[test]
    fn erb_rate_at_1khz() {
        assert_relative_eq!(erb_rate(1000.0), 21.4 * 5.37f64.log10(), epsilon = 1e-12);
        assert!((erb_rate(1000.0) - 15.62).abs() < 0.01);
        assert_relative_eq!(erb_rate_to_hz(erb_rate(1234.5)), 1234.5, epsilon = 1e-9);
    }

    #[test]
    fn mel_scale_values() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert_relative_eq!(mel_to_hz(hz_to_mel(3000.0)), 3000.0, epsilon = 1e-9);
    }

    #[test]
    fn single_narrow_channel() {
        let bank = design_gammatone(1, 100.0, 100.001, 16000).unwrap();
        assert_eq!(bank.len(), 1);
        assert!((bank.channels[0].center_freq_hz - 100.0).abs() < 1e-2);
    }

    #[test]
    fn default_bank_layout() {
        let bank = design_gammatone(10, 0.0, 8000.0, 16000).unwrap();
        let fc = bank.center_frequencies();
        assert_eq!(fc.len(), 10);
        assert!(fc.windows(2).all(|w| w[0] < w[1]));
        assert!(fc[0] > 0.0 && fc[9] <= 8000.0);
        assert!(bank.channels.iter().all(ChannelFilter::is_stable));
        assert_eq!(bank.channels[0].index, 1);
    }

    #[test]
    fn unit_gain_at_centre() {
        let bank = design_gammatone(10, 0.0, 8000.0, 16000).unwrap();
        for ch in &bank.channels {
            assert_relative_eq!(ch.response(ch.center_freq_hz, 16000).norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn inverse_mirrors_centres() {
        let gt = design_gammatone(10, 0.0, 8000.0, 16000).unwrap();
        let inv = design_inverse_gammatone(10, 0.0, 8000.0, 16000).unwrap();
        for (g, i) in gt.channels.iter().zip(&inv.channels) {
            assert_relative_eq!(i.center_freq_hz, 8000.0 - g.center_freq_hz, epsilon = 1e-9);
            assert!(i.is_stable());
            let f = 1234.0;
            assert_relative_eq!(
                i.response(8000.0 - f, 16000).norm(),
                g.response(f, 16000).norm(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn mirror_of_500hz_is_7500hz() {
        let gt = design_gammatone(1, 480.0, 520.0, 16000).unwrap();
        let inv = design_inverse_gammatone(1, 480.0, 520.0, 16000).unwrap();
        let fc = gt.channels[0].center_freq_hz;
        assert_relative_eq!(inv.channels[0].center_freq_hz, 8000.0 - fc);
        assert!((fc - 500.0).abs() < 1.0);
    }

    #[test]
    fn mel_centres_increase() {
        let bank = design_mel(10, 0.0, 8000.0, 16000).unwrap();
        let fc = bank.center_frequencies();
        assert!(fc.windows(2).all(|w| w[0] < w[1]));
        for ch in &bank.channels {
            let Realization::Fir(taps) = &ch.realization else {
                panic!("mel channel should be FIR")
            };
            assert_eq!(taps.len(), MEL_FIR_TAPS);
            // Linear phase: symmetric taps.
            for k in 0..taps.len() / 2 {
                assert_relative_eq!(taps[k], taps[taps.len() - 1 - k], epsilon = 1e-15);
            }
            // Peak of the triangle is close to unity.
            assert!((ch.response(ch.center_freq_hz, 16000).norm() - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn rejects_bad_bands() {
        assert!(design_gammatone(0, 0.0, 8000.0, 16000).is_err());
        assert!(design_gammatone(10, 500.0, 400.0, 16000).is_err());
        assert!(design_gammatone(10, 0.0, 9000.0, 16000).is_err());
        assert!(design_mel(10, -1.0, 8000.0, 16000).is_err());
        assert!(design_inverse_gammatone(10, f64::NAN, 8000.0, 16000).is_err());
    }

    #[test]
    fn zero_in_zero_out_and_length() {
        let bank = design_gammatone(4, 0.0, 8000.0, 16000).unwrap();
        let out = bank.apply(&wave(vec![0.0; 1000])).unwrap();
        assert_eq!(out.channels.len(), 4);
        for ch in &out.channels {
            assert_eq!(ch.len(), 1000);
            assert!(ch.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rate_mismatch() {
        let bank = design_gammatone(4, 0.0, 4000.0, 8000).unwrap();
        assert!(bank.apply(&wave(vec![0.0; 10])).is_err());
    }

    #[test]
    fn channel_subset_order() {
        let bank = design_gammatone(4, 0.0, 8000.0, 16000).unwrap();
        let w = wave((0..500).map(|i| ((i * 7919) % 101) as f64 / 200.0 - 0.25).collect());
        let all = bank.apply(&w).unwrap();
        let sub = bank.apply_channels(&w, &[3, 1]).unwrap();
        assert_eq!(sub.channels[0], all.channels[2]);
        assert_eq!(sub.channels[1], all.channels[0]);
        assert!(bank.apply_channels(&w, &[5]).is_err());
        assert!(bank.apply_channels(&w, &[0]).is_err());
    }
}
