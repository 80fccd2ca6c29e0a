//! Global genuine/spoofed PMF models per gender bucket, bank and channel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io::{Gender, Label, UtteranceRecord, Waveform};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::filterbank::{BankKind, BankSpec, FilterBank};
use crate::par;
use crate::pmf::{Histogram, PmfHistogram};

const KIND: &[u8; 4] = b"SPKM";

/// Population a model is pooled over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderBucket {
    Female,
    Male,
    /// Both genders pooled (gender split disabled).
    All,
}

impl GenderBucket {
    pub fn of(gender: Gender, gender_split: bool) -> Self {
        match (gender_split, gender) {
            (false, _) => GenderBucket::All,
            (true, Gender::Female) => GenderBucket::Female,
            (true, Gender::Male) => GenderBucket::Male,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenderBucket::Female => "female",
            GenderBucket::Male => "male",
            GenderBucket::All => "all",
        }
    }
}

impl fmt::Display for GenderBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelKey {
    pub bucket: GenderBucket,
    pub label: Label,
    pub bank: BankKind,
    /// 1-based channel number.
    pub channel: usize,
}

/// Binning used for both models and per-file PMFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binning {
    /// Grid the samples are counted on.
    pub raw_bins: usize,
    /// Grid after merging adjacent bins; the measures operate here.
    pub bin_count: usize,
}

impl Default for Binning {
    fn default() -> Self {
        Binning {
            raw_bins: crate::pmf::RAW_BINS,
            bin_count: crate::pmf::DISTANCE_BINS,
        }
    }
}

impl Binning {
    pub fn histogram(&self, samples: &[f64]) -> Result<Histogram> {
        let raw = Histogram::from_samples(samples, self.raw_bins)?;
        if self.bin_count == self.raw_bins {
            Ok(raw)
        } else {
            raw.rebin(self.bin_count)
        }
    }
}

/// Count histograms of the listed channels of `w` after filtering by `bank`.
pub fn channel_histograms(
    bank: &FilterBank,
    w: &Waveform,
    channels: &[usize],
    binning: &Binning,
) -> Result<Vec<Histogram>> {
    bank.apply_channels(w, channels)?
        .channels
        .iter()
        .map(|c| binning.histogram(c))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModelSet {
    pub banks: Vec<BankSpec>,
    pub binning: Binning,
    pub gender_split: bool,
    entries: BTreeMap<ModelKey, PmfHistogram>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    banks: Vec<BankSpec>,
    binning: Binning,
    gender_split: bool,
    keys: Vec<ModelKey>,
    totals: Vec<u64>,
}

impl SpeakerModelSet {
    pub fn get(&self, bucket: GenderBucket, label: Label, bank: BankKind, channel: usize) -> Result<&PmfHistogram> {
        let key = ModelKey {
            bucket,
            label,
            bank,
            channel,
        };
        self.entries.get(&key).ok_or_else(|| {
            Error::Data(format!(
                "no {label} model for bucket {bucket}, {bank} channel {channel}"
            ))
        })
    }

    pub fn bucket_for(&self, gender: Gender) -> GenderBucket {
        GenderBucket::of(gender, self.gender_split)
    }

    pub fn buckets(&self) -> BTreeSet<GenderBucket> {
        self.entries.keys().map(|k| k.bucket).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ModelKey, &PmfHistogram)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bank_spec(&self, kind: BankKind) -> Option<&BankSpec> {
        self.banks.iter().find(|b| b.kind == kind)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = Header {
            banks: self.banks.clone(),
            binning: self.binning,
            gender_split: self.gender_split,
            keys: self.entries.keys().copied().collect(),
            totals: self.entries.values().map(|p| p.total_samples()).collect(),
        };
        let arrays = self.entries.values().map(|p| p.probabilities().to_vec()).collect();
        Container::new(KIND, &header, arrays)?.save(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let corrupt = |reason: String| Error::CorruptModel {
            path: path.to_path_buf(),
            reason,
        };
        let c = Container::load(path, KIND)?;
        let h: Header = c.header().map_err(corrupt)?;
        if h.keys.len() != c.arrays.len() || h.totals.len() != c.arrays.len() {
            return Err(corrupt("entry count does not match payload".into()));
        }
        let mut entries = BTreeMap::new();
        for ((key, total), probs) in h.keys.into_iter().zip(h.totals).zip(c.arrays) {
            if probs.len() != h.binning.bin_count {
                return Err(corrupt(format!("entry {key:?} has {} bins", probs.len())));
            }
            let pmf = PmfHistogram::with_total(probs, total).map_err(|e| corrupt(e.to_string()))?;
            entries.insert(key, pmf);
        }
        Ok(SpeakerModelSet {
            banks: h.banks,
            binning: h.binning,
            gender_split: h.gender_split,
            entries,
        })
    }
}

type Accumulator = BTreeMap<ModelKey, Histogram>;

fn merge_into(mut acc: Accumulator, other: Accumulator) -> Result<Accumulator> {
    for (k, h) in other {
        match acc.get_mut(&k) {
            Some(existing) => existing.merge(&h)?,
            None => {
                acc.insert(k, h);
            }
        }
    }
    Ok(acc)
}

/// Pools the channel PMFs of every training file into per-class models.
///
/// `load` fetches the audio for a record. Counts are summed exactly, so the
/// result does not depend on record order or thread scheduling.
pub fn build_models<L>(
    records: &[UtteranceRecord],
    load: L,
    banks: &[FilterBank],
    binning: Binning,
    gender_split: bool,
) -> Result<SpeakerModelSet>
where
    L: Fn(&UtteranceRecord) -> Result<Waveform> + Sync + Send,
{
    if banks.is_empty() {
        return Err(Error::InvalidArgument("no filter banks configured".into()));
    }
    let mut present: BTreeMap<GenderBucket, BTreeSet<Label>> = BTreeMap::new();
    for r in records {
        present
            .entry(GenderBucket::of(r.gender, gender_split))
            .or_default()
            .insert(r.label);
    }
    if present.is_empty() {
        return Err(Error::Data("no training records".into()));
    }
    for (bucket, labels) in &present {
        for label in [Label::Genuine, Label::Spoofed] {
            if !labels.contains(&label) {
                return Err(Error::Data(format!(
                    "training bucket {bucket}/{label} is empty"
                )));
            }
        }
    }

    let per_file = |acc: Accumulator, r: &UtteranceRecord| -> Result<Accumulator> {
        let w = load(r)?;
        let bucket = GenderBucket::of(r.gender, gender_split);
        let mut local = Accumulator::new();
        for bank in banks {
            let channels: Vec<usize> = (1..=bank.len()).collect();
            let hists = channel_histograms(bank, &w, &channels, &binning)?;
            for (channel, h) in channels.into_iter().zip(hists) {
                local.insert(
                    ModelKey {
                        bucket,
                        label: r.label,
                        bank: bank.kind(),
                        channel,
                    },
                    h,
                );
            }
        }
        merge_into(acc, local)
    };
    let pooled = par::try_fold_reduce(records, Accumulator::new, per_file, merge_into)?;

    let entries = pooled
        .into_iter()
        .map(|(k, h)| Ok((k, h.to_pmf()?)))
        .collect::<Result<_>>()?;
    Ok(SpeakerModelSet {
        banks: banks.iter().map(|b| b.spec).collect(),
        binning,
        gender_split,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::Split;
    use crate::filterbank::design_gammatone;
    use crate::pmf::estimate_pmf;
    use std::collections::HashMap;

    fn record(id: &str, gender: Gender, label: Label) -> UtteranceRecord {
        UtteranceRecord {
            file_id: id.into(),
            speaker_id: "s".into(),
            gender,
            label,
            attack_id: (label == Label::Spoofed).then(|| "A01".into()),
            split: Split::Train,
        }
    }

    fn noise(seed: u64, n: usize, scale: f64) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * scale
            })
            .collect()
    }

    fn corpus() -> HashMap<String, Waveform> {
        [("g1", 1, 800, 0.5), ("g2", 2, 800, 0.3), ("s1", 3, 500, 0.9), ("s2", 4, 1200, 0.2)]
            .into_iter()
            .map(|(id, seed, n, scale)| {
                (id.to_string(), Waveform::new(noise(seed, n, scale), 16000, id).unwrap())
            })
            .collect()
    }

    fn small_binning() -> Binning {
        Binning {
            raw_bins: 1 << 10,
            bin_count: 1 << 6,
        }
    }

    #[test]
    fn single_genuine_file_is_its_own_model() {
        let audio = corpus();
        let bank = design_gammatone(3, 0.0, 8000.0, 16000).unwrap();
        let recs = vec![
            record("g1", Gender::Female, Label::Genuine),
            record("s1", Gender::Female, Label::Spoofed),
        ];
        let ms = build_models(&recs, |r| Ok(audio[&r.file_id].clone()), &[bank.clone()], small_binning(), false)
            .unwrap();
        assert_eq!(ms.len(), 2 * 3);
        let filtered = bank.apply(&audio["g1"]).unwrap();
        for ch in 1..=3 {
            let expected = small_binning().histogram(&filtered.channels[ch - 1]).unwrap().to_pmf().unwrap();
            assert_eq!(ms.get(GenderBucket::All, Label::Genuine, BankKind::Gammatone, ch).unwrap(), &expected);
        }
    }

    #[test]
    fn equal_length_files_average() {
        let audio = corpus();
        let bank = design_gammatone(2, 0.0, 8000.0, 16000).unwrap();
        let recs = vec![
            record("g1", Gender::Male, Label::Genuine),
            record("g2", Gender::Male, Label::Genuine),
            record("s1", Gender::Male, Label::Spoofed),
        ];
        let b = Binning { raw_bins: 64, bin_count: 64 };
        let ms = build_models(&recs, |r| Ok(audio[&r.file_id].clone()), &[bank.clone()], b, true).unwrap();
        let p1 = estimate_pmf(&bank.apply(&audio["g1"]).unwrap().channels[0], 64).unwrap();
        let p2 = estimate_pmf(&bank.apply(&audio["g2"]).unwrap().channels[0], 64).unwrap();
        let m = ms.get(GenderBucket::Male, Label::Genuine, BankKind::Gammatone, 1).unwrap();
        for i in 0..64 {
            let mean = (p1.probabilities()[i] + p2.probabilities()[i]) / 2.0;
            assert!((m.probabilities()[i] - mean).abs() < 1e-15);
        }
        assert!(ms.get(GenderBucket::Female, Label::Genuine, BankKind::Gammatone, 1).is_err());
    }

    #[test]
    fn order_independent_and_round_trips() {
        let audio = corpus();
        let bank = design_gammatone(2, 0.0, 8000.0, 16000).unwrap();
        let mut recs = vec![
            record("g1", Gender::Female, Label::Genuine),
            record("s2", Gender::Female, Label::Spoofed),
            record("g2", Gender::Female, Label::Genuine),
            record("s1", Gender::Female, Label::Spoofed),
        ];
        let load = |r: &UtteranceRecord| Ok(audio[&r.file_id].clone());
        let a = build_models(&recs, load, &[bank.clone()], small_binning(), true).unwrap();
        recs.reverse();
        let b = build_models(&recs, load, &[bank], small_binning(), true).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("models.bin");
        a.save(&path).unwrap();
        let back = SpeakerModelSet::load(&path).unwrap();
        assert_eq!(back, a);
        for ((_, x), (_, y)) in a.entries().zip(back.entries()) {
            let bits = |p: &PmfHistogram| p.probabilities().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
        }

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(SpeakerModelSet::load(&path), Err(Error::CorruptModel { .. })));
    }

    #[test]
    fn empty_bucket_is_named() {
        let audio = corpus();
        let bank = design_gammatone(2, 0.0, 8000.0, 16000).unwrap();
        let recs = vec![
            record("g1", Gender::Female, Label::Genuine),
            record("s1", Gender::Female, Label::Spoofed),
            record("g2", Gender::Male, Label::Genuine),
        ];
        let err = build_models(&recs, |r| Ok(audio[&r.file_id].clone()), &[bank], small_binning(), true)
            .unwrap_err();
        assert!(err.to_string().contains("male/spoofed"), "{err}");
    }
}
