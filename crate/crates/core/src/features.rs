//! Difference features against the global models.
//!
//! For bank `b`, channel `i` and measure `l` the feature is
//! `d_l(p_input, p_spoofed) - d_l(p_input, p_genuine)`, where the model pair
//! comes from the file's gender bucket. Values are laid out bank by bank (in
//! config order), channel by channel (ascending) and measure by measure
//! (ascending measure index).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_io::{Gender, Label, UtteranceRecord, Waveform};
use crate::distances::{similarities, Measure, MeasureOptions};
use crate::error::{Error, Result};
use crate::filterbank::{BankKind, FilterBank};
use crate::models::{channel_histograms, SpeakerModelSet};
use crate::par;

/// Channels and measures taken from one filter bank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSelection {
    pub bank: BankKind,
    /// 1-based, strictly increasing.
    pub channels: Vec<usize>,
    /// Measure indices 1..=8, strictly increasing.
    pub measures: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub banks: Vec<BankSelection>,
    #[serde(default)]
    pub measure_options: MeasureOptions,
}

/// One coordinate of a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutEntry {
    pub bank: BankKind,
    pub channel: usize,
    pub measure: Measure,
}

impl FeatureConfig {
    /// All eight measures on every channel of both gammatone banks.
    pub fn full(n_channels: usize) -> Self {
        let all = |bank| BankSelection {
            bank,
            channels: (1..=n_channels).collect(),
            measures: (1..=8).collect(),
        };
        FeatureConfig {
            banks: vec![all(BankKind::Gammatone), all(BankKind::InverseGammatone)],
            measure_options: MeasureOptions::default(),
        }
    }

    /// Five low channels per bank; measures 1-5 for gammatone and 1, 2, 3, 5, 6
    /// for inverse gammatone.
    pub fn reduced_2019() -> Self {
        FeatureConfig {
            banks: vec![
                BankSelection {
                    bank: BankKind::Gammatone,
                    channels: (1..=5).collect(),
                    measures: vec![1, 2, 3, 4, 5],
                },
                BankSelection {
                    bank: BankKind::InverseGammatone,
                    channels: (1..=5).collect(),
                    measures: vec![1, 2, 3, 5, 6],
                },
            ],
            measure_options: MeasureOptions::default(),
        }
    }

    pub fn preset(name: &str, n_channels: usize) -> Result<Self> {
        match name {
            "full" => Ok(Self::full(n_channels)),
            "reduced-2019" => Ok(Self::reduced_2019()),
            _ => Err(Error::Config(format!("unknown feature preset `{name}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.banks.is_empty() {
            return Err(Error::Config("feature config selects no banks".into()));
        }
        let strictly_increasing = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        let mut seen = BTreeSet::new();
        for b in &self.banks {
            if !seen.insert(b.bank) {
                return Err(Error::Config(format!("bank {} selected twice", b.bank)));
            }
            if b.channels.is_empty() || !strictly_increasing(&b.channels) || b.channels[0] == 0 {
                return Err(Error::Config(format!(
                    "{}: channels must be non-empty, 1-based and strictly increasing",
                    b.bank
                )));
            }
            if b.measures.is_empty() || !strictly_increasing(&b.measures) {
                return Err(Error::Config(format!(
                    "{}: measures must be non-empty and strictly increasing",
                    b.bank
                )));
            }
            for &m in &b.measures {
                Measure::from_index(m).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.banks
            .iter()
            .map(|b| b.channels.len() * b.measures.len())
            .sum()
    }

    pub fn layout(&self) -> Vec<LayoutEntry> {
        let mut out = Vec::with_capacity(self.dim());
        for b in &self.banks {
            for &channel in &b.channels {
                for &m in &b.measures {
                    out.push(LayoutEntry {
                        bank: b.bank,
                        channel,
                        measure: Measure::from_index(m).expect("validated"),
                    });
                }
            }
        }
        out
    }
}

/// A labelled row of real values (features or embedding coordinates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub file_id: String,
    pub gender: Gender,
    pub label: Label,
    pub attack_id: Option<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn for_record(record: &UtteranceRecord, values: Vec<f64>) -> Self {
        FeatureVector {
            file_id: record.file_id.clone(),
            gender: record.gender,
            label: record.label,
            attack_id: record.attack_id.clone(),
            values,
        }
    }

    pub fn attack_name(&self) -> &str {
        self.attack_id.as_deref().unwrap_or("None")
    }
}

/// Designed banks plus models, ready to turn waveforms into feature vectors.
pub struct Extractor<'a> {
    models: &'a SpeakerModelSet,
    config: FeatureConfig,
    banks: Vec<FilterBank>,
    measures: Vec<Vec<Measure>>,
}

impl<'a> Extractor<'a> {
    pub fn new(models: &'a SpeakerModelSet, config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        let mut banks = Vec::new();
        let mut measures = Vec::new();
        for sel in &config.banks {
            let spec = models.bank_spec(sel.bank).ok_or_else(|| {
                Error::Config(format!("model set has no {} bank", sel.bank))
            })?;
            if let Some(&c) = sel.channels.iter().find(|&&c| c > spec.n_channels) {
                return Err(Error::Config(format!(
                    "{} has {} channels, channel {c} requested",
                    sel.bank, spec.n_channels
                )));
            }
            banks.push(spec.design()?);
            measures.push(
                sel.measures
                    .iter()
                    .map(|&m| Measure::from_index(m))
                    .collect::<Result<_>>()?,
            );
        }
        Ok(Extractor {
            models,
            config,
            banks,
            measures,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    /// Feature vector of one utterance.
    pub fn extract(&self, record: &UtteranceRecord, w: &Waveform) -> Result<FeatureVector> {
        let bucket = self.models.bucket_for(record.gender);
        let mut values = Vec::with_capacity(self.dim());
        for ((sel, bank), measures) in self.config.banks.iter().zip(&self.banks).zip(&self.measures) {
            let hists = channel_histograms(bank, w, &sel.channels, &self.models.binning)?;
            for (&channel, h) in sel.channels.iter().zip(hists) {
                let input = h.to_pmf()?;
                let spoofed = self.models.get(bucket, Label::Spoofed, sel.bank, channel)?;
                let genuine = self.models.get(bucket, Label::Genuine, sel.bank, channel)?;
                let opts = &self.config.measure_options;
                let to_spoofed = similarities(measures, &input, spoofed, opts)?;
                let to_genuine = similarities(measures, &input, genuine, opts)?;
                values.extend(to_spoofed.iter().zip(&to_genuine).map(|(s, g)| s - g));
            }
        }
        Ok(FeatureVector::for_record(record, values))
    }

    /// Extracts every record, keeping input order.
    ///
    /// In strict mode the first failure aborts the batch; in lenient mode
    /// failing files are logged and returned in `skipped`.
    pub fn extract_batch<L>(&self, records: &[UtteranceRecord], load: L, lenient: bool) -> Result<BatchOutput>
    where
        L: Fn(&UtteranceRecord) -> Result<Waveform> + Sync + Send,
    {
        let results = par::map(records, |r| load(r).and_then(|w| self.extract(r, &w)));
        let mut out = BatchOutput::default();
        for (r, res) in records.iter().zip(results) {
            match res {
                Ok(v) => out.rows.push(v),
                Err(e) if lenient => {
                    log::warn!("skipping {}: {e}", r.file_id);
                    out.skipped.push((r.file_id.clone(), e.to_string()));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Default)]
pub struct BatchOutput {
    pub rows: Vec<FeatureVector>,
    pub skipped: Vec<(String, String)>,
}

/// Z-scoring fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[FeatureVector]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Data("cannot standardize an empty set".into()))?;
        let d = first.values.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(&r.values) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(&r.values).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        // Constant columns are centred but left unscaled.
        let std = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, rows: &mut [FeatureVector]) {
        for r in rows {
            for ((v, m), s) in r.values.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Writes rows as `file_id,gender,label,attack,<prefix><i>...`.
///
/// `column` names value column `i` (0-based).
pub fn write_rows_csv(path: &Path, rows: &[FeatureVector], column: impl Fn(usize) -> String) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("file_id,gender,label,attack");
    for i in 0..dim {
        out.push(',');
        out.push_str(&column(i));
    }
    out.push('\n');
    for r in rows {
        if r.values.len() != dim {
            return Err(Error::Data(format!("{}: ragged row", r.file_id)));
        }
        if r.file_id.contains([',', '\n']) {
            return Err(Error::Data(format!("file id `{}` cannot be written to CSV", r.file_id)));
        }
        write!(out, "{},{},{},{}", r.file_id, r.gender, r.label, r.attack_name()).unwrap();
        for v in &r.values {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn feature_column(i: usize) -> String {
    format!("f_{i:03}")
}

pub fn write_features_csv(path: &Path, rows: &[FeatureVector]) -> Result<()> {
    write_rows_csv(path, rows, feature_column)
}

/// Reads a file written by [`write_rows_csv`].
pub fn read_rows_csv(path: &Path) -> Result<Vec<FeatureVector>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, reason: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
    let columns = header.split(',').count();
    if columns < 4 || !header.starts_with("file_id,gender,label,attack") {
        return Err(bad(1, "unexpected header".into()));
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns {
            return Err(bad(n + 1, format!("expected {columns} fields, found {}", fields.len())));
        }
        let label: Label = fields[2].parse().map_err(|e: Error| bad(n + 1, e.to_string()))?;
        let values = fields[4..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| bad(n + 1, format!("`{f}`: {e}"))))
            .collect::<Result<_>>()?;
        rows.push(FeatureVector {
            file_id: fields[0].to_string(),
            gender: fields[1].parse().map_err(|e: Error| bad(n + 1, e.to_string()))?,
            label,
            attack_id: (fields[3] != "None").then(|| fields[3].to_string()),
            values,
        });
    }
    Ok(rows)
}
