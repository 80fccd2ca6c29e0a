//! WAV decoding, protocol manifests and gender maps.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only sample rate the pipeline accepts.
pub const EXPECTED_SAMPLE_RATE: u32 = 16_000;

/// Divisor mapping signed 16-bit integers onto [-1, 1).
pub const PCM16_SCALE: f64 = 32768.0;

const WAVE_FORMAT_PCM: u16 = 1;

/// Mono audio normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub file_id: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, file_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("waveform has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(x) = samples.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
            return Err(Error::InvalidArgument(format!(
                "sample {x} outside [-1, 1]"
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
            file_id: file_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            _ => Err(Error::InvalidArgument(format!("unknown gender `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Spoofed,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Spoofed => "spoofed",
        }
    }

    /// Classifier target: genuine = 0, spoofed = 1.
    pub fn target(self) -> f64 {
        match self {
            Label::Genuine => 0.0,
            Label::Spoofed => 1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genuine" | "bonafide" => Ok(Label::Genuine),
            "spoofed" | "spoof" => Ok(Label::Spoofed),
            _ => Err(Error::InvalidArgument(format!("unknown label `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One line of a protocol manifest, with gender attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub file_id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub label: Label,
    /// Present exactly when `label` is spoofed.
    pub attack_id: Option<String>,
    pub split: Split,
}

impl UtteranceRecord {
    /// Attack name used in reports; genuine trials are reported as "None".
    pub fn attack_name(&self) -> &str {
        self.attack_id.as_deref().unwrap_or("None")
    }
}

/// Decodes a PCM16 mono WAV file sampled at [`EXPECTED_SAMPLE_RATE`].
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (samples, rate) = decode_wav(&bytes).map_err(|reason| Error::Wav {
        path: path.to_path_buf(),
        reason,
    })?;
    if rate != EXPECTED_SAMPLE_RATE {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            reason: format!("sample rate {rate} Hz, expected {EXPECTED_SAMPLE_RATE} Hz"),
        });
    }
    Waveform::new(samples, rate, file_id).map_err(|e| Error::Wav {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Decodes WAV bytes into normalized samples and the sample rate.
///
/// Only uncompressed 16-bit mono PCM is accepted.
pub fn decode_wav(bytes: &[u8]) -> std::result::Result<(Vec<f64>, u32), String> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = LittleEndian::read_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + size > bytes.len() {
                    return Err("truncated fmt chunk".into());
                }
                let tag = LittleEndian::read_u16(&bytes[body..]);
                let channels = LittleEndian::read_u16(&bytes[body + 2..]);
                let rate = LittleEndian::read_u32(&bytes[body + 4..]);
                let bits = LittleEndian::read_u16(&bytes[body + 14..]);
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    format.ok_or_else(|| "data chunk precedes fmt chunk".to_string())?;
                if tag != WAVE_FORMAT_PCM {
                    return Err(format!("format tag {tag:#06x} is not integer PCM"));
                }
                if bits != 16 {
                    return Err(format!("{bits}-bit samples, only 16-bit PCM is supported"));
                }
                if channels != 1 {
                    return Err(format!("{channels} channels, only mono is supported"));
                }
                if body + size > bytes.len() {
                    return Err(format!(
                        "truncated data chunk: header declares {size} bytes, {} present",
                        bytes.len() - body
                    ));
                }
                if size % 2 != 0 {
                    return Err("data chunk length is not a whole number of samples".into());
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|b| f64::from(LittleEndian::read_i16(b)) / PCM16_SCALE)
                    .collect();
                return Ok((samples, rate));
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = body + size + (size & 1);
    }
    if format.is_none() {
        Err("missing fmt chunk".into())
    } else {
        Err("missing or truncated data chunk".into())
    }
}

/// Quantizes a normalized sample to PCM16 (round to nearest, saturating).
pub fn quantize_pcm16(x: f64) -> i16 {
    (x * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes PCM16 mono samples as a canonical 44-byte-header WAV file.
pub fn encode_wav(samples: &[i16], sample_rate_hz: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = vec![0u8; 44 + data_len];
    out[0..4].copy_from_slice(b"RIFF");
    LittleEndian::write_u32(&mut out[4..8], (36 + data_len) as u32);
    out[8..12].copy_from_slice(b"WAVE");
    out[12..16].copy_from_slice(b"fmt ");
    LittleEndian::write_u32(&mut out[16..20], 16);
    LittleEndian::write_u16(&mut out[20..22], WAVE_FORMAT_PCM);
    LittleEndian::write_u16(&mut out[22..24], 1);
    LittleEndian::write_u32(&mut out[24..28], sample_rate_hz);
    LittleEndian::write_u32(&mut out[28..32], sample_rate_hz * 2);
    LittleEndian::write_u16(&mut out[32..34], 2);
    LittleEndian::write_u16(&mut out[34..36], 16);
    out[36..40].copy_from_slice(b"data");
    LittleEndian::write_u32(&mut out[40..44], data_len as u32);
    LittleEndian::write_i16_into(samples, &mut out[44..]);
    out
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[i16], sample_rate_hz: u32) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(samples, sample_rate_hz)).map_err(|e| Error::io(path, e))
}

/// Reads a two-column `speaker_id F|M` file.
pub fn parse_gender_map(path: impl AsRef<Path>) -> Result<HashMap<String, Gender>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        };
        if fields.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", fields.len())));
        }
        let gender = fields[1].parse().map_err(|e: Error| bad(e.to_string()))?;
        map.insert(fields[0].to_string(), gender);
    }
    Ok(map)
}

/// Parses an ASVspoof-style protocol: `speaker_id file_id - attack|- bonafide|spoof`.
pub fn parse_manifest(
    path: impl AsRef<Path>,
    gender_map: &HashMap<String, Gender>,
    split: Split,
) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_str(&text, gender_map, split).map_err(|(line, reason)| Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

/// Parses manifest text; errors carry the 1-based line number.
pub fn parse_manifest_str(
    text: &str,
    gender_map: &HashMap<String, Gender>,
    split: Split,
) -> std::result::Result<Vec<UtteranceRecord>, (usize, String)> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let line_no = n + 1;
        let [speaker, file, _, attack, key] = fields[..] else {
            return Err((line_no, format!("expected 5 fields, found {}", fields.len())));
        };
        let (label, attack_id) = match key {
            "bonafide" => (Label::Genuine, None),
            "spoof" => {
                if attack == "-" {
                    return Err((line_no, "spoof line without attack id".into()));
                }
                (Label::Spoofed, Some(attack.to_string()))
            }
            other => return Err((line_no, format!("unknown key `{other}`"))),
        };
        let gender = *gender_map
            .get(speaker)
            .ok_or_else(|| (line_no, format!("speaker `{speaker}` missing from gender map")))?;
        records.push(UtteranceRecord {
            file_id: file.to_string(),
            speaker_id: speaker.to_string(),
            gender,
            label,
            attack_id,
            split,
        });
    }
    Ok(records)
}
