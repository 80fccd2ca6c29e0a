//! Staged pipeline driven by a TOML config.
//!
//! Every stage reads the artifacts of the stage before it from the work
//! directory and writes its own, followed by a stamp file
//! (`stamps/<stage>.json`) holding a hash of the config sections the stage
//! depends on. A stage refuses to run when its upstream stamp is missing or
//! was written under a different config.
//!
//! Work directory layout:
//!
//! ```text
//! corpus/                          synthetic corpus (synth-gen)
//! models.bin                       pooled PMF models (build-models)
//! features_<split>.csv             difference features (extract)
//! dm_<bucket>.bin                  diffusion map (dm-fit)
//! embedding_fit_<bucket>.csv       embedding of the fitting subset (dm-fit)
//! embedding_<split>_<bucket>.csv   extended embeddings (dm-extend)
//! classifier_<bucket>.bin          logistic regression (train)
//! scores_<split>_<bucket>.csv      spoof scores (evaluate)
//! det_<split>_<bucket>.csv         DET operating points (evaluate)
//! report_<bucket>.csv, report.json error tables (evaluate)
//! plots/                           CSV bundle for plotting (export-plots)
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio_io::{parse_gender_map, parse_manifest, read_wav, Label, Split, UtteranceRecord, Waveform};
use crate::classifier::{self, LogisticModel, TrainOptions};
use crate::diffusion::{self, DiffusionModel};
use crate::distances::{KsVariant, MeasureOptions, DEFAULT_SMOOTHING};
use crate::error::{Error, Result};
use crate::features::{
    read_rows_csv, write_features_csv, write_rows_csv, BankSelection, Extractor, FeatureConfig, FeatureVector,
    Standardizer,
};
use crate::filterbank::{BankKind, BankSpec};
use crate::metrics::{self, DetPoint};
use crate::models::{build_models, Binning, GenderBucket, SpeakerModelSet};
use crate::synth::{self, SynthSpec};

/// Bumped whenever an artifact format or stage semantics change.
const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub work_dir: PathBuf,
    /// Directory holding `<file_id>.wav`.
    pub data_root: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub gender_map: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            work_dir: PathBuf::from("work"),
            data_root: None,
            train_manifest: None,
            dev_manifest: None,
            eval_manifest: None,
            gender_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterbankConfig {
    pub n_channels: usize,
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub sample_rate_hz: u32,
    pub banks: Vec<BankKind>,
}

impl Default for FilterbankConfig {
    fn default() -> Self {
        FilterbankConfig {
            n_channels: 10,
            f_low_hz: 0.0,
            f_high_hz: 8000.0,
            sample_rate_hz: crate::audio_io::EXPECTED_SAMPLE_RATE,
            banks: vec![BankKind::Gammatone, BankKind::InverseGammatone],
        }
    }
}

impl FilterbankConfig {
    pub fn specs(&self) -> Vec<BankSpec> {
        self.banks
            .iter()
            .map(|&kind| BankSpec {
                kind,
                n_channels: self.n_channels,
                f_low_hz: self.f_low_hz,
                f_high_hz: self.f_high_hz,
                sample_rate_hz: self.sample_rate_hz,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmfConfig {
    pub raw_bins: usize,
    pub distance_bins: usize,
}

impl Default for PmfConfig {
    fn default() -> Self {
        let b = Binning::default();
        PmfConfig {
            raw_bins: b.raw_bins,
            distance_bins: b.bin_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// `full`, `reduced-2019` or `custom`.
    pub preset: String,
    /// Used when `preset = "custom"`.
    pub custom: Vec<BankSelection>,
    /// Z-score features with train-set statistics.
    pub zscore: bool,
    pub ks_variant: KsVariant,
    pub smoothing: f64,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            preset: "full".into(),
            custom: Vec::new(),
            zscore: false,
            ks_variant: KsVariant::Plain,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// Kernel width: `"auto"` (median heuristic) or a fixed positive value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSetting {
    Fixed(f64),
    Auto(Auto),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub epsilon: EpsilonSetting,
    pub k_female: usize,
    pub k_male: usize,
    /// Dimension used when genders are pooled.
    pub k_unified: usize,
    pub t: u32,
    pub per_attack: usize,
    pub genuine_count: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            epsilon: EpsilonSetting::Auto(Auto::Auto),
            k_female: 5,
            k_male: 4,
            k_unified: 5,
            t: 1,
            per_attack: 1000,
            genuine_count: 1000,
        }
    }
}

impl DiffusionConfig {
    pub fn k_for(&self, bucket: GenderBucket) -> usize {
        match bucket {
            GenderBucket::Female => self.k_female,
            GenderBucket::Male => self.k_male,
            GenderBucket::All => self.k_unified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub balance_classes: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let d = TrainOptions::default();
        ClassifierConfig {
            l2: d.l2,
            max_iterations: d.max_iterations,
            gradient_tolerance: d.gradient_tolerance,
            balance_classes: d.balance_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub splits: Vec<Split>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            splits: Split::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub gender_split: bool,
    pub paths: PathsConfig,
    pub filterbank: FilterbankConfig,
    pub pmf: PmfConfig,
    pub features: FeaturesConfig,
    pub diffusion: DiffusionConfig,
    pub classifier: ClassifierConfig,
    pub evaluate: EvaluateConfig,
    /// When present, `synth-gen` writes a corpus into `<work_dir>/corpus`
    /// and unset data paths point at it.
    pub synth: Option<SynthSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 2019,
            gender_split: true,
            paths: PathsConfig::default(),
            filterbank: FilterbankConfig::default(),
            pmf: PmfConfig::default(),
            features: FeaturesConfig::default(),
            diffusion: DiffusionConfig::default(),
            classifier: ClassifierConfig::default(),
            evaluate: EvaluateConfig::default(),
            synth: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets the pipeline seed and, if present, the corpus seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let Some(s) = &mut self.synth {
            s.seed = seed;
        }
    }

    pub fn feature_config(&self) -> Result<FeatureConfig> {
        let mut fc = match self.features.preset.as_str() {
            "custom" => FeatureConfig {
                banks: self.features.custom.clone(),
                measure_options: MeasureOptions::default(),
            },
            name => FeatureConfig::preset(name, self.filterbank.n_channels)?,
        };
        fc.measure_options = MeasureOptions {
            smoothing: self.features.smoothing,
            ks_variant: self.features.ks_variant,
        };
        fc.validate()?;
        Ok(fc)
    }

    pub fn binning(&self) -> Binning {
        Binning {
            raw_bins: self.pmf.raw_bins,
            bin_count: self.pmf.distance_bins,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fb = &self.filterbank;
        if fb.banks.is_empty() || fb.n_channels == 0 {
            return Err(Error::Config("at least one bank with one channel is required".into()));
        }
        let mut kinds = fb.banks.clone();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != fb.banks.len() {
            return Err(Error::Config("filter banks listed twice".into()));
        }
        let pow2 = |n: usize| n >= 2 && n.is_power_of_two();
        if !pow2(self.pmf.raw_bins) || !pow2(self.pmf.distance_bins) || self.pmf.distance_bins > self.pmf.raw_bins {
            return Err(Error::Config(
                "pmf bin counts must be powers of two with distance_bins <= raw_bins".into(),
            ));
        }
        if !(self.features.smoothing >= 0.0) {
            return Err(Error::Config("smoothing must be non-negative".into()));
        }
        let fc = self.feature_config()?;
        for sel in &fc.banks {
            if !fb.banks.contains(&sel.bank) {
                return Err(Error::Config(format!("features use bank {} which is not configured", sel.bank)));
            }
            if sel.channels.iter().any(|&c| c > fb.n_channels) {
                return Err(Error::Config(format!("{}: channel beyond n_channels", sel.bank)));
            }
        }
        let d = &self.diffusion;
        if d.k_female == 0 || d.k_male == 0 || d.k_unified == 0 {
            return Err(Error::Config("diffusion dimensions must be >= 1".into()));
        }
        if d.t == 0 {
            return Err(Error::Config("diffusion time t must be >= 1".into()));
        }
        if let EpsilonSetting::Fixed(e) = d.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config("epsilon must be positive".into()));
            }
        }
        if d.per_attack == 0 && d.genuine_count == 0 {
            return Err(Error::Config("diffusion subsample is empty".into()));
        }
        let c = &self.classifier;
        if !(c.l2 >= 0.0) || c.max_iterations == 0 || !(c.gradient_tolerance > 0.0) {
            return Err(Error::Config("invalid classifier parameters".into()));
        }
        if self.evaluate.splits.is_empty() {
            return Err(Error::Config("no evaluation splits".into()));
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        } else if self.paths.train_manifest.is_none() || self.paths.data_root.is_none() || self.paths.gender_map.is_none()
        {
            return Err(Error::Config(
                "paths.data_root, paths.train_manifest and paths.gender_map are required without [synth]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    SynthGen,
    BuildModels,
    Extract,
    DmFit,
    DmExtend,
    Train,
    Evaluate,
    ExportPlots,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::SynthGen,
        Stage::BuildModels,
        Stage::Extract,
        Stage::DmFit,
        Stage::DmExtend,
        Stage::Train,
        Stage::Evaluate,
        Stage::ExportPlots,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SynthGen => "synth-gen",
            Stage::BuildModels => "build-models",
            Stage::Extract => "extract",
            Stage::DmFit => "dm-fit",
            Stage::DmExtend => "dm-extend",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::ExportPlots => "export-plots",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    version: u32,
    config_hash: String,
}

/// Equal error rate and per-attack errors of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    /// Percent.
    pub eer: f64,
    pub threshold: f64,
    pub n_genuine: usize,
    pub n_spoofed: usize,
    /// Percent at the split's EER threshold; genuine under "None".
    pub per_attack: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub k: usize,
    pub epsilon: f64,
    pub fit_size: usize,
    pub classifier_iterations: usize,
    pub classifier_final_loss: f64,
    pub splits: BTreeMap<Split, SplitReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub feature_dim: usize,
    pub buckets: BTreeMap<GenderBucket, BucketReport>,
}

impl Report {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

/// Resolved data locations.
#[derive(Debug, Clone)]
struct DataPaths {
    data_root: PathBuf,
    manifests: BTreeMap<Split, PathBuf>,
    gender_map: PathBuf,
}

pub struct Pipeline {
    config: PipelineConfig,
    base_dir: PathBuf,
    lenient: bool,
}

impl Pipeline {
    /// Relative paths in `config` are taken relative to `base_dir`.
    pub fn new(config: PipelineConfig, base_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            base_dir: base_dir.into(),
            lenient: false,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = PipelineConfig::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Pipeline::new(config, base)
    }

    /// Skip unreadable files during feature extraction instead of failing.
    pub fn set_lenient(&mut self, lenient: bool) {
        self.lenient = lenient;
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.work_dir)
    }

    fn artifact(&self, name: impl AsRef<Path>) -> PathBuf {
        self.work_dir().join(name)
    }

    fn corpus_dir(&self) -> PathBuf {
        self.artifact("corpus")
    }

    fn uses_synth_corpus(&self) -> bool {
        self.config.synth.is_some() && self.config.paths.train_manifest.is_none()
    }

    fn data_paths(&self) -> DataPaths {
        let p = &self.config.paths;
        let corpus = self.corpus_dir();
        let pick = |configured: &Option<PathBuf>, fallback: PathBuf| match configured {
            Some(c) => self.resolve(c),
            None => fallback,
        };
        let mut manifests = BTreeMap::new();
        for (split, configured) in [
            (Split::Train, &p.train_manifest),
            (Split::Dev, &p.dev_manifest),
            (Split::Eval, &p.eval_manifest),
        ] {
            let path = match configured {
                Some(c) => Some(self.resolve(c)),
                None if self.config.synth.is_some() => {
                    Some(corpus.join(format!("{split}.txt"))).filter(|path| split == Split::Train || path.exists())
                }
                None => None,
            };
            if let Some(path) = path {
                manifests.insert(split, path);
            }
        }
        DataPaths {
            data_root: pick(&p.data_root, corpus.join("wav")),
            manifests,
            gender_map: pick(&p.gender_map, corpus.join("gender_map.txt")),
        }
    }

    fn buckets(&self) -> Vec<GenderBucket> {
        if self.config.gender_split {
            vec![GenderBucket::Female, GenderBucket::Male]
        } else {
            vec![GenderBucket::All]
        }
    }

    fn bucket_of(&self, row: &FeatureVector) -> GenderBucket {
        GenderBucket::of(row.gender, self.config.gender_split)
    }

    /// Hash of the config sections `stage` depends on.
    pub fn config_hash(&self, stage: Stage) -> String {
        let c = &self.config;
        let mut v = serde_json::Map::new();
        v.insert("version".into(), ARTIFACT_VERSION.into());
        let mut put = |k: &str, val: serde_json::Value| {
            v.insert(k.into(), val);
        };
        fn j<T: Serialize>(x: &T) -> serde_json::Value {
            serde_json::to_value(x).expect("config serializes")
        }
        put("synth", j(&c.synth));
        if stage >= Stage::BuildModels {
            let mut paths = c.paths.clone();
            paths.work_dir = PathBuf::new();
            put("paths", j(&paths));
            put("filterbank", j(&c.filterbank));
            put("pmf", j(&c.pmf));
            put("gender_split", j(&c.gender_split));
        }
        if stage >= Stage::Extract {
            put("features", j(&c.features));
        }
        if stage >= Stage::DmFit {
            put("diffusion", j(&c.diffusion));
            put("seed", j(&c.seed));
        }
        if stage >= Stage::Train {
            put("classifier", j(&c.classifier));
        }
        if stage >= Stage::Evaluate {
            put("evaluate", j(&c.evaluate));
        }
        let canonical = serde_json::to_vec(&serde_json::Value::Object(v)).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.artifact("stamps").join(format!("{}.json", stage.name()))
    }

    fn write_stamp(&self, stage: Stage) -> Result<()> {
        let dir = self.artifact("stamps");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stamp = Stamp {
            stage: stage.name().into(),
            version: ARTIFACT_VERSION,
            config_hash: self.config_hash(stage),
        };
        let path = self.stamp_path(stage);
        let text = serde_json::to_string_pretty(&stamp).expect("stamp serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Fails unless `stage` has completed under the current config.
    fn require(&self, stage: Stage) -> Result<()> {
        let path = self.stamp_path(stage);
        if !path.exists() {
            return Err(Error::MissingStage {
                stage: stage.name(),
                path,
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let stamp: Stamp = serde_json::from_str(&text).map_err(|e| Error::CorruptModel {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let expected = self.config_hash(stage);
        if stamp.version != ARTIFACT_VERSION || stamp.config_hash != expected {
            return Err(Error::ConfigMismatch {
                path,
                expected,
                found: stamp.config_hash,
            });
        }
        Ok(())
    }

    fn upstream(&self, stage: Stage) -> Option<Stage> {
        match stage {
            Stage::SynthGen => None,
            Stage::BuildModels => self.uses_synth_corpus().then_some(Stage::SynthGen),
            Stage::Extract => Some(Stage::BuildModels),
            Stage::DmFit => Some(Stage::Extract),
            Stage::DmExtend => Some(Stage::DmFit),
            Stage::Train => Some(Stage::DmExtend),
            Stage::Evaluate => Some(Stage::Train),
            Stage::ExportPlots => Some(Stage::Evaluate),
        }
    }

    /// Stages `run_all` executes, in order.
    pub fn stages(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|&s| s != Stage::SynthGen || self.config.synth.is_some())
            .collect()
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in self.stages() {
            self.run(stage)?;
        }
        Ok(())
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        if let Some(up) = self.upstream(stage) {
            self.require(up)?;
        }
        let work = self.work_dir();
        fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;
        log::info!("stage {stage}");
        match stage {
            Stage::SynthGen => self.synth_gen()?,
            Stage::BuildModels => self.build_models()?,
            Stage::Extract => self.extract()?,
            Stage::DmFit => self.dm_fit()?,
            Stage::DmExtend => self.dm_extend()?,
            Stage::Train => self.train()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::ExportPlots => self.export_plots()?,
        }
        self.write_stamp(stage)
    }

    fn synth_gen(&self) -> Result<()> {
        let spec = self
            .config
            .synth
            .as_ref()
            .ok_or_else(|| Error::Config("synth-gen needs a [synth] section".into()))?;
        let dir = self.corpus_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        synth::generate(spec, &dir)?;
        Ok(())
    }

    fn records(&self, split: Split) -> Result<Option<Vec<UtteranceRecord>>> {
        let paths = self.data_paths();
        let Some(manifest) = paths.manifests.get(&split) else {
            return Ok(None);
        };
        let genders = parse_gender_map(&paths.gender_map)?;
        parse_manifest(manifest, &genders, split).map(Some)
    }

    fn loader(&self) -> impl Fn(&UtteranceRecord) -> Result<Waveform> + Sync + Send {
        let root = self.data_paths().data_root;
        move |r: &UtteranceRecord| read_wav(root.join(format!("{}.wav", r.file_id)))
    }

    fn build_models(&self) -> Result<()> {
        let records = self
            .records(Split::Train)?
            .ok_or_else(|| Error::Config("no training manifest".into()))?;
        let banks = self
            .config
            .filterbank
            .specs()
            .iter()
            .map(BankSpec::design)
            .collect::<Result<Vec<_>>>()?;
        let models = build_models(
            &records,
            self.loader(),
            &banks,
            self.config.binning(),
            self.config.gender_split,
        )?;
        models.save(self.artifact("models.bin"))
    }

    fn load_models(&self) -> Result<SpeakerModelSet> {
        let path = self.artifact("models.bin");
        let models = SpeakerModelSet::load(&path)?;
        let expected = self.config.filterbank.specs();
        if models.banks != expected
            || models.binning != self.config.binning()
            || models.gender_split != self.config.gender_split
        {
            return Err(Error::ConfigMismatch {
                path,
                expected: format!("{expected:?}"),
                found: format!("{:?}", models.banks),
            });
        }
        Ok(models)
    }

    fn features_path(&self, split: Split) -> PathBuf {
        self.artifact(format!("features_{split}.csv"))
    }

    fn extract(&self) -> Result<()> {
        let models = self.load_models()?;
        let extractor = Extractor::new(&models, self.config.feature_config()?)?;
        let mut outputs = Vec::new();
        for split in Split::ALL {
            let path = self.features_path(split);
            let Some(records) = self.records(split)? else {
                // Drop features of a split that no longer has a manifest.
                if path.exists() {
                    fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                }
                continue;
            };
            let batch = extractor.extract_batch(&records, self.loader(), self.lenient)?;
            if !batch.skipped.is_empty() {
                log::warn!("{split}: skipped {} of {} files", batch.skipped.len(), records.len());
            }
            outputs.push((split, batch.rows));
        }
        if self.config.features.zscore {
            let train = outputs
                .iter()
                .find(|(s, _)| *s == Split::Train)
                .ok_or_else(|| Error::Data("no training features".into()))?;
            let z = Standardizer::fit(&train.1)?;
            for (_, rows) in &mut outputs {
                z.apply(rows);
            }
        }
        for (split, rows) in &outputs {
            write_features_csv(&self.features_path(*split), rows)?;
        }
        Ok(())
    }

    fn read_split(&self, split: Split) -> Result<Option<Vec<FeatureVector>>> {
        let path = self.features_path(split);
        if !path.exists() {
            return Ok(None);
        }
        read_rows_csv(&path).map(Some)
    }

    fn dm_path(&self, bucket: GenderBucket) -> PathBuf {
        self.artifact(format!("dm_{bucket}.bin"))
    }

    fn embedding_path(&self, split: Split, bucket: GenderBucket) -> PathBuf {
        self.artifact(format!("embedding_{split}_{bucket}.csv"))
    }

    fn dm_fit(&self) -> Result<()> {
        let train = self
            .read_split(Split::Train)?
            .ok_or_else(|| Error::MissingStage {
                stage: Stage::Extract.name(),
                path: self.features_path(Split::Train),
            })?;
        let d = &self.config.diffusion;
        for (bi, bucket) in self.buckets().into_iter().enumerate() {
            let rows: Vec<&FeatureVector> = train.iter().filter(|r| self.bucket_of(r) == bucket).collect();
            let attacks: Vec<&str> = rows.iter().map(|r| r.attack_name()).collect();
            let seed = self.config.seed.wrapping_add(bi as u64);
            let chosen = diffusion::subsample_training(&attacks, d.per_attack, d.genuine_count, seed);
            let points: Vec<Vec<f64>> = chosen.iter().map(|&i| rows[i].values.clone()).collect();
            let k = d.k_for(bucket);
            if points.len() < k + 1 {
                return Err(Error::Data(format!(
                    "{bucket}: {} training rows cannot support a {k}-dimensional embedding",
                    points.len()
                )));
            }
            let epsilon = match d.epsilon {
                EpsilonSetting::Fixed(e) => e,
                EpsilonSetting::Auto(_) => diffusion::select_epsilon(&points, seed)?,
            };
            log::info!("{bucket}: fitting diffusion map on {} rows, epsilon {epsilon}", points.len());
            let model = diffusion::fit(&points, k, epsilon, d.t)?;
            let emb = model.embed();
            let fitted: Vec<FeatureVector> = chosen
                .iter()
                .zip(emb.coordinates)
                .map(|(&i, values)| FeatureVector {
                    values,
                    ..rows[i].clone()
                })
                .collect();
            write_rows_csv(&self.artifact(format!("embedding_fit_{bucket}.csv")), &fitted, dm_column)?;
            model.save(self.dm_path(bucket))?;
        }
        Ok(())
    }

    fn dm_extend(&self) -> Result<()> {
        for bucket in self.buckets() {
            let model = DiffusionModel::load(self.dm_path(bucket))?;
            for split in Split::ALL {
                let path = self.embedding_path(split, bucket);
                let Some(all) = self.read_split(split)? else {
                    if path.exists() {
                        fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                    }
                    continue;
                };
                let rows: Vec<FeatureVector> = all.into_iter().filter(|r| self.bucket_of(r) == bucket).collect();
                let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
                let coords = model.extend_batch(&xs)?;
                let out: Vec<FeatureVector> = rows
                    .into_iter()
                    .zip(coords)
                    .map(|(r, values)| FeatureVector { values, ..r })
                    .collect();
                write_rows_csv(&path, &out, dm_column)?;
            }
        }
        Ok(())
    }

    fn classifier_path(&self, bucket: GenderBucket) -> PathBuf {
        self.artifact(format!("classifier_{bucket}.bin"))
    }

    fn train(&self) -> Result<()> {
        let c = &self.config.classifier;
        let opts = TrainOptions {
            l2: c.l2,
            max_iterations: c.max_iterations,
            gradient_tolerance: c.gradient_tolerance,
            balance_classes: c.balance_classes,
            initial: None,
        };
        for bucket in self.buckets() {
            let rows = read_rows_csv(&self.embedding_path(Split::Train, bucket))?;
            let x: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
            let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
            let model = classifier::train(&x, &labels, &opts)?;
            log::info!(
                "{bucket}: classifier converged after {} iterations, loss {}",
                model.meta.iterations,
                model.meta.final_loss
            );
            model.save(self.classifier_path(bucket))?;
        }
        Ok(())
    }

    fn evaluate(&self) -> Result<()> {
        let mut report = Report {
            config_hash: self.config_hash(Stage::Evaluate),
            feature_dim: self.config.feature_config()?.dim(),
            buckets: BTreeMap::new(),
        };
        for bucket in self.buckets() {
            let model = LogisticModel::load(self.classifier_path(bucket))?;
            let dm = DiffusionModel::load(self.dm_path(bucket))?;
            let mut splits = BTreeMap::new();
            for &split in &self.config.evaluate.splits {
                let path = self.embedding_path(split, bucket);
                if !path.exists() {
                    log::warn!("{bucket}: no {split} embedding, skipping");
                    continue;
                }
                let rows = read_rows_csv(&path)?;
                let scores: Vec<f64> = rows.iter().map(|r| model.score(&r.values)).collect::<Result<_>>()?;
                let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
                let attacks: Vec<&str> = rows.iter().map(|r| r.attack_name()).collect();
                write_scores_csv(&self.artifact(format!("scores_{split}_{bucket}.csv")), &rows, &scores)?;
                let n_spoofed = labels.iter().filter(|&&l| l == Label::Spoofed).count();
                let n_genuine = labels.len() - n_spoofed;
                if n_spoofed == 0 || n_genuine == 0 {
                    log::warn!("{bucket}/{split}: only one class present, no EER");
                    continue;
                }
                let points = metrics::det_points(&scores, &labels)?;
                write_det_csv(&self.artifact(format!("det_{split}_{bucket}.csv")), &points)?;
                let eer = metrics::eer_from_points(&points)?;
                splits.insert(
                    split,
                    SplitReport {
                        eer: 100.0 * eer.eer,
                        threshold: eer.threshold,
                        n_genuine,
                        n_spoofed,
                        per_attack: metrics::per_attack_error(&scores, &labels, &attacks, eer.threshold),
                    },
                );
            }
            let table = BucketReport {
                k: dm.k,
                epsilon: dm.epsilon,
                fit_size: dm.len(),
                classifier_iterations: model.meta.iterations,
                classifier_final_loss: model.meta.final_loss,
                splits,
            };
            write_table_csv(&self.artifact(format!("report_{bucket}.csv")), &table)?;
            report.buckets.insert(bucket, table);
        }
        let path = self.artifact("report.json");
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    fn export_plots(&self) -> Result<()> {
        let dir = self.artifact("plots");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let work = self.work_dir();
        let mut names: Vec<String> = fs::read_dir(&work)
            .map_err(|e| Error::io(&work, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| {
                n.ends_with(".csv")
                    && (n.starts_with("embedding_") || n.starts_with("det_") || n.starts_with("scores_"))
            })
            .collect();
        names.sort();
        for n in &names {
            let (from, to) = (work.join(n), dir.join(n));
            fs::copy(&from, &to).map_err(|e| Error::io(&from, e))?;
        }
        log::info!("exported {} CSV files to {}", names.len(), dir.display());
        Ok(())
    }
}

/// Name of embedding column `i` (0-based): `dm_1`, `dm_2`, ...
pub fn dm_column(i: usize) -> String {
    format!("dm_{}", i + 1)
}

fn write_scores_csv(path: &Path, rows: &[FeatureVector], scores: &[f64]) -> Result<()> {
    let mut out = String::from("file_id,label,attack,score\n");
    for (r, s) in rows.iter().zip(scores) {
        writeln!(out, "{},{},{},{s}", r.file_id, r.label, r.attack_name()).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_det_csv(path: &Path, points: &[DetPoint]) -> Result<()> {
    let mut out = String::from("threshold,fpr,fnr\n");
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.fnr).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-attack error table, one column per split, rows sorted by attack with
/// the overall EER last.
fn write_table_csv(path: &Path, table: &BucketReport) -> Result<()> {
    let splits: Vec<Split> = table.splits.keys().copied().collect();
    let mut attacks: Vec<&str> = table
        .splits
        .values()
        .flat_map(|s| s.per_attack.keys().map(String::as_str))
        .collect();
    attacks.sort_unstable();
    attacks.dedup();
    let mut out = String::from("attack");
    for s in &splits {
        write!(out, ",error_{s}").unwrap();
    }
    out.push('\n');
    let cell = |v: Option<f64>| v.map(|v| format!("{v:.2}")).unwrap_or_default();
    for a in attacks {
        out.push_str(a);
        for s in &splits {
            write!(out, ",{}", cell(table.splits[s].per_attack.get(a).copied())).unwrap();
        }
        out.push('\n');
    }
    out.push_str("EER");
    for s in &splits {
        write!(out, ",{}", cell(Some(table.splits[s].eer))).unwrap();
    }
    out.push('\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let mut c = PipelineConfig::default();
        c.synth = Some(SynthSpec::default());
        let text = c.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn epsilon_accepts_auto_and_numbers() {
        let c = PipelineConfig::from_toml("[diffusion]\nepsilon = \"auto\"\n").unwrap();
        assert_eq!(c.diffusion.epsilon, EpsilonSetting::Auto(Auto::Auto));
        let c = PipelineConfig::from_toml("[diffusion]\nepsilon = 0.5\n").unwrap();
        assert_eq!(c.diffusion.epsilon, EpsilonSetting::Fixed(0.5));
        assert!(PipelineConfig::from_toml("[diffusion]\nepsilon = \"wide\"\n").is_err());
        assert!(PipelineConfig::from_toml("[diffusion]\nbogus = 1\n").is_err());
    }

    #[test]
    fn validation() {
        let ok = || PipelineConfig {
            synth: Some(SynthSpec::default()),
            ..PipelineConfig::default()
        };
        assert!(ok().validate().is_ok());
        assert!(PipelineConfig::default().validate().is_err(), "no data paths");
        let mut c = ok();
        c.diffusion.k_male = 0;
        assert!(c.validate().is_err());
        let mut c = ok();
        c.diffusion.t = 0;
        assert!(c.validate().is_err());
        let mut c = ok();
        c.features.preset = "tiny".into();
        assert!(c.validate().is_err());
        let mut c = ok();
        c.filterbank.banks = vec![BankKind::Gammatone];
        assert!(c.validate().is_err(), "preset needs the inverse bank");
        let mut c = ok();
        c.pmf.distance_bins = 1000;
        assert!(c.validate().is_err());
    }

    #[test]
    fn stage_names_parse() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("fit".parse::<Stage>().is_err());
    }

    #[test]
    fn hashes_track_relevant_sections() {
        let base = PipelineConfig {
            synth: Some(SynthSpec::default()),
            ..PipelineConfig::default()
        };
        let p = Pipeline::new(base.clone(), "/tmp").unwrap();
        let mut c = base.clone();
        c.classifier.l2 = 1.0;
        let q = Pipeline::new(c, "/tmp").unwrap();
        assert_eq!(p.config_hash(Stage::DmExtend), q.config_hash(Stage::DmExtend));
        assert_ne!(p.config_hash(Stage::Train), q.config_hash(Stage::Train));
        let mut c = base;
        c.paths.work_dir = "elsewhere".into();
        let r = Pipeline::new(c, "/tmp").unwrap();
        assert_eq!(p.config_hash(Stage::Evaluate), r.config_hash(Stage::Evaluate));
    }

    #[test]
    fn evaluate_without_classifier_names_train() {
        let dir = tempfile::tempdir().unwrap();
        let c = PipelineConfig {
            synth: Some(SynthSpec::default()),
            ..PipelineConfig::default()
        };
        let p = Pipeline::new(c, dir.path()).unwrap();
        match p.run(Stage::Evaluate) {
            Err(Error::MissingStage { stage, .. }) => assert_eq!(stage, "train"),
            other => panic!("{other:?}"),
        }
    }
}
