//! Clip-level feature vectors, manifests, labeled datasets, stratified
//! splitting and z-score standardization.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{self, AudioClip, AudioError, CANONICAL_RATE};
use crate::augment::{self, AugmentError, AugmentPlan, Provenance};
use crate::dsp::{DspError, SpectralAnalyzer, SpectralConfig};
use crate::rng;

/// Shortest clip accepted by [`extract_features`], in seconds.
pub const MIN_CLIP_SECS: f64 = 0.2;
/// Fraction of manifest rows allowed to fail before a build aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;
pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.64, 0.16, 0.20];
/// Minimum original rows per class for a stratified split.
pub const MIN_ROWS_PER_CLASS: usize = 5;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("clip of {secs:.3} s is shorter than the {MIN_CLIP_SECS} s minimum")]
    ClipTooShort { secs: f64 },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate clip id {0}")]
    DuplicateClip(String),
    #[error("{failed} of {total} manifest rows failed to load (limit 10%); first: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("class {label} has {count} rows, need at least {MIN_ROWS_PER_CLASS}")]
    TooFewSamples { label: Label, count: usize },
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("row {clip_id} has {got} features, expected {expected}")]
    DimensionMismatch {
        clip_id: String,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "no_cough")]
    NonCough,
    #[serde(rename = "cough")]
    Cough,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::NonCough => 0,
            Label::Cough => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonCough => "no_cough",
            Label::Cough => "cough",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Sitting,
    Standing,
    Walking,
    Unknown,
}

impl Activity {
    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Sitting => "sitting",
            Activity::Standing => "standing",
            Activity::Walking => "walking",
            Activity::Unknown => "unknown",
        }
    }
}

/// Row selection by recorded activity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivityFilter {
    #[default]
    All,
    Walking,
    /// Sitting or standing.
    NonWalking,
}

impl ActivityFilter {
    pub fn accepts(self, activity: Activity) -> bool {
        match self {
            ActivityFilter::All => true,
            ActivityFilter::Walking => activity == Activity::Walking,
            ActivityFilter::NonWalking => {
                matches!(activity, Activity::Sitting | Activity::Standing)
            }
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(Self::All),
            "walking" => Some(Self::Walking),
            "non-walking" => Some(Self::NonWalking),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub clip_id: String,
}

/// One manifest line. `burst_count` is only present in synthetic corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub label: Label,
    pub activity: Activity,
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burst_count: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        if row.path.is_absolute() {
            row.path.clone()
        } else {
            self.base_dir.join(&row.path)
        }
    }
}

/// Reads a `path,label,activity,subject[,burst_count]` CSV manifest.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, FeatureError> {
    let path = path.as_ref();
    let manifest_err = |message: String| FeatureError::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| manifest_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| manifest_err(e.to_string()))?;
    for required in ["path", "label", "activity", "subject"] {
        if !headers.iter().any(|h| h == required) {
            return Err(manifest_err(format!("missing column {required}")));
        }
    }
    let rows = reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| manifest_err(format!("row {}: {e}", i + 1))))
        .collect::<Result<Vec<ManifestRow>, _>>()?;
    Ok(Manifest {
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        rows,
    })
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let mut out = String::from("path,label,activity,subject,burst_count\n");
    for row in rows {
        let bursts = row.burst_count.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            row.path.display(),
            row.label,
            row.activity.as_str(),
            row.subject,
            bursts
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Concatenated per-coefficient MFCC means and per-band log-mel means.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    analyzer: SpectralAnalyzer,
}

impl FeatureExtractor {
    pub fn new(cfg: &SpectralConfig) -> Result<Self, FeatureError> {
        Ok(Self {
            analyzer: SpectralAnalyzer::new(cfg, CANONICAL_RATE)?,
        })
    }

    pub fn analyzer(&self) -> &SpectralAnalyzer {
        &self.analyzer
    }

    pub fn dim(&self) -> usize {
        let cfg = self.analyzer.config();
        cfg.n_mfcc + cfg.n_mels
    }

    pub fn extract(&self, clip: &AudioClip, clip_id: impl Into<String>) -> Result<FeatureVector, FeatureError> {
        let secs = clip.duration_secs();
        if secs < MIN_CLIP_SECS {
            return Err(FeatureError::ClipTooShort { secs });
        }
        let log_mel = self.analyzer.log_mel(clip)?;
        let mfcc = self.analyzer.mfcc_from_log_mel(&log_mel);
        let mut values = mfcc.column_means();
        values.extend(log_mel.column_means());
        Ok(FeatureVector {
            values,
            clip_id: clip_id.into(),
        })
    }
}

pub fn extract_features(clip: &AudioClip, cfg: &SpectralConfig) -> Result<FeatureVector, FeatureError> {
    let id = clip.source_id.clone().unwrap_or_default();
    FeatureExtractor::new(cfg)?.extract(clip, id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub features: FeatureVector,
    pub label: Label,
    pub activity: Activity,
    pub subject: String,
    pub provenance: Provenance,
    /// Clip id of the original this row derives from (itself for originals).
    pub origin_id: String,
    pub path: Option<PathBuf>,
    pub burst_count: Option<u8>,
    pub split: Option<Split>,
}

impl DatasetRow {
    pub fn clip_id(&self) -> &str {
        &self.features.clip_id
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub rows: Vec<DatasetRow>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.features.values.len())
    }

    pub fn split_map(&self) -> BTreeMap<String, Split> {
        self.rows
            .iter()
            .filter_map(|r| r.split.map(|s| (r.features.clip_id.clone(), s)))
            .collect()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &DatasetRow> {
        self.rows.iter().filter(move |r| r.split == Some(split))
    }

    /// Feature matrix and 0/1 labels of one split, in row order.
    pub fn xy(&self, split: Split) -> (Vec<Vec<f64>>, Vec<u8>) {
        self.in_split(split)
            .map(|r| (r.features.values.clone(), r.label.as_u8()))
            .unzip()
    }

    /// Checks that every row has a split and no augmented row is outside train.
    pub fn check_partition(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.clip_id()) {
                return Err(format!("clip {} appears twice", r.clip_id()));
            }
            match r.split {
                None => return Err(format!("clip {} has no split", r.clip_id())),
                Some(Split::Val | Split::Test) if r.provenance != Provenance::Original => {
                    return Err(format!("augmented clip {} outside train", r.clip_id()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// CSV with a clip id, one column per feature, then label, activity,
    /// subject, provenance and split.
    pub fn to_csv(&self) -> String {
        let dim = self.dim();
        let mut out = String::from("clip_id");
        for i in 0..dim {
            write!(out, ",f{i}").unwrap();
        }
        out.push_str(",label,activity,subject,provenance,split\n");
        for r in &self.rows {
            out.push_str(&csv_field(r.clip_id()));
            for v in &r.features.values {
                write!(out, ",{v}").unwrap();
            }
            writeln!(
                out,
                ",{},{},{},{},{}",
                r.label,
                r.activity.as_str(),
                csv_field(&r.subject),
                r.provenance,
                r.split.map_or("", Split::as_str)
            )
            .unwrap();
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowFailure {
    pub index: usize,
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub dataset: LabeledDataset,
    pub failures: Vec<RowFailure>,
}

/// Reads and canonicalizes a clip from disk.
pub fn load_clip(path: &Path) -> Result<AudioClip, FeatureError> {
    Ok(audio_io::canonicalize(audio_io::read_wav(path)?)?)
}

/// Extracts features for every manifest row accepted by `filter`.
///
/// Rows keep manifest order. Rows that fail to decode are collected in
/// [`BuildOutput::failures`]; more than 10% failures aborts the build.
pub fn build_dataset(
    manifest: &Manifest,
    extractor: &FeatureExtractor,
    filter: ActivityFilter,
) -> Result<BuildOutput, FeatureError> {
    let selected: Vec<(usize, &ManifestRow)> = manifest
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| filter.accepts(r.activity))
        .collect();

    let mut ids = HashSet::new();
    for (_, row) in &selected {
        let id = row.path.display().to_string();
        if !ids.insert(id.clone()) {
            return Err(FeatureError::DuplicateClip(id));
        }
    }

    let results: Vec<Result<DatasetRow, RowFailure>> = selected
        .par_iter()
        .map(|&(index, row)| {
            let path = manifest.resolve(row);
            let clip_id = row.path.display().to_string();
            load_clip(&path)
                .and_then(|clip| extractor.extract(&clip, clip_id.clone()))
                .map(|features| DatasetRow {
                    features,
                    label: row.label,
                    activity: row.activity,
                    subject: row.subject.clone(),
                    provenance: Provenance::Original,
                    origin_id: clip_id,
                    path: Some(path.clone()),
                    burst_count: row.burst_count,
                    split: None,
                })
                .map_err(|e| RowFailure {
                    index,
                    path,
                    message: e.to_string(),
                })
        })
        .collect();

    let mut dataset = LabeledDataset::default();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => dataset.rows.push(row),
            Err(f) => {
                log::warn!("skipping {}: {}", f.path.display(), f.message);
                failures.push(f);
            }
        }
    }
    let total = selected.len();
    if failures.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(FeatureError::TooManyFailures {
            failed: failures.len(),
            total,
            first: failures[0].message.clone(),
        });
    }
    Ok(BuildOutput { dataset, failures })
}

/// Stratified train/val/test assignment of the original rows.
///
/// Each class is shuffled with its own seeded stream and cut at
/// `round(n * ratio)` boundaries. Augmented rows inherit the partition of
/// their original; those landing outside train are dropped.
pub fn split_dataset(
    mut ds: LabeledDataset,
    ratios: [f64; 3],
    seed: u64,
) -> Result<LabeledDataset, FeatureError> {
    if ratios.iter().any(|r| r.is_nan() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(FeatureError::InvalidRatios(ratios));
    }
    let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
    for label in [Label::NonCough, Label::Cough] {
        let mut ids: Vec<&str> = ds
            .rows
            .iter()
            .filter(|r| r.label == label && r.provenance == Provenance::Original)
            .map(|r| r.clip_id())
            .collect();
        if ids.len() < MIN_ROWS_PER_CLASS {
            return Err(FeatureError::TooFewSamples {
                label,
                count: ids.len(),
            });
        }
        let mut rng = rng::substream(seed, rng::streams::SPLIT + label.as_u8() as u64);
        ids.shuffle(&mut rng);
        let n = ids.len() as f64;
        let n_train = (n * ratios[0]).round() as usize;
        let n_val = ((n * ratios[1]).round() as usize).min(ids.len() - n_train);
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            assignment.insert(id.to_string(), split);
        }
    }
    for row in &mut ds.rows {
        row.split = assignment.get(&row.origin_id).copied();
    }
    ds.rows.retain(|r| {
        r.split.is_some() && (r.provenance == Provenance::Original || r.split == Some(Split::Train))
    });
    Ok(ds)
}

/// Augments the original cough rows of the train split according to `plan`
/// and appends the derived rows (tagged with their provenance) to train.
pub fn augment_train_coughs(
    ds: &mut LabeledDataset,
    plan: &AugmentPlan,
    extractor: &FeatureExtractor,
    seed: u64,
) -> Result<usize, FeatureError> {
    if plan.multiplier() == 1 {
        return Ok(0);
    }
    let sources: Vec<&DatasetRow> = ds
        .rows
        .iter()
        .filter(|r| {
            r.label == Label::Cough
                && r.provenance == Provenance::Original
                && r.split == Some(Split::Train)
                && r.path.is_some()
        })
        .collect();
    if sources.is_empty() {
        return Ok(0);
    }
    let clips = sources
        .par_iter()
        .map(|r| load_clip(r.path.as_deref().unwrap()))
        .collect::<Result<Vec<_>, _>>()?;
    let expanded = augment::expand_with_plan(&clips, plan, seed)?;
    let new_rows = expanded
        .par_iter()
        .filter(|a| a.provenance != Provenance::Original)
        .map(|a| {
            let src = sources[a.origin];
            let id = format!("{}#{}", src.clip_id(), a.provenance);
            Ok(DatasetRow {
                features: extractor.extract(&a.clip, id)?,
                provenance: a.provenance,
                path: None,
                ..src.clone()
            })
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    let added = new_rows.len();
    ds.rows.extend(new_rows);
    Ok(added)
}

/// Per-dimension z-score transform fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation per dimension. A dimension
    /// with zero variance maps through unchanged (mean 0, std 1).
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        assert!(rows.len() >= 2, "standardizer needs at least two rows");
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((acc, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let mut std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for (m, s) in mean.iter_mut().zip(&mut std) {
            if *s <= 1e-12 * m.abs().max(1.0) {
                *m = 0.0;
                *s = 1.0;
            }
        }
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}
