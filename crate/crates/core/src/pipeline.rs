//! Config-driven runs: dataset build, split, augmentation, standardization,
//! CNN (and optional forest) training, evaluation, ablation, clustering and
//! long-recording scans. Every artifact is written under the configured
//! output directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{self, AudioClip};
use crate::augment::AugmentPlan;
use crate::cluster::{matching_agreement, select_k, ClusterError, ClusterReport, KMeansOptions};
use crate::cnn::{self, Cnn, CnnConfig, CnnError, CnnParameters, TrainReport};
use crate::dsp::SpectralConfig;
use crate::features::{
    augment_train_coughs, build_dataset, read_manifest, split_dataset, ActivityFilter, FeatureError, FeatureExtractor,
    Label, LabeledDataset, Split, Standardizer, DEFAULT_SPLIT_RATIOS,
};
use crate::forest::{train_forest, ForestConfig};
use crate::metrics::{evaluate, ConfusionMatrix, MetricsSummary, DEFAULT_THRESHOLD};
use crate::plot;

/// Fewest cough rows the cluster command accepts.
pub const MIN_CLUSTER_ROWS: usize = 20;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Divergence(_) => 4,
            PipelineError::Io { .. } => 1,
        }
    }
}

impl From<FeatureError> for PipelineError {
    fn from(e: FeatureError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<CnnError> for PipelineError {
    fn from(e: CnnError) -> Self {
        match e {
            CnnError::NonFiniteActivation { .. } => PipelineError::Divergence(e.to_string()),
            CnnError::ShapeMismatch(_) | CnnError::InvalidConfig(_) | CnnError::ArchitectureMismatch { .. } => {
                PipelineError::Config(e.to_string())
            }
            CnnError::Io(_) => PipelineError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub window_secs: f64,
    pub hop_secs: f64,
    pub threshold: f64,
    /// Windows with RMS below this are scored 0 without running the model.
    /// The default sits well under the quietest training background, so it
    /// only skips input the network has never seen (digital silence, bare
    /// noise floor). 0 disables the gate.
    pub min_rms: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            window_secs: 1.5,
            hop_secs: 0.5,
            threshold: DEFAULT_THRESHOLD,
            min_rms: DEFAULT_MIN_RMS,
        }
    }
}

pub const DEFAULT_MIN_RMS: f64 = 1e-3;

impl ScanConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.window_secs > 0.0 && self.hop_secs > 0.0) {
            return Err(PipelineError::Config("scan.window_secs and scan.hop_secs must be positive".into()));
        }
        if self.min_rms.is_nan() || self.min_rms < 0.0 {
            return Err(PipelineError::Config("scan.min_rms must be non-negative".into()));
        }
        Ok(())
    }
}

fn default_split() -> [f64; 3] {
    DEFAULT_SPLIT_RATIOS
}

/// Run configuration, usually read from TOML.
///
/// The top-level `seed` replaces the seed of every subsection. A `[forest]`
/// table, even an empty one, enables the forest baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub activity: ActivityFilter,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub augment: AugmentPlan,
    #[serde(default)]
    pub cnn: CnnConfig,
    #[serde(default)]
    pub forest: Option<ForestConfig>,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub cluster: KMeansOptions,
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            manifest: manifest.into(),
            out_dir: out_dir.into(),
            seed: 0,
            activity: ActivityFilter::All,
            split: DEFAULT_SPLIT_RATIOS,
            spectral: SpectralConfig::default(),
            augment: AugmentPlan::default(),
            cnn: CnnConfig::default(),
            forest: None,
            scan: ScanConfig::default(),
            cluster: KMeansOptions::default(),
        }
    }

    /// Parses TOML and resolves relative paths against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.message().to_string()))?;
        for p in [&mut cfg.manifest, &mut cfg.out_dir] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Copy of the CNN config carrying the run seed.
    pub fn cnn_config(&self) -> CnnConfig {
        CnnConfig {
            seed: self.seed,
            ..self.cnn.clone()
        }
    }

    pub fn forest_config(&self) -> Option<ForestConfig> {
        self.forest.clone().map(|f| ForestConfig { seed: self.seed, ..f })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.spectral
            .validate(audio_io::CANONICAL_RATE)
            .map_err(|e| PipelineError::Config(format!("spectral: {e}")))?;
        if self.split.iter().any(|r| r.is_nan() || *r < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PipelineError::Config(format!(
                "split: ratios {:?} must be non-negative and sum to 1",
                self.split
            )));
        }
        let dim = self.spectral.n_mfcc + self.spectral.n_mels;
        if self.cnn.input_len != dim {
            return Err(PipelineError::Config(format!(
                "cnn.input_len is {} but the spectral settings give {dim} features",
                self.cnn.input_len
            )));
        }
        Cnn::new(&self.cnn).map_err(|e| PipelineError::Config(format!("cnn: {e}")))?;
        if self.augment.noise_scale.is_nan() || self.augment.noise_scale < 0.0 {
            return Err(PipelineError::Config("augment.noise_scale must be non-negative".into()));
        }
        self.scan.validate()
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    std::fs::write(path, contents).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_file(path, s)
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Split dataset of original rows plus the extractor that produced it.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub extractor: FeatureExtractor,
    pub dataset: LabeledDataset,
    pub skipped: usize,
}

/// Builds the feature dataset for the configured manifest and activity
/// filter, then assigns stratified splits.
pub fn prepare(cfg: &PipelineConfig) -> Result<PreparedData, PipelineError> {
    cfg.validate()?;
    let manifest = read_manifest(&cfg.manifest)?;
    let extractor = FeatureExtractor::new(&cfg.spectral).map_err(|e| PipelineError::Config(e.to_string()))?;
    let built = build_dataset(&manifest, &extractor, cfg.activity)?;
    let dataset = split_dataset(built.dataset, cfg.split, cfg.seed)?;
    Ok(PreparedData {
        extractor,
        dataset,
        skipped: built.failures.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub split: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
}

impl ModelMetrics {
    fn new(model: &str, split: Split, cm: ConfusionMatrix, m: MetricsSummary) -> Self {
        ModelMetrics {
            model: model.into(),
            split: split.as_str().into(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            confusion: cm,
        }
    }

    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            accuracy: self.accuracy,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub train_augmented: usize,
    pub val: usize,
    pub test: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub stopped_early: bool,
    pub best_val_loss: f64,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub seed: u64,
    pub activity: ActivityFilter,
    pub counts: SplitCounts,
    pub training: TrainingSummary,
    pub models: Vec<ModelMetrics>,
}

/// Everything produced by training under one augmentation plan.
#[derive(Debug, Clone)]
pub struct TrainedCondition {
    pub dataset: LabeledDataset,
    pub standardizer: Standardizer,
    pub params: CnnParameters,
    pub report: TrainReport,
    pub cnn_test: ModelMetrics,
    pub forest_test: Option<ModelMetrics>,
}

impl TrainedCondition {
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.dataset.in_split(split).map(|r| r.clip_id().to_string()).collect()
    }
}

/// Augments a copy of the prepared training split with `plan`, standardizes
/// on the resulting train rows and trains the CNN (and forest when enabled).
pub fn train_condition(
    cfg: &PipelineConfig,
    prepared: &PreparedData,
    plan: &AugmentPlan,
) -> Result<TrainedCondition, PipelineError> {
    let mut dataset = prepared.dataset.clone();
    let added = augment_train_coughs(&mut dataset, plan, &prepared.extractor, cfg.seed)?;
    log::info!("augmentation added {added} train rows");
    let (train_x, train_y) = dataset.xy(Split::Train);
    let (val_x, val_y) = dataset.xy(Split::Val);
    let (test_x, test_y) = dataset.xy(Split::Test);
    if train_x.len() < 2 || val_x.is_empty() || test_x.is_empty() {
        return Err(PipelineError::Data(format!(
            "split sizes train {} / val {} / test {} are too small",
            train_x.len(),
            val_x.len(),
            test_x.len()
        )));
    }
    let standardizer = Standardizer::fit(&train_x);
    let train_x = standardizer.apply(&train_x);
    let val_x = standardizer.apply(&val_x);
    let test_x = standardizer.apply(&test_x);

    let cnn_cfg = cfg.cnn_config();
    let (params, report) = cnn::train(&cnn_cfg, &train_x, &train_y, &val_x, &val_y)?;
    let net = Cnn::new(&cnn_cfg)?;
    let probs = net.predict(&params, &test_x)?;
    let (cm, m) = evaluate(&probs, &test_y, DEFAULT_THRESHOLD).map_err(|e| PipelineError::Data(e.to_string()))?;
    let cnn_test = ModelMetrics::new("cnn", Split::Test, cm, m);

    let forest_test = match cfg.forest_config() {
        None => None,
        Some(fc) => {
            let forest = train_forest(&train_x, &train_y, &fc).map_err(|e| PipelineError::Data(e.to_string()))?;
            let probs = forest.predict_proba(&test_x).map_err(|e| PipelineError::Data(e.to_string()))?;
            let (cm, m) = evaluate(&probs, &test_y, DEFAULT_THRESHOLD).map_err(|e| PipelineError::Data(e.to_string()))?;
            Some(ModelMetrics::new("random_forest", Split::Test, cm, m))
        }
    };
    Ok(TrainedCondition {
        dataset,
        standardizer,
        params,
        report,
        cnn_test,
        forest_test,
    })
}

/// Configs needed to rebuild the network and features at inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub spectral: SpectralConfig,
    pub cnn: CnnConfig,
}

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const STANDARDIZER_FILE: &str = "standardizer.json";
pub const MODEL_FILE: &str = "model.json";

/// A trained network with its feature pipeline.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub standardizer: Standardizer,
    pub params: CnnParameters,
}

impl Model {
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        create_dir(dir)?;
        cnn::save_weights(&self.params, &self.spec.cnn, dir.join(WEIGHTS_FILE)).map_err(|e| PipelineError::Io {
            path: dir.join(WEIGHTS_FILE),
            source: std::io::Error::other(e.to_string()),
        })?;
        write_json(&dir.join(STANDARDIZER_FILE), &self.standardizer)?;
        write_json(&dir.join(MODEL_FILE), &self.spec)
    }

    /// Loads `model.json`, `standardizer.json` and `weights.bin` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", dir.join(name).display())))
        };
        let spec: ModelSpec = serde_json::from_str(&read(MODEL_FILE)?)
            .map_err(|e| PipelineError::Data(format!("{MODEL_FILE}: {e}")))?;
        let standardizer: Standardizer = serde_json::from_str(&read(STANDARDIZER_FILE)?)
            .map_err(|e| PipelineError::Data(format!("{STANDARDIZER_FILE}: {e}")))?;
        let params = cnn::load_weights(dir.join(WEIGHTS_FILE), &spec.cnn).map_err(|e| PipelineError::Data(e.to_string()))?;
        Ok(Model {
            spec,
            standardizer,
            params,
        })
    }

    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<f64>, PipelineError> {
        let net = Cnn::new(&self.spec.cnn)?;
        Ok(net.predict(&self.params, &self.standardizer.apply(features))?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub metrics: MetricsFile,
    pub condition: TrainedCondition,
}

fn metrics_csv(models: &[ModelMetrics]) -> String {
    let mut out = String::from("model,split,accuracy,precision,recall,f1\n");
    for m in models {
        let _ = writeln!(out, "{},{},{},{},{},{}", m.model, m.split, m.accuracy, m.precision, m.recall, m.f1);
    }
    out
}

fn loss_svg(report: &TrainReport) -> String {
    let train: Vec<(f64, f64)> = report.epochs.iter().map(|e| (e.epoch as f64, e.train_loss)).collect();
    let val: Vec<(f64, f64)> = report.epochs.iter().map(|e| (e.epoch as f64, e.val_loss)).collect();
    plot::line_chart("Training curve", "epoch", "BCE loss", &[("train", train), ("val", val)])
}

fn confusion_svg(cm: &ConfusionMatrix) -> String {
    plot::heatmap(
        "CNN confusion matrix (test)",
        &["cough", "non-cough"],
        &["pred cough", "pred non-cough"],
        &[vec![cm.tp as f64, cm.fn_ as f64], vec![cm.fp as f64, cm.tn as f64]],
    )
}

/// Full run: prepare, augment train coughs, standardize, train, evaluate on
/// test and write `metrics.json`, `metrics.csv`, `confusion.csv`,
/// `train_report.csv`, the model files and two SVG plots.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    let prepared = prepare(cfg)?;
    create_dir(&cfg.out_dir)?;
    let condition = train_condition(cfg, &prepared, &cfg.augment)?;
    let out = &cfg.out_dir;

    let count = |s| condition.dataset.in_split(s).count();
    let mut models = vec![condition.cnn_test.clone()];
    models.extend(condition.forest_test.clone());
    let metrics = MetricsFile {
        seed: cfg.seed,
        activity: cfg.activity,
        counts: SplitCounts {
            train: count(Split::Train),
            train_augmented: condition
                .dataset
                .in_split(Split::Train)
                .filter(|r| r.provenance != crate::augment::Provenance::Original)
                .count(),
            val: count(Split::Val),
            test: count(Split::Test),
            skipped: prepared.skipped,
        },
        training: TrainingSummary {
            best_epoch: condition.report.best_epoch,
            stopped_epoch: condition.report.stopped_epoch,
            stopped_early: condition.report.stopped_early,
            best_val_loss: condition.report.best_val_loss,
        },
        models,
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    write_file(&out.join("metrics.csv"), metrics_csv(&metrics.models))?;
    write_file(&out.join("confusion.csv"), condition.cnn_test.confusion.to_csv())?;
    write_file(&out.join("train_report.csv"), condition.report.to_csv())?;
    write_file(&out.join("loss.svg"), loss_svg(&condition.report))?;
    write_file(&out.join("confusion.svg"), confusion_svg(&condition.cnn_test.confusion))?;
    Model {
        spec: ModelSpec {
            spectral: cfg.spectral.clone(),
            cnn: cfg.cnn_config(),
        },
        standardizer: condition.standardizer.clone(),
        params: condition.params.clone(),
    }
    .save(out)?;
    Ok(RunOutput {
        out_dir: out.clone(),
        metrics,
        condition,
    })
}

/// Writes the split (and optionally augmented) feature table to
/// `dataset.csv` and returns the dataset.
pub fn export_features(cfg: &PipelineConfig, augmented: bool) -> Result<LabeledDataset, PipelineError> {
    let prepared = prepare(cfg)?;
    let mut ds = prepared.dataset;
    if augmented {
        augment_train_coughs(&mut ds, &cfg.augment, &prepared.extractor, cfg.seed)?;
    }
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("dataset.csv"), ds.to_csv())?;
    Ok(ds)
}

/// Writes the augmented versions of the train-split original coughs as WAVs
/// under `out_dir/augmented/` together with `augmented_manifest.csv`, which
/// lists originals and derivatives with `provenance` and `origin` columns.
/// Uses the same seed and clip order as in-memory training augmentation.
pub fn export_augmented(cfg: &PipelineConfig) -> Result<usize, PipelineError> {
    let prepared = prepare(cfg)?;
    let sources: Vec<_> = prepared
        .dataset
        .rows
        .iter()
        .filter(|r| r.label == Label::Cough && r.split == Some(Split::Train) && r.path.is_some())
        .collect();
    if sources.is_empty() {
        return Err(PipelineError::Data("no train cough clips to augment".into()));
    }
    let clips = sources
        .iter()
        .map(|r| crate::features::load_clip(r.path.as_deref().unwrap()))
        .collect::<Result<Vec<_>, _>>()?;
    let expanded = crate::augment::expand_with_plan(&clips, &cfg.augment, cfg.seed)
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    let wav_dir = cfg.out_dir.join("augmented");
    create_dir(&wav_dir)?;
    let mut manifest = String::from("path,label,activity,subject,burst_count,provenance,origin\n");
    for a in &expanded {
        let src = sources[a.origin];
        let path = if a.provenance == crate::augment::Provenance::Original {
            src.path.clone().unwrap()
        } else {
            let stem = Path::new(src.clip_id()).file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
            let rel = PathBuf::from("augmented").join(format!("{stem}_{}.wav", a.provenance));
            audio_io::write_wav(cfg.out_dir.join(&rel), &a.clip).map_err(|e| PipelineError::Io {
                path: cfg.out_dir.join(&rel),
                source: std::io::Error::other(e.to_string()),
            })?;
            rel
        };
        let bursts = src.burst_count.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(
            manifest,
            "{},{},{},{},{bursts},{},{}",
            path.display(),
            src.label,
            src.activity.as_str(),
            src.subject,
            a.provenance,
            src.clip_id()
        );
    }
    write_file(&cfg.out_dir.join("augmented_manifest.csv"), manifest)?;
    Ok(expanded.len())
}

/// Evaluates a saved model on the test split of the configured manifest and
/// writes `eval.json`.
pub fn evaluate_saved(cfg: &PipelineConfig, model_dir: &Path) -> Result<ModelMetrics, PipelineError> {
    let model = Model::load(model_dir)?;
    let cfg = PipelineConfig {
        spectral: model.spec.spectral.clone(),
        cnn: model.spec.cnn.clone(),
        ..cfg.clone()
    };
    let prepared = prepare(&cfg)?;
    let (x, y) = prepared.dataset.xy(Split::Test);
    let probs = model.predict(&x)?;
    let (cm, m) = evaluate(&probs, &y, DEFAULT_THRESHOLD).map_err(|e| PipelineError::Data(e.to_string()))?;
    let metrics = ModelMetrics::new("cnn", Split::Test, cm, m);
    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("eval.json"), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub condition: String,
    pub metrics: ModelMetrics,
    pub train_rows: usize,
}

#[derive(Debug, Clone)]
pub struct AblationOutput {
    pub rows: Vec<AblationRow>,
    pub val_ids: Vec<Vec<String>>,
    pub test_ids: Vec<Vec<String>>,
}

/// The three training-set conditions compared by the ablation.
pub fn ablation_plans(base: &AugmentPlan) -> [(&'static str, AugmentPlan); 3] {
    [
        (
            "original",
            AugmentPlan {
                noise: false,
                interp: false,
                ..base.clone()
            },
        ),
        (
            "noise",
            AugmentPlan {
                noise: true,
                interp: false,
                ..base.clone()
            },
        ),
        (
            "noise_interp",
            AugmentPlan {
                noise: true,
                interp: true,
                ..base.clone()
            },
        ),
    ]
}

/// Trains once per augmentation condition on a shared split and writes
/// `ablation.csv` and `ablation.svg`.
pub fn ablation(cfg: &PipelineConfig) -> Result<AblationOutput, PipelineError> {
    let prepared = prepare(cfg)?;
    create_dir(&cfg.out_dir)?;
    let mut out = AblationOutput {
        rows: Vec::new(),
        val_ids: Vec::new(),
        test_ids: Vec::new(),
    };
    for (name, plan) in ablation_plans(&cfg.augment) {
        log::info!("ablation condition {name}");
        let c = train_condition(cfg, &prepared, &plan)?;
        out.val_ids.push(c.ids(Split::Val));
        out.test_ids.push(c.ids(Split::Test));
        out.rows.push(AblationRow {
            condition: name.into(),
            train_rows: c.dataset.in_split(Split::Train).count(),
            metrics: c.cnn_test,
        });
    }
    let mut csv = String::from("condition,accuracy,precision,recall,f1\n");
    for r in &out.rows {
        let m = &r.metrics;
        let _ = writeln!(csv, "{},{},{},{},{}", r.condition, m.accuracy, m.precision, m.recall, m.f1);
    }
    write_file(&cfg.out_dir.join("ablation.csv"), csv)?;
    write_file(&cfg.out_dir.join("ablation.svg"), ablation_svg(&out.rows))?;
    Ok(out)
}

fn ablation_svg(rows: &[AblationRow]) -> String {
    let names: Vec<&str> = rows.iter().map(|r| r.condition.as_str()).collect();
    let series = vec![
        ("precision", rows.iter().map(|r| r.metrics.precision).collect()),
        ("recall", rows.iter().map(|r| r.metrics.recall).collect()),
        ("f1", rows.iter().map(|r| r.metrics.f1).collect()),
    ];
    plot::bar_chart("Test metrics by augmentation condition", &names, &series)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanWindow {
    pub start_secs: f64,
    pub prob: f64,
    /// Below `min_rms`; `prob` is 0 and the model was not run.
    pub gated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanEvent {
    pub start_secs: f64,
    pub end_secs: f64,
    pub max_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub window_secs: f64,
    pub hop_secs: f64,
    pub threshold: f64,
    pub min_rms: f64,
    pub windows: Vec<ScanWindow>,
    pub events: Vec<ScanEvent>,
}

/// Runs the model over fixed windows of a recording and merges runs of
/// consecutive windows at or above the threshold into events spanning from
/// the first window's start to the last window's end.
pub fn scan_clip(model: &Model, clip: &AudioClip, scan: &ScanConfig) -> Result<ScanResult, PipelineError> {
    scan.validate()?;
    let clip = audio_io::canonicalize(clip.clone()).map_err(|e| PipelineError::Data(e.to_string()))?;
    let rate = clip.sample_rate as f64;
    let win = (scan.window_secs * rate).round() as usize;
    let hop = ((scan.hop_secs * rate).round() as usize).max(1);
    if clip.len() < win {
        return Err(PipelineError::Data(
            FeatureError::ClipTooShort {
                secs: clip.duration_secs(),
            }
            .to_string(),
        ));
    }
    let extractor = FeatureExtractor::new(&model.spec.spectral).map_err(|e| PipelineError::Config(e.to_string()))?;
    let starts: Vec<usize> = (0..=(clip.len() - win) / hop).map(|i| i * hop).collect();
    let gated: Vec<bool> = starts
        .iter()
        .map(|&s| {
            let w = &clip.samples[s..s + win];
            (w.iter().map(|v| v * v).sum::<f64>() / win as f64).sqrt() < scan.min_rms
        })
        .collect();
    let features = starts
        .iter()
        .zip(&gated)
        .filter(|(_, &g)| !g)
        .map(|(&s, _)| extractor.extract(&clip.slice(s, s + win), format!("w{s}")).map(|f| f.values))
        .collect::<Result<Vec<_>, _>>()?;
    let mut probs = if features.is_empty() {
        Vec::new()
    } else {
        model.predict(&features)?
    }
    .into_iter();
    let windows: Vec<ScanWindow> = starts
        .iter()
        .zip(&gated)
        .map(|(&s, &g)| ScanWindow {
            start_secs: s as f64 / rate,
            prob: if g { 0.0 } else { probs.next().expect("one probability per ungated window") },
            gated: g,
        })
        .collect();
    let mut events: Vec<ScanEvent> = Vec::new();
    let mut prev_hit = false;
    for w in &windows {
        let hit = w.prob >= scan.threshold;
        if hit {
            let end = w.start_secs + scan.window_secs;
            match events.last_mut() {
                Some(e) if prev_hit => {
                    e.end_secs = end;
                    e.max_prob = e.max_prob.max(w.prob);
                }
                _ => events.push(ScanEvent {
                    start_secs: w.start_secs,
                    end_secs: end,
                    max_prob: w.prob,
                }),
            }
        }
        prev_hit = hit;
    }
    Ok(ScanResult {
        window_secs: scan.window_secs,
        hop_secs: scan.hop_secs,
        threshold: scan.threshold,
        min_rms: scan.min_rms,
        windows,
        events,
    })
}

/// Scans a WAV file and writes `events.json` into `out_dir`.
pub fn scan_file(model_dir: &Path, wav: &Path, scan: &ScanConfig, out_dir: &Path) -> Result<ScanResult, PipelineError> {
    let model = Model::load(model_dir)?;
    let clip = audio_io::read_wav(wav).map_err(|e| PipelineError::Data(e.to_string()))?;
    let result = scan_clip(&model, &clip, scan)?;
    create_dir(out_dir)?;
    write_json(&out_dir.join("events.json"), &result)?;
    Ok(result)
}

/// Contents of `cluster_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub n_points: usize,
    #[serde(flatten)]
    pub report: ClusterReport,
    /// Best-matching agreement with the manifest's `burst_count` column, when
    /// every clustered row has one.
    pub burst_agreement: Option<f64>,
}

/// Clusters the original cough rows of the manifest.
///
/// Features are standardized with statistics of all original rows (both
/// classes) before the cough rows are selected. Writes the report JSON,
/// elbow and silhouette curves as CSV and SVG, per-cluster counts and the
/// per-cluster mean log-mel spectrogram.
pub fn cluster_command(cfg: &PipelineConfig) -> Result<ClusterOutput, PipelineError> {
    cfg.validate()?;
    let manifest = read_manifest(&cfg.manifest)?;
    let extractor = FeatureExtractor::new(&cfg.spectral).map_err(|e| PipelineError::Config(e.to_string()))?;
    let ds = build_dataset(&manifest, &extractor, cfg.activity)?.dataset;
    let all: Vec<Vec<f64>> = ds.rows.iter().map(|r| r.features.values.clone()).collect();
    if all.len() < 2 {
        return Err(PipelineError::Data("dataset has fewer than two rows".into()));
    }
    let st = Standardizer::fit(&all);
    let coughs: Vec<_> = ds.rows.iter().filter(|r| r.label == Label::Cough).collect();
    if coughs.len() < MIN_CLUSTER_ROWS {
        return Err(PipelineError::Data(
            ClusterError::TooFewPoints {
                n: coughs.len(),
                k: MIN_CLUSTER_ROWS,
            }
            .to_string(),
        ));
    }
    let points: Vec<Vec<f64>> = coughs.iter().map(|r| st.transform(&r.features.values)).collect();
    let ids: Vec<String> = coughs.iter().map(|r| r.clip_id().to_string()).collect();
    let report = select_k(&points, &ids, cfg.seed, &cfg.cluster).map_err(|e| PipelineError::Data(e.to_string()))?;
    let assignments: Vec<usize> = ids.iter().map(|i| report.assignments[i]).collect();
    let burst_agreement = coughs
        .iter()
        .map(|r| r.burst_count.map(u32::from))
        .collect::<Option<Vec<u32>>>()
        .map(|truth| matching_agreement(&assignments, &truth));
    let output = ClusterOutput {
        n_points: points.len(),
        report,
        burst_agreement,
    };

    let out = &cfg.out_dir;
    create_dir(out)?;
    write_json(&out.join("cluster_report.json"), &output)?;
    let r = &output.report;
    let mut elbow = String::from("k,wcss\n");
    for (k, w) in &r.wcss_curve {
        let _ = writeln!(elbow, "{k},{w}");
    }
    let mut sil = String::from("k,silhouette\n");
    for (k, s) in &r.silhouette_curve {
        let _ = writeln!(sil, "{k},{s}");
    }
    let mut counts = String::from("cluster,count\n");
    for (c, n) in r.cluster_counts.iter().enumerate() {
        let _ = writeln!(counts, "{c},{n}");
    }
    write_file(&out.join("elbow.csv"), elbow)?;
    write_file(&out.join("silhouette.csv"), sil)?;
    write_file(&out.join("cluster_counts.csv"), counts)?;
    write_file(&out.join("elbow.svg"), elbow_svg(&r.wcss_curve))?;
    write_file(&out.join("silhouette.svg"), silhouette_svg(&r.silhouette_curve))?;

    let paths: Vec<PathBuf> = coughs.iter().filter_map(|r| r.path.clone()).collect();
    if paths.len() == coughs.len() {
        let mel = cluster_mean_mel(&extractor, &paths, &assignments, r.k_selected)?;
        write_file(&out.join("cluster_mel.csv"), mel)?;
    }
    Ok(output)
}

fn elbow_svg(curve: &[(usize, f64)]) -> String {
    let pts = curve.iter().map(|&(k, w)| (k as f64, w)).collect();
    plot::line_chart("Elbow curve", "k", "WCSS", &[("wcss", pts)])
}

fn silhouette_svg(curve: &[(usize, f64)]) -> String {
    let pts = curve.iter().map(|&(k, s)| (k as f64, s)).collect();
    plot::line_chart("Mean silhouette", "k", "silhouette", &[("silhouette", pts)])
}

/// Mean log-mel spectrogram per cluster, truncated to the shortest member.
fn cluster_mean_mel(
    extractor: &FeatureExtractor,
    paths: &[PathBuf],
    assignments: &[usize],
    k: usize,
) -> Result<String, PipelineError> {
    use rayon::prelude::*;
    let mels = paths
        .par_iter()
        .map(|p| {
            let clip = crate::features::load_clip(p)?;
            extractor.analyzer().log_mel(&clip).map_err(FeatureError::from)
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;
    let n_mels = extractor.analyzer().config().n_mels;
    let mut out = String::from("cluster,frame");
    for b in 0..n_mels {
        let _ = write!(out, ",mel_{b}");
    }
    out.push('\n');
    for c in 0..k {
        let members: Vec<_> = mels.iter().zip(assignments).filter(|(_, &a)| a == c).map(|(m, _)| m).collect();
        let Some(frames) = members.iter().map(|m| m.n_frames).min() else {
            continue;
        };
        for f in 0..frames {
            let _ = write!(out, "{c},{f}");
            for b in 0..n_mels {
                let mean = members.iter().map(|m| m.row(f)[b]).sum::<f64>() / members.len() as f64;
                let _ = write!(out, ",{mean}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn read_csv_rows(path: &Path) -> Result<Option<Vec<csv::StringRecord>>, PipelineError> {
    if !path.exists() {
        return Ok(None);
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    let rows = rdr
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    Ok(Some(rows))
}

fn num(rec: &csv::StringRecord, i: usize) -> f64 {
    rec.get(i).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)
}

/// Regenerates SVG plots from whichever CSV outputs exist in `dir`.
/// Returns the files written.
pub fn render_reports(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut written = BTreeSet::new();
    if let Some(rows) = read_csv_rows(&dir.join("train_report.csv"))? {
        let train = rows.iter().map(|r| (num(r, 0), num(r, 1))).collect();
        let val = rows.iter().map(|r| (num(r, 0), num(r, 2))).collect();
        let svg = plot::line_chart("Training curve", "epoch", "BCE loss", &[("train", train), ("val", val)]);
        write_file(&dir.join("loss.svg"), svg)?;
        written.insert(dir.join("loss.svg"));
    }
    if let Some(rows) = read_csv_rows(&dir.join("confusion.csv"))? {
        if rows.len() == 2 {
            let cells: Vec<Vec<f64>> = rows.iter().map(|r| vec![num(r, 1), num(r, 2)]).collect();
            let svg = plot::heatmap(
                "CNN confusion matrix (test)",
                &["cough", "non-cough"],
                &["pred cough", "pred non-cough"],
                &cells,
            );
            write_file(&dir.join("confusion.svg"), svg)?;
            written.insert(dir.join("confusion.svg"));
        }
    }
    if let Some(rows) = read_csv_rows(&dir.join("ablation.csv"))? {
        let names: Vec<String> = rows.iter().map(|r| r.get(0).unwrap_or("").to_string()).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let series = vec![
            ("precision", rows.iter().map(|r| num(r, 2)).collect()),
            ("recall", rows.iter().map(|r| num(r, 3)).collect()),
            ("f1", rows.iter().map(|r| num(r, 4)).collect()),
        ];
        write_file(
            &dir.join("ablation.svg"),
            plot::bar_chart("Test metrics by augmentation condition", &refs, &series),
        )?;
        written.insert(dir.join("ablation.svg"));
    }
    for (csv_name, svg_name) in [("elbow.csv", "elbow.svg"), ("silhouette.csv", "silhouette.svg")] {
        if let Some(rows) = read_csv_rows(&dir.join(csv_name))? {
            let curve: Vec<(usize, f64)> = rows.iter().map(|r| (num(r, 0) as usize, num(r, 1))).collect();
            let svg = if csv_name == "elbow.csv" {
                elbow_svg(&curve)
            } else {
                silhouette_svg(&curve)
            };
            write_file(&dir.join(svg_name), svg)?;
            written.insert(dir.join(svg_name));
        }
    }
    Ok(written.into_iter().collect())
}
