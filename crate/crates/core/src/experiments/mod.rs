//! Train/dev/test splits, the end-to-end experiment harness, the leakage
//! audit, the ablation grid and report files.
//!
//! One experiment runs preprocess → split → augment (train only) → fit the
//! channel autoencoders on train and denoise every partition → train the
//! classifier (which standardizes from its training rows) → evaluate.

mod ablation;
mod audit;
mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_dataset, AugmentConfig, AugmentError};
use crate::autoencoder::{denoise_dataset, AutoencoderConfig, AutoencoderError, ChannelAutoencoders};
use crate::classifiers::{self, ClassifierError, EpochPoint, ModelConfig, ModelKind, TrainedModel};
use crate::preprocess::{preprocess_dataset, PreprocessConfig, PreprocessError, ResampledSequence, DEFAULT_FEATURES};
use crate::seed;
use crate::sensor_data::{Dataset, Label, NUM_CLASSES};

pub use ablation::{run_ablation, run_ablation_rows, AblationCell, AblationRow, AblationSpec, AblationTable};
pub use audit::{audit, AuditCheck, LeakageAudit};
pub use report::{curves_svg, emit_report, emit_table};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("preprocess: {0}")]
    Preprocess(#[from] PreprocessError),
    #[error("split: {0}")]
    Split(String),
    #[error("augment: {0}")]
    Augment(#[from] AugmentError),
    #[error("autoencoder: {0}")]
    Autoencoder(#[from] AutoencoderError),
    #[error("train: {0}")]
    Classifier(#[from] ClassifierError),
    #[error("evaluate: {0}")]
    Evaluate(String),
    #[error("leakage audit failed: {0}")]
    Leakage(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Random,
    Subject,
}

impl SplitKind {
    pub const ALL: [SplitKind; 2] = [SplitKind::Random, SplitKind::Subject];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Random => "random",
            SplitKind::Subject => "subject",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SplitKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown split {s:?} (expected random or subject)"))
    }
}

/// How rows are divided. The shuffle seed is derived from the experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// Train/dev/test percentages for the random split.
    pub ratios: [u32; 3],
    pub n_dev_subjects: usize,
    pub n_test_subjects: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            kind: SplitKind::Random,
            ratios: [80, 10, 10],
            n_dev_subjects: 2,
            n_test_subjects: 2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.ratios.iter().sum::<u32>() != 100 || self.ratios.contains(&0) {
            return Err(ExperimentError::Config(format!(
                "split.ratios {:?} must be positive and sum to 100",
                self.ratios
            )));
        }
        if self.n_dev_subjects == 0 || self.n_test_subjects == 0 {
            return Err(ExperimentError::Config(
                "split.n_dev_subjects and split.n_test_subjects must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Shuffles `rows` and cuts them into train/dev/test. Dev and test sizes are
/// the rounded proportions; train takes the rest. Each partition keeps the
/// input order.
pub fn random_split<T: Clone>(
    rows: &[T],
    ratios: [u32; 3],
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), ExperimentError> {
    let n = rows.len();
    if n < 10 {
        return Err(ExperimentError::Split(format!("random split needs at least 10 rows, got {n}")));
    }
    let total = f64::from(ratios.iter().sum::<u32>());
    let n_dev = (n as f64 * f64::from(ratios[1]) / total).round() as usize;
    let n_test = (n as f64 * f64::from(ratios[2]) / total).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let take = |idx: &mut [usize]| -> Vec<T> {
        idx.sort_unstable();
        idx.iter().map(|&i| rows[i].clone()).collect()
    };
    let (dev, rest) = order.split_at_mut(n_dev);
    let (test, train) = rest.split_at_mut(n_test);
    Ok((take(train), take(dev), take(test)))
}

/// Assigns `n_dev` randomly chosen subjects to dev, the next `n_test` to
/// test and everyone else to train.
pub fn subject_split(
    rows: &[ResampledSequence],
    n_dev: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<ResampledSequence>, Vec<ResampledSequence>, Vec<ResampledSequence>), ExperimentError> {
    let mut subjects: Vec<&str> = rows
        .iter()
        .map(|r| r.subject_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if subjects.len() < n_dev + n_test + 1 {
        return Err(ExperimentError::Split(format!(
            "subject split needs at least {} subjects, got {}",
            n_dev + n_test + 1,
            subjects.len()
        )));
    }
    subjects.shuffle(&mut seed::rng(seed));
    let dev: BTreeSet<&str> = subjects[..n_dev].iter().copied().collect();
    let test: BTreeSet<&str> = subjects[n_dev..n_dev + n_test].iter().copied().collect();
    let (mut tr, mut dv, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for r in rows {
        let s = r.subject_id.as_str();
        if dev.contains(s) {
            dv.push(r.clone());
        } else if test.contains(s) {
            te.push(r.clone());
        } else {
            tr.push(r.clone());
        }
    }
    Ok((tr, dv, te))
}

pub fn split(
    rows: &[ResampledSequence],
    spec: &SplitSpec,
    seed: u64,
) -> Result<(Vec<ResampledSequence>, Vec<ResampledSequence>, Vec<ResampledSequence>), ExperimentError> {
    spec.validate()?;
    match spec.kind {
        SplitKind::Random => random_split(rows, spec.ratios, seed),
        SplitKind::Subject => subject_split(rows, spec.n_dev_subjects, spec.n_test_subjects, seed),
    }
}

/// Accuracy and a 26×26 confusion matrix, rows indexed by the true label.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl Evaluation {
    pub fn from_predictions(truth: &[Label], pred: &[Label]) -> Result<Self, ExperimentError> {
        if truth.is_empty() {
            return Err(ExperimentError::Evaluate("empty evaluation set".into()));
        }
        if truth.len() != pred.len() {
            return Err(ExperimentError::Evaluate(format!(
                "{} labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut confusion = vec![vec![0u64; NUM_CLASSES]; NUM_CLASSES];
        for (t, p) in truth.iter().zip(pred) {
            confusion[t.index()][p.index()] += 1;
        }
        let hits: u64 = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
        Ok(Evaluation {
            accuracy: hits as f64 / truth.len() as f64,
            confusion,
        })
    }
}

pub fn evaluate(model: &TrainedModel, rows: &[ResampledSequence]) -> Result<Evaluation, ExperimentError> {
    if rows.is_empty() {
        return Err(ExperimentError::Evaluate("empty evaluation set".into()));
    }
    let pred = model.predict_rows(rows)?;
    let truth: Vec<Label> = rows.iter().map(|r| r.label).collect();
    Evaluation::from_predictions(&truth, &pred)
}

/// Everything one experiment needs. Absent `augment` or `autoencoder`
/// switches that stage off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub split: SplitSpec,
    /// Resampled length N.
    pub n_features: usize,
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    /// Its `seed` selects a substream of the experiment seed.
    pub augment: Option<AugmentConfig>,
    pub autoencoder: Option<AutoencoderConfig>,
    pub models: ModelConfig,
    /// Store wall-clock seconds in the report. Off makes reports byte-reproducible.
    pub record_runtime: bool,
    pub ablation: AblationSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Knn,
            split: SplitSpec::default(),
            n_features: DEFAULT_FEATURES,
            seed: 0,
            preprocess: PreprocessConfig::default(),
            augment: None,
            autoencoder: None,
            models: ModelConfig::default(),
            record_runtime: true,
            ablation: AblationSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n_features < 2 {
            return Err(ExperimentError::Config(format!(
                "n_features = {} must be at least 2",
                self.n_features
            )));
        }
        self.split.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if let Some(ae) = &self.autoencoder {
            if ae.batch_size == 0 {
                return Err(ExperimentError::Config("autoencoder.batch_size must be at least 1".into()));
            }
            if ae.widths.contains(&0) {
                return Err(ExperimentError::Config("autoencoder.widths must be positive".into()));
            }
        }
        Ok(())
    }

    /// Differences from the defaults in everything this run uses: the
    /// resample length, the enabled stages and the selected model, as
    /// `section.key = value (default d)` strings.
    pub fn model_overrides(&self) -> Vec<String> {
        fn diff<T: Serialize>(section: &str, ours: &T, base: &T, out: &mut Vec<String>) {
            let (a, b) = (
                serde_json::to_value(ours).expect("config serializes"),
                serde_json::to_value(base).expect("config serializes"),
            );
            if let (Some(a), Some(b)) = (a.as_object(), b.as_object()) {
                for (k, v) in a {
                    if b.get(k) != Some(v) {
                        out.push(format!("{section}.{k} = {v} (default {})", b[k]));
                    }
                }
            }
        }
        let mut out = Vec::new();
        if self.n_features != DEFAULT_FEATURES {
            out.push(format!("n_features = {} (default {DEFAULT_FEATURES})", self.n_features));
        }
        if let Some(a) = &self.augment {
            diff("augment", a, &AugmentConfig::default(), &mut out);
        }
        if let Some(ae) = &self.autoencoder {
            diff("autoencoder", ae, &AutoencoderConfig::default(), &mut out);
        }
        let (ours, base) = (
            serde_json::to_value(&self.models).expect("config serializes"),
            serde_json::to_value(ModelConfig::default()).expect("config serializes"),
        );
        let name = self.model.name();
        diff(name, &ours[name], &base[name], &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    /// Training rows before augmentation.
    pub train: usize,
    /// Rows the classifier was fitted on.
    pub train_fitted: usize,
    pub dev: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub accuracies: Accuracies,
    /// Test-set confusion, `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub curves: Vec<EpochPoint>,
    pub runtime_s: Option<f64>,
    pub counts: RowCounts,
    /// Final-epoch reconstruction MSE of the yaw, pitch and roll models.
    pub autoencoder_loss: Option<[f64; 3]>,
    pub notes: Vec<String>,
    pub audit: LeakageAudit,
}

/// Partitions after augmentation and denoising, plus what was fitted on them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: SplitKind,
    /// The training partition as split, before augmentation.
    pub train_original: Vec<ResampledSequence>,
    /// After augmentation, before denoising. The autoencoders are fitted on these rows.
    pub train_augmented: Vec<ResampledSequence>,
    pub train: Vec<ResampledSequence>,
    pub dev: Vec<ResampledSequence>,
    pub test: Vec<ResampledSequence>,
    pub autoencoders: Option<ChannelAutoencoders>,
}

/// Split, augment and denoise preprocessed rows as `cfg` asks.
pub fn prepare(cfg: &ExperimentConfig, rows: &[ResampledSequence]) -> Result<Prepared, ExperimentError> {
    let (train_original, dev, test) = split(rows, &cfg.split, seed::derive(cfg.seed, "split"))?;
    let train_augmented = match &cfg.augment {
        Some(a) => {
            let mut a = a.clone();
            a.seed = seed::derive_indexed(cfg.seed, "augment", a.seed);
            augment_dataset(&train_original, &a)?
        }
        None => train_original.clone(),
    };
    let (train, dev, test, autoencoders) = match &cfg.autoencoder {
        Some(ae_cfg) => {
            let aes = ChannelAutoencoders::fit(&train_augmented, ae_cfg, seed::derive(cfg.seed, "autoencoder"))?;
            let train = denoise_dataset(&train_augmented, &aes)?;
            let dev = denoise_dataset(&dev, &aes)?;
            let test = denoise_dataset(&test, &aes)?;
            (train, dev, test, Some(aes))
        }
        None => (train_augmented.clone(), dev, test, None),
    };
    Ok(Prepared {
        split: cfg.split.kind,
        train_original,
        train_augmented,
        train,
        dev,
        test,
        autoencoders,
    })
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub model: TrainedModel,
    pub autoencoders: Option<ChannelAutoencoders>,
}

/// Trains and evaluates `cfg.model` on prepared partitions.
pub fn train_and_report(
    cfg: &ExperimentConfig,
    p: &Prepared,
    started: Instant,
) -> Result<ExperimentOutcome, ExperimentError> {
    let (model, curves) = classifiers::train(cfg.model, &cfg.models, &p.train, &p.dev, seed::derive(cfg.seed, "model"))?;
    let originals: Vec<ResampledSequence> = p.train.iter().filter(|r| !r.is_augmented()).cloned().collect();
    let train_eval = evaluate(&model, &originals)?;
    let dev_eval = evaluate(&model, &p.dev)?;
    let test_eval = evaluate(&model, &p.test)?;

    let audit = audit(p, &model);
    if !audit.passed {
        return Err(ExperimentError::Leakage(audit.failures().join("; ")));
    }

    let mut notes = vec!["train accuracy is measured on the non-augmented training rows".to_string()];
    if cfg.model == ModelKind::Knn {
        notes.push("knn train accuracy is leave-self-in: each training row is its own nearest neighbour".into());
    }
    if cfg.augment.is_some() {
        notes.push("augmentation applied to the training partition only".into());
    }
    if cfg.autoencoder.is_some() {
        notes.push(format!(
            "autoencoders fitted on the {} training partition and applied to all partitions",
            if cfg.augment.is_some() { "augmented" } else { "original" }
        ));
    }
    notes.extend(cfg.model_overrides().into_iter().map(|o| format!("changed from default: {o}")));

    let report = ExperimentReport {
        config: cfg.clone(),
        accuracies: Accuracies {
            train: train_eval.accuracy,
            dev: dev_eval.accuracy,
            test: test_eval.accuracy,
        },
        confusion: test_eval.confusion,
        curves,
        runtime_s: cfg.record_runtime.then(|| started.elapsed().as_secs_f64()),
        counts: RowCounts {
            train: p.train_original.len(),
            train_fitted: p.train.len(),
            dev: p.dev.len(),
            test: p.test.len(),
        },
        autoencoder_loss: p
            .autoencoders
            .as_ref()
            .map(|a| std::array::from_fn(|c| a.curves[c].last().copied().unwrap_or(f64::NAN))),
        notes,
        audit,
    };
    Ok(ExperimentOutcome {
        report,
        model,
        autoencoders: p.autoencoders.clone(),
    })
}

/// Runs one experiment on already preprocessed rows.
pub fn run_experiment_rows(
    cfg: &ExperimentConfig,
    rows: &[ResampledSequence],
) -> Result<ExperimentOutcome, ExperimentError> {
    let started = Instant::now();
    cfg.validate()?;
    let p = prepare(cfg, rows)?;
    train_and_report(cfg, &p, started)
}

pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentOutcome, ExperimentError> {
    let started = Instant::now();
    cfg.validate()?;
    let rows = preprocess_dataset(data, cfg.n_features, cfg.preprocess)?;
    let p = prepare(cfg, &rows)?;
    train_and_report(cfg, &p, started)
}

#[cfg(test)]
mod tests;
