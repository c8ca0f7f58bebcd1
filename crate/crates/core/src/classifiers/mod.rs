//! KNN, one-vs-all SVM, CNN and LSTM classifiers behind one interface.
//!
//! Every model owns the standardization it was fitted with, so
//! [`TrainedModel::predict_rows`] takes raw resampled rows.

mod cnn;
mod knn;
mod rnn;
mod standardize;
mod svm;
mod trainer;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NnError;
use crate::preprocess::ResampledSequence;
use crate::sensor_data::Label;

pub use cnn::{CnnConfig, CnnModel};
pub use knn::{euclidean, KnnConfig, KnnModel};
pub use rnn::{RnnConfig, RnnModel, NUM_LAYERS};
pub use standardize::Standardizer;
pub use svm::{argmax_label, SvmConfig, SvmModel};
pub use trainer::EpochPoint;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("no training rows")]
    Empty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Svm,
    Cnn,
    Rnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Knn, ModelKind::Svm, ModelKind::Cnn, ModelKind::Rnn];

    /// CNN and RNN; the ones augmentation and denoising are ablated for.
    pub fn is_deep(self) -> bool {
        matches!(self, ModelKind::Cnn | ModelKind::Rnn)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::Svm => "svm",
            ModelKind::Cnn => "cnn",
            ModelKind::Rnn => "rnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model {s:?} (expected knn, svm, cnn or rnn)"))
    }
}

/// Hyperparameters for every model; only the selected one is used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub knn: KnnConfig,
    pub svm: SvmConfig,
    pub cnn: CnnConfig,
    pub rnn: RnnConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Knn(KnnModel),
    Svm(SvmModel),
    Cnn(CnnModel),
    Rnn(RnnModel),
}

/// Fits `kind` on `train`. `dev` is only evaluated for learning curves.
/// Returns the model and its per-epoch curve (empty for KNN and SVM).
pub fn train(
    kind: ModelKind,
    cfg: &ModelConfig,
    train: &[ResampledSequence],
    dev: &[ResampledSequence],
    seed: u64,
) -> Result<(TrainedModel, Vec<EpochPoint>), ClassifierError> {
    if train.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let n = train[0].n_features();
    if let Some(r) = train.iter().chain(dev).find(|r| r.n_features() != n) {
        return Err(ClassifierError::Shape(format!(
            "row {} has {} steps, expected {n}",
            r.sequence_id,
            r.n_features()
        )));
    }
    Ok(match kind {
        ModelKind::Knn => (TrainedModel::Knn(KnnModel::fit(train, &cfg.knn)?), Vec::new()),
        ModelKind::Svm => (TrainedModel::Svm(SvmModel::fit(train, &cfg.svm, seed)?), Vec::new()),
        ModelKind::Cnn => {
            let (m, c) = CnnModel::fit(train, dev, &cfg.cnn, seed)?;
            (TrainedModel::Cnn(m), c)
        }
        ModelKind::Rnn => {
            let (m, c) = RnnModel::fit(train, dev, &cfg.rnn, seed)?;
            (TrainedModel::Rnn(m), c)
        }
    })
}

/// The standardization [`train`] fits for `kind`: per flattened dimension
/// for KNN and SVM, per rotation channel for the networks.
pub fn fit_standardizer(kind: ModelKind, rows: &[ResampledSequence]) -> Standardizer {
    if kind.is_deep() {
        Standardizer::fit_per_channel(rows)
    } else {
        Standardizer::fit_per_dimension(rows)
    }
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Knn(_) => ModelKind::Knn,
            TrainedModel::Svm(_) => ModelKind::Svm,
            TrainedModel::Cnn(_) => ModelKind::Cnn,
            TrainedModel::Rnn(_) => ModelKind::Rnn,
        }
    }

    /// The feature standardization the model was fitted with.
    pub fn standardizer(&self) -> &Standardizer {
        match self {
            TrainedModel::Knn(m) => &m.standardizer,
            TrainedModel::Svm(m) => &m.standardizer,
            TrainedModel::Cnn(m) => &m.standardizer,
            TrainedModel::Rnn(m) => &m.standardizer,
        }
    }

    pub fn predict(&self, row: &ResampledSequence) -> Result<Label, ClassifierError> {
        Ok(self.predict_rows(std::slice::from_ref(row))?[0])
    }

    pub fn predict_rows(&self, rows: &[ResampledSequence]) -> Result<Vec<Label>, ClassifierError> {
        match self {
            TrainedModel::Knn(m) => rows.par_iter().map(|r| m.predict(r)).collect(),
            TrainedModel::Svm(m) => rows.par_iter().map(|r| m.predict(r)).collect(),
            TrainedModel::Cnn(m) => m.predict_rows(rows),
            TrainedModel::Rnn(m) => m.predict_rows(rows),
        }
    }

    /// Writes the model files into `dir`.
    pub fn save(&self, dir: &Path, cfg: &ModelConfig) -> Result<(), ClassifierError> {
        match self {
            TrainedModel::Knn(m) => save_knn(m, dir),
            TrainedModel::Svm(m) => m.save(dir),
            TrainedModel::Cnn(m) => m.save(dir, &cfg.cnn),
            TrainedModel::Rnn(m) => m.save(dir, &cfg.rnn),
        }
    }

    pub fn load(kind: ModelKind, dir: &Path) -> Result<Self, ClassifierError> {
        Ok(match kind {
            ModelKind::Knn => TrainedModel::Knn(load_knn(dir)?),
            ModelKind::Svm => TrainedModel::Svm(SvmModel::load(dir)?),
            ModelKind::Cnn => TrainedModel::Cnn(CnnModel::load(dir)?),
            ModelKind::Rnn => TrainedModel::Rnn(RnnModel::load(dir)?),
        })
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), ClassifierError> {
    fs::write(path, text).map_err(|e| ClassifierError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn read_file(path: &Path) -> Result<String, ClassifierError> {
    fs::read_to_string(path).map_err(|e| ClassifierError::Io(format!("{}: {e}", path.display())))
}

/// `knn.json` carries `k` and the standardizer; `knn.csv` holds the
/// standardized training vectors as `label,x0,x1,...`.
fn save_knn(m: &KnnModel, dir: &Path) -> Result<(), ClassifierError> {
    let side = serde_json::json!({ "arch": "knn", "k": m.k, "standardizer": m.standardizer });
    write_file(&dir.join("knn.json"), &serde_json::to_string_pretty(&side).unwrap())?;
    let mut csv = String::new();
    for (x, y) in m.train_x.iter().zip(&m.train_y) {
        csv.push(y.letter());
        for v in x {
            csv.push_str(&format!(",{v:?}"));
        }
        csv.push('\n');
    }
    write_file(&dir.join("knn.csv"), &csv)
}

fn load_knn(dir: &Path) -> Result<KnnModel, ClassifierError> {
    let side: serde_json::Value = serde_json::from_str(&read_file(&dir.join("knn.json"))?)
        .map_err(|e| ClassifierError::Io(format!("knn.json: {e}")))?;
    let k = side["k"].as_u64().ok_or_else(|| ClassifierError::Io("knn.json: bad k".into()))? as usize;
    let standardizer = serde_json::from_value(side["standardizer"].clone())
        .map_err(|_| ClassifierError::Io("knn.json: bad standardizer".into()))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, line) in read_file(&dir.join("knn.csv"))?.lines().enumerate() {
        let bad = |r: String| ClassifierError::Io(format!("knn.csv line {}: {r}", i + 1));
        let mut fields = line.split(',');
        y.push(Label::from_str_label(fields.next().unwrap_or_default()).map_err(|e| bad(e.to_string()))?);
        x.push(
            fields
                .map(|f| f.parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let mut m = KnnModel::new(x, y, k)?;
    m.standardizer = standardizer;
    Ok(m)
}
