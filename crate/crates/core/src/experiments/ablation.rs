//! The model × augmentation × autoencoder × split × seed grid.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{prepare, train_and_report, ExperimentConfig, ExperimentError, ExperimentReport, SplitKind};
use crate::classifiers::ModelKind;
use crate::preprocess::{preprocess_dataset, ResampledSequence};
use crate::sensor_data::Dataset;

/// Which seeds and models [`run_ablation`] covers. An empty seed list means
/// the experiment seed alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub seeds: Vec<u64>,
    pub models: Vec<ModelKind>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            seeds: Vec::new(),
            models: ModelKind::ALL.to_vec(),
        }
    }
}

/// One run of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub model: ModelKind,
    pub split: SplitKind,
    pub aug: bool,
    pub ae: bool,
    pub seed: u64,
    pub outcome: Result<ExperimentReport, String>,
}

impl AblationCell {
    /// File-name friendly identifier, e.g. `cnn_random_aug-on_ae-off_s3`.
    pub fn slug(&self) -> String {
        format!(
            "{}_{}_aug-{}_ae-{}_s{}",
            self.model,
            self.split,
            on_off(self.aug),
            on_off(self.ae),
            self.seed
        )
    }
}

pub(crate) fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Seed-averaged accuracies of one grid configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub model: ModelKind,
    pub split: SplitKind,
    pub aug: bool,
    pub ae: bool,
    /// `None` when every seed failed.
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub base: ExperimentConfig,
    pub cells: Vec<AblationCell>,
}

/// Deep models get all four augmentation/autoencoder combinations; KNN and
/// SVM run on plain rows.
fn variants(model: ModelKind) -> &'static [(bool, bool)] {
    if model.is_deep() {
        &[(false, false), (true, false), (false, true), (true, true)]
    } else {
        &[(false, false)]
    }
}

impl AblationTable {
    pub fn rows(&self) -> Vec<AblationRow> {
        let mut out = Vec::new();
        for &model in &self.base.ablation.models {
            for split in SplitKind::ALL {
                for &(aug, ae) in variants(model) {
                    let runs: Vec<&AblationCell> = self
                        .cells
                        .iter()
                        .filter(|c| c.model == model && c.split == split && c.aug == aug && c.ae == ae)
                        .collect();
                    let ok: Vec<&ExperimentReport> = runs.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
                    let mean = |f: fn(&ExperimentReport) -> f64| {
                        (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64)
                    };
                    out.push(AblationRow {
                        model,
                        split,
                        aug,
                        ae,
                        train_acc: mean(|r| r.accuracies.train),
                        test_acc: mean(|r| r.accuracies.test),
                        succeeded: ok.len(),
                        failed: runs.len() - ok.len(),
                    });
                }
            }
        }
        out
    }

    /// Seed-mean test accuracy of one configuration.
    pub fn mean_test(&self, model: ModelKind, split: SplitKind, aug: bool, ae: bool) -> Option<f64> {
        self.rows()
            .into_iter()
            .find(|r| r.model == model && r.split == split && r.aug == aug && r.ae == ae)
            .and_then(|r| r.test_acc)
    }

    pub fn any_succeeded(&self) -> bool {
        self.cells.iter().any(|c| c.outcome.is_ok())
    }

    /// Rows of the overall comparison: baselines, then each network plain,
    /// with augmentation, and with augmentation plus denoising.
    pub fn overall_rows(&self) -> Vec<(String, ModelKind, bool, bool)> {
        let mut out = Vec::new();
        for &m in &self.base.ablation.models {
            match m {
                ModelKind::Knn => out.push((format!("KNN(K={})", self.base.models.knn.k), m, false, false)),
                ModelKind::Svm => out.push(("SVM".into(), m, false, false)),
                ModelKind::Cnn | ModelKind::Rnn => {
                    let name = m.name().to_uppercase();
                    out.push((name.clone(), m, false, false));
                    out.push((format!("{name}(aug)"), m, true, false));
                    out.push((format!("{name}(aug+AE)"), m, true, true));
                }
            }
        }
        out
    }
}

/// Runs the grid on `data`. Preprocessing happens once; each (seed, split,
/// augmentation, autoencoder) preparation is shared by every model that
/// needs it. Cell reports equal what [`super::run_experiment`] returns for
/// the cell's configuration with `record_runtime` off. Failures are kept
/// per cell.
pub fn run_ablation(base: &ExperimentConfig, data: &Dataset) -> Result<AblationTable, ExperimentError> {
    base.validate()?;
    let rows = preprocess_dataset(data, base.n_features, base.preprocess)?;
    run_ablation_rows(base, &rows)
}

pub fn run_ablation_rows(base: &ExperimentConfig, rows: &[ResampledSequence]) -> Result<AblationTable, ExperimentError> {
    base.validate()?;
    if base.ablation.models.is_empty() {
        return Err(ExperimentError::Config("ablation.models is empty".into()));
    }
    let seeds = if base.ablation.seeds.is_empty() {
        vec![base.seed]
    } else {
        base.ablation.seeds.clone()
    };
    let mut cells = Vec::new();
    for &seed in &seeds {
        for split in SplitKind::ALL {
            for (aug, ae) in [(false, false), (true, false), (false, true), (true, true)] {
                let models: Vec<ModelKind> = base
                    .ablation
                    .models
                    .iter()
                    .copied()
                    .filter(|&m| variants(m).contains(&(aug, ae)))
                    .collect();
                if models.is_empty() {
                    continue;
                }
                let cfg_for = |model: ModelKind| {
                    let mut c = base.clone();
                    c.model = model;
                    c.seed = seed;
                    c.split.kind = split;
                    c.augment = aug.then(|| base.augment.clone().unwrap_or_default());
                    c.autoencoder = ae.then(|| base.autoencoder.clone().unwrap_or_default());
                    c.record_runtime = false;
                    c
                };
                let started = Instant::now();
                log::info!("ablation: seed {seed}, {split} split, aug {}, ae {}", on_off(aug), on_off(ae));
                let prepared = prepare(&cfg_for(models[0]), rows);
                for model in models {
                    let cfg = cfg_for(model);
                    let outcome = match &prepared {
                        Ok(p) => train_and_report(&cfg, p, started).map(|o| o.report).map_err(|e| e.to_string()),
                        Err(e) => Err(e.to_string()),
                    };
                    match &outcome {
                        Ok(r) => log::info!("  {model}: test {:.4}", r.accuracies.test),
                        Err(e) => log::warn!("  {model} failed: {e}"),
                    }
                    cells.push(AblationCell {
                        model,
                        split,
                        aug,
                        ae,
                        seed,
                        outcome,
                    });
                }
            }
        }
    }
    cells.sort_by_key(|c| (c.model, c.split, c.aug, c.ae, c.seed));
    Ok(AblationTable {
        base: base.clone(),
        cells,
    })
}
