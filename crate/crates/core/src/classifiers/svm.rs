//! One-vs-all kernel SVMs trained with kernelized Pegasos.
//!
//! Each binary machine minimizes `λ/2‖w‖² + mean hinge loss` in the feature
//! space of `K'(u, v) = (u·v / dim + c0)^d + 1`; the constant term acts as
//! the bias. At step `t` a training index `i`
//! is drawn and, if `y_i f_t(x_i) < 1` with `f_t = (1/λt) Σ α_j y_j K'(x_j, ·)`,
//! its count `α_i` is incremented.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, Standardizer};
use crate::nn::gemm;
use crate::preprocess::ResampledSequence;
use crate::sensor_data::{Label, NUM_CLASSES};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub degree: i32,
    pub coef0: f64,
    pub lambda: f64,
    pub iterations: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            degree: 3,
            coef0: 1.0,
            lambda: 1e-4,
            iterations: 40_000,
        }
    }
}

impl SvmConfig {
    fn kernel_from_dot(&self, dot: f64, dim: usize) -> f64 {
        (dot / dim as f64 + self.coef0).powi(self.degree) + 1.0
    }

    pub fn kernel(&self, u: &[f64], v: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        self.kernel_from_dot(dot, u.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub config: SvmConfig,
    pub standardizer: Standardizer,
    /// Training rows with a non-zero coefficient in some machine.
    pub support: Vec<Vec<f64>>,
    /// `coef[c][j] = α_j y_j / (λT)` for machine `c`.
    pub coef: Vec<Vec<f64>>,
    /// Machines that never saw a positive example; they always score −∞.
    pub empty: Vec<bool>,
}

fn gram(x: &[Vec<f64>], cfg: &SvmConfig) -> Vec<f64> {
    let n = x.len();
    let dim = x[0].len();
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let mut k = vec![0.0; n * n];
    gemm(n, dim, n, &flat, false, &flat, true, 0.0, &mut k);
    k.par_iter_mut().for_each(|v| *v = cfg.kernel_from_dot(*v, dim));
    k
}

/// Pegasos counts for one binary problem with targets `y ∈ {±1}`.
fn pegasos(kernel: &[f64], y: &[f64], cfg: &SvmConfig, seed: u64) -> Vec<u32> {
    let n = y.len();
    let mut alpha = vec![0u32; n];
    // s[i] = Σ_j α_j y_j K(x_j, x_i)
    let mut s = vec![0.0; n];
    let mut rng = seed::rng(seed);
    for t in 1..=cfg.iterations {
        let i = rng.gen_range(0..n);
        if y[i] * s[i] / (cfg.lambda * t as f64) < 1.0 {
            alpha[i] += 1;
            let row = &kernel[i * n..(i + 1) * n];
            for (sj, kij) in s.iter_mut().zip(row) {
                *sj += y[i] * kij;
            }
        }
    }
    alpha
}

impl SvmModel {
    /// Trains on prepared vectors.
    pub fn train_vectors(x: &[Vec<f64>], labels: &[Label], cfg: &SvmConfig, seed: u64) -> Result<Self, ClassifierError> {
        if x.is_empty() || x.len() != labels.len() {
            return Err(ClassifierError::Empty);
        }
        let mut present = [false; NUM_CLASSES];
        labels.iter().for_each(|l| present[l.index()] = true);
        if present.iter().filter(|p| **p).count() < 2 {
            return Err(ClassifierError::Config("svm needs at least two distinct labels".into()));
        }
        if cfg.lambda <= 0.0 || cfg.iterations == 0 {
            return Err(ClassifierError::Config("svm.lambda must be > 0 and svm.iterations >= 1".into()));
        }
        let k = gram(x, cfg);
        let machines: Vec<Vec<u32>> = (0..NUM_CLASSES)
            .into_par_iter()
            .map(|c| {
                if !present[c] {
                    log::warn!("no training rows for '{}'; its machine always votes no", Label::from_index(c).unwrap());
                    return vec![0; x.len()];
                }
                let y: Vec<f64> = labels.iter().map(|l| if l.index() == c { 1.0 } else { -1.0 }).collect();
                pegasos(&k, &y, cfg, seed::derive_indexed(seed, "svm", c as u64))
            })
            .collect();
        let scale = 1.0 / (cfg.lambda * cfg.iterations as f64);
        let used: Vec<usize> = (0..x.len()).filter(|&j| machines.iter().any(|a| a[j] > 0)).collect();
        let coef = machines
            .iter()
            .enumerate()
            .map(|(c, a)| {
                used.iter()
                    .map(|&j| {
                        let y = if labels[j].index() == c { 1.0 } else { -1.0 };
                        a[j] as f64 * y * scale
                    })
                    .collect()
            })
            .collect();
        Ok(SvmModel {
            config: cfg.clone(),
            standardizer: Standardizer::Identity,
            support: used.iter().map(|&j| x[j].clone()).collect(),
            coef,
            empty: present.iter().map(|p| !p).collect(),
        })
    }

    pub fn fit(rows: &[ResampledSequence], cfg: &SvmConfig, seed: u64) -> Result<Self, ClassifierError> {
        let standardizer = Standardizer::fit_per_dimension(rows);
        let x: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.flat(r)).collect();
        let y: Vec<Label> = rows.iter().map(|r| r.label).collect();
        let mut m = SvmModel::train_vectors(&x, &y, cfg, seed)?;
        m.standardizer = standardizer;
        Ok(m)
    }

    /// Decision value of every machine.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let kx: Vec<f64> = self.support.iter().map(|s| self.config.kernel(s, x)).collect();
        self.coef
            .iter()
            .zip(&self.empty)
            .map(|(c, &empty)| {
                if empty {
                    f64::NEG_INFINITY
                } else {
                    c.iter().zip(&kx).map(|(a, k)| a * k).sum()
                }
            })
            .collect()
    }

    pub fn predict_vector(&self, x: &[f64]) -> Label {
        argmax_label(&self.scores(x))
    }

    pub fn predict(&self, r: &ResampledSequence) -> Result<Label, ClassifierError> {
        let x = self.standardizer.flat(r);
        if let Some(s) = self.support.first() {
            if s.len() != x.len() {
                return Err(ClassifierError::Shape(format!("row of {} features, model expects {}", x.len(), s.len())));
            }
        }
        Ok(self.predict_vector(&x))
    }

    /// Writes `svm.json` (hyperparameters, standardizer) and `svm.csv`
    /// (`coef_a..coef_z` then the support vector, one row per vector).
    pub fn save(&self, dir: &Path) -> Result<(), ClassifierError> {
        let side = serde_json::json!({
            "arch": "svm-ova-poly",
            "config": self.config,
            "standardizer": self.standardizer,
            "empty": self.empty,
        });
        super::write_file(&dir.join("svm.json"), &serde_json::to_string_pretty(&side).unwrap())?;
        let dim = self.support.first().map_or(0, |s| s.len());
        let mut csv = String::new();
        let head: Vec<String> = Label::all()
            .map(|l| format!("coef_{l}"))
            .chain((0..dim).map(|d| format!("x{d}")))
            .collect();
        csv.push_str(&head.join(","));
        csv.push('\n');
        for (j, s) in self.support.iter().enumerate() {
            let fields: Vec<String> = self
                .coef
                .iter()
                .map(|c| format!("{:?}", c[j]))
                .chain(s.iter().map(|v| format!("{v:?}")))
                .collect();
            writeln!(csv, "{}", fields.join(",")).unwrap();
        }
        super::write_file(&dir.join("svm.csv"), &csv)
    }

    pub fn load(dir: &Path) -> Result<Self, ClassifierError> {
        let side: serde_json::Value = serde_json::from_str(&super::read_file(&dir.join("svm.json"))?)
            .map_err(|e| ClassifierError::Io(format!("svm.json: {e}")))?;
        let bad = |what: &str| ClassifierError::Io(format!("svm.json: bad {what}"));
        let config: SvmConfig = serde_json::from_value(side["config"].clone()).map_err(|_| bad("config"))?;
        let standardizer = serde_json::from_value(side["standardizer"].clone()).map_err(|_| bad("standardizer"))?;
        let empty: Vec<bool> = serde_json::from_value(side["empty"].clone()).map_err(|_| bad("empty"))?;
        let text = super::read_file(&dir.join("svm.csv"))?;
        let mut coef = vec![Vec::new(); NUM_CLASSES];
        let mut support = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let vals = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ClassifierError::Io(format!("svm.csv line {}: {e}", i + 1)))?;
            if vals.len() < NUM_CLASSES {
                return Err(ClassifierError::Io(format!("svm.csv line {}: too few fields", i + 1)));
            }
            for (c, v) in vals[..NUM_CLASSES].iter().enumerate() {
                coef[c].push(*v);
            }
            support.push(vals[NUM_CLASSES..].to_vec());
        }
        Ok(SvmModel {
            config,
            standardizer,
            support,
            coef,
            empty,
        })
    }
}

/// Highest score wins; ties go to the lowest label index.
pub fn argmax_label(scores: &[f64]) -> Label {
    Label::from_index(super::trainer::argmax(scores)).expect("26 scores")
}
