//! Per-channel denoising autoencoder, `N → 128 → 64 → 128 → N` by default.
//!
//! Hidden layers use the rectifier; the output layer is linear since
//! rotation deltas are signed. Each model sees one channel (yaw, pitch or
//! roll) of a resampled row, optionally standardized by a scalar mean and
//! standard deviation fitted on its training rows.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    load_checkpoint, save_checkpoint, AdamConfig, AdamState, Dense, NnError, ParamInfo, Parameterized, Tensor,
};
use crate::preprocess::ResampledSequence;
use crate::seed;

pub const HIDDEN: usize = 128;
pub const CODE: usize = 64;

pub const CHANNEL_NAMES: [&str; 3] = ["yaw", "pitch", "roll"];

#[derive(Debug, Error)]
pub enum AutoencoderError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("no training rows")]
    Empty,
    #[error("{0}")]
    Config(String),
    #[error("row width {got} does not match model width {expected}")]
    Width { expected: usize, got: usize },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Standardize each channel before encoding.
    pub standardize: bool,
    /// Hidden and code widths. The code should stay narrower than `N`.
    pub widths: [usize; 2],
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            standardize: true,
            widths: [HIDDEN, CODE],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub enc1: Dense,
    pub enc2: Dense,
    pub dec1: Dense,
    pub dec2: Dense,
    /// Input transform `z = (x - mean) / std`, inverted after decoding.
    pub mean: f64,
    pub std: f64,
}

/// Intermediate activations kept for the backward pass.
struct Trace {
    x: Tensor,
    a1: Tensor,
    h1: Tensor,
    code: Tensor,
    hc: Tensor,
    a3: Tensor,
    h3: Tensor,
    recon: Tensor,
}

fn relu(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

fn relu_back(pre: &Tensor, grad: &mut Tensor) {
    for (g, p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `(1/N) Σ (x_i − x̂_i)²`.
pub fn mse_loss(x: &[f64], xhat: &[f64]) -> Result<f64, AutoencoderError> {
    if x.len() != xhat.len() || x.is_empty() {
        return Err(AutoencoderError::Width {
            expected: x.len(),
            got: xhat.len(),
        });
    }
    Ok(x.iter().zip(xhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

impl Autoencoder {
    pub fn new(n: usize, seed: u64) -> Self {
        Self::with_widths(n, [HIDDEN, CODE], seed)
    }

    pub fn with_widths(n: usize, [hidden, code]: [usize; 2], seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        Autoencoder {
            enc1: Dense::new(n, hidden, &mut rng),
            enc2: Dense::new(hidden, code, &mut rng),
            dec1: Dense::new(code, hidden, &mut rng),
            dec2: Dense::new(hidden, n, &mut rng),
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::zeros_with_widths(n, [HIDDEN, CODE])
    }

    pub fn zeros_with_widths(n: usize, [hidden, code]: [usize; 2]) -> Self {
        Autoencoder {
            enc1: Dense::zeros(n, hidden),
            enc2: Dense::zeros(hidden, code),
            dec1: Dense::zeros(code, hidden),
            dec2: Dense::zeros(hidden, n),
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn width(&self) -> usize {
        self.enc1.input_size()
    }

    /// `[hidden, code]`.
    pub fn widths(&self) -> [usize; 2] {
        [self.enc1.output_size(), self.enc2.output_size()]
    }

    pub fn arch_tag(&self) -> String {
        let [h, c] = self.widths();
        format!("ae-{}-{h}-{c}", self.width())
    }

    fn trace(&self, x: Tensor) -> Result<Trace, NnError> {
        let a1 = self.enc1.forward(&x)?;
        let h1 = relu(&a1);
        let code = self.enc2.forward(&h1)?;
        let hc = relu(&code);
        let a3 = self.dec1.forward(&hc)?;
        let h3 = relu(&a3);
        let recon = self.dec2.forward(&h3)?;
        Ok(Trace {
            x,
            a1,
            h1,
            code,
            hc,
            a3,
            h3,
            recon,
        })
    }

    /// Raw network pass on `[N]` or `[B, N]`, without the input transform.
    /// Returns `(code, recon)`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor), AutoencoderError> {
        if x.shape().last() != Some(&self.width()) || !x.all_finite() {
            return Err(AutoencoderError::Width {
                expected: self.width(),
                got: x.shape().last().copied().unwrap_or(0),
            });
        }
        let t = self.trace(x.clone())?;
        Ok((t.code, t.recon))
    }

    /// Mean-over-batch MSE and its parameter gradients for `[B, N]` input.
    pub fn loss_and_grads(&self, x: &Tensor) -> Result<(f64, Vec<Tensor>), AutoencoderError> {
        let t = self.trace(x.clone())?;
        let total = x.len() as f64;
        let mut loss = 0.0;
        let mut d = t.recon.clone();
        for (g, v) in d.data_mut().iter_mut().zip(t.x.data()) {
            let diff = *g - v;
            loss += diff * diff;
            *g = 2.0 * diff / total;
        }
        let g4 = self.dec2.backward(&t.h3, &d)?;
        let mut dh3 = g4.input;
        relu_back(&t.a3, &mut dh3);
        let g3 = self.dec1.backward(&t.hc, &dh3)?;
        let mut dcode = g3.input;
        relu_back(&t.code, &mut dcode);
        let g2 = self.enc2.backward(&t.h1, &dcode)?;
        let mut dh1 = g2.input;
        relu_back(&t.a1, &mut dh1);
        let g1 = self.enc1.backward(&t.x, &dh1)?;
        Ok((
            loss / total,
            vec![g1.weight, g1.bias, g2.weight, g2.bias, g3.weight, g3.bias, g4.weight, g4.bias],
        ))
    }

    /// Applies the input transform, the network and the inverse transform.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>, AutoencoderError> {
        if x.len() != self.width() {
            return Err(AutoencoderError::Width {
                expected: self.width(),
                got: x.len(),
            });
        }
        let z: Vec<f64> = x.iter().map(|v| (v - self.mean) / self.std).collect();
        let (_, r) = self.forward(&Tensor::vector(&z))?;
        Ok(r.data().iter().map(|v| v * self.std + self.mean).collect())
    }

    /// Writes `<stem>.ckpt` and the `<stem>.json` sidecar.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), AutoencoderError> {
        save_checkpoint(&dir.join(format!("{stem}.ckpt")), &self.arch_tag(), &self.named_params())?;
        let side = serde_json::json!({
            "arch": self.arch_tag(),
            "n_features": self.width(),
            "widths": self.widths(),
            "mean": self.mean,
            "std": self.std,
        });
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&side).unwrap()).map_err(|e| AutoencoderError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, AutoencoderError> {
        let ck = load_checkpoint(&dir.join(format!("{stem}.ckpt")))?;
        let path = dir.join(format!("{stem}.json"));
        let io = |reason: String| AutoencoderError::Io {
            path: path.display().to_string(),
            reason,
        };
        let side: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).map_err(|e| io(e.to_string()))?)
                .map_err(|e| io(e.to_string()))?;
        let n = side["n_features"].as_u64().ok_or_else(|| io("missing n_features".into()))? as usize;
        let widths: [usize; 2] =
            serde_json::from_value(side["widths"].clone()).map_err(|e| io(format!("widths: {e}")))?;
        let mut ae = Autoencoder::zeros_with_widths(n, widths);
        if ck.arch != ae.arch_tag() {
            return Err(io(format!("architecture {} does not match {}", ck.arch, ae.arch_tag())));
        }
        ae.load_named(&ck.tensors)?;
        ae.mean = side["mean"].as_f64().ok_or_else(|| io("missing mean".into()))?;
        ae.std = side["std"].as_f64().ok_or_else(|| io("missing std".into()))?;
        Ok(ae)
    }
}

impl Parameterized for Autoencoder {
    fn params(&self) -> Vec<&Tensor> {
        [&self.enc1, &self.enc2, &self.dec1, &self.dec2]
            .into_iter()
            .flat_map(|d| d.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        [&mut self.enc1, &mut self.enc2, &mut self.dec1, &mut self.dec2]
            .into_iter()
            .flat_map(|d| d.params_mut())
            .collect()
    }

    fn param_info(&self) -> Vec<ParamInfo> {
        ["enc1", "enc2", "dec1", "dec2"]
            .into_iter()
            .flat_map(|l| [ParamInfo::weight(format!("{l}.weight")), ParamInfo::bias(format!("{l}.bias"))])
            .collect()
    }
}

/// Mean and standard deviation over every value of every row; a zero
/// deviation is replaced by 1.
pub fn input_stats(rows: &[Vec<f64>]) -> (f64, f64) {
    let count = rows.iter().map(Vec::len).sum::<usize>() as f64;
    let mean = rows.iter().flatten().sum::<f64>() / count;
    let var = rows.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    (mean, if var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() })
}

/// Fits one autoencoder on channel vectors. Returns the model and the
/// per-epoch mean training MSE (in the standardized space).
pub fn train_autoencoder(
    rows: &[Vec<f64>],
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<(Autoencoder, Vec<f64>), AutoencoderError> {
    let n = rows.first().ok_or(AutoencoderError::Empty)?.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(AutoencoderError::Width {
            expected: n,
            got: bad.len(),
        });
    }
    if cfg.widths.contains(&0) {
        return Err(AutoencoderError::Config(format!("widths {:?} must be positive", cfg.widths)));
    }
    let mut ae = Autoencoder::with_widths(n, cfg.widths, seed::derive(seed, "ae-init"));
    if cfg.standardize {
        (ae.mean, ae.std) = input_stats(rows);
    }
    let z: Vec<f64> = rows.iter().flatten().map(|v| (v - ae.mean) / ae.std).collect();
    let mut adam = AdamState::new(cfg.adam, &ae.params());
    let names: Vec<String> = ae.param_info().into_iter().map(|i| i.name).collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = seed::rng(seed::derive(seed, "ae-shuffle"));
    let batch = cfg.batch_size.max(1);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let mut x = Vec::with_capacity(chunk.len() * n);
            for &i in chunk {
                x.extend_from_slice(&z[i * n..(i + 1) * n]);
            }
            let (loss, grads) = ae.loss_and_grads(&Tensor::from_vec(&[chunk.len(), n], x)?)?;
            adam.step(&mut ae.params_mut(), &grads, &names)?;
            sum += loss * chunk.len() as f64;
        }
        curve.push(sum / rows.len() as f64);
    }
    Ok((ae, curve))
}

/// One autoencoder per rotation channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAutoencoders {
    pub models: [Autoencoder; 3],
    /// Per-channel training loss curves.
    pub curves: [Vec<f64>; 3],
}

impl ChannelAutoencoders {
    /// Fits the yaw, pitch and roll models on `rows`, in parallel.
    pub fn fit(rows: &[ResampledSequence], cfg: &AutoencoderConfig, seed: u64) -> Result<Self, AutoencoderError> {
        if rows.is_empty() {
            return Err(AutoencoderError::Empty);
        }
        let fit = |c: usize| {
            let data: Vec<Vec<f64>> = rows.iter().map(|r| r.channel(c)).collect();
            train_autoencoder(&data, cfg, seed::derive_indexed(seed, "ae-channel", c as u64))
        };
        let (y, (p, r)) = rayon::join(|| fit(0), || rayon::join(|| fit(1), || fit(2)));
        let (y, p, r) = (y?, p?, r?);
        Ok(ChannelAutoencoders {
            models: [y.0, p.0, r.0],
            curves: [y.1, p.1, r.1],
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), AutoencoderError> {
        for (m, name) in self.models.iter().zip(CHANNEL_NAMES) {
            m.save(dir, &format!("ae_{name}"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, AutoencoderError> {
        let load = |i: usize| Autoencoder::load(dir, &format!("ae_{}", CHANNEL_NAMES[i]));
        Ok(ChannelAutoencoders {
            models: [load(0)?, load(1)?, load(2)?],
            curves: Default::default(),
        })
    }
}

/// Replaces every channel of every row by its reconstruction. Labels and
/// ids are untouched.
pub fn denoise_dataset(
    rows: &[ResampledSequence],
    aes: &ChannelAutoencoders,
) -> Result<Vec<ResampledSequence>, AutoencoderError> {
    use rayon::prelude::*;
    rows.par_iter()
        .map(|r| {
            let mut out = r.clone();
            for (c, ae) in aes.models.iter().enumerate() {
                let rec = ae.reconstruct(&r.channel(c))?;
                for (row, v) in out.values.iter_mut().zip(rec) {
                    row[c] = v;
                }
            }
            Ok(out)
        })
        .collect()
}
