//! Five stacked LSTM layers over the `N × 3` time-major row, with a dense
//! 26-way head on the top layer's last hidden state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trainer::{self, DeepNet, EpochPoint, TrainOptions};
use super::{ClassifierError, Standardizer};
use crate::nn::{
    load_checkpoint, save_checkpoint, softmax_cross_entropy_batch, AdamConfig, Dense, LstmLayerParams, LstmTrace,
    NnError, ParamInfo, Parameterized, Tensor,
};
use crate::preprocess::ResampledSequence;
use crate::sensor_data::{Label, NUM_CLASSES};
use crate::seed;

pub const NUM_LAYERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for RnnConfig {
    fn default() -> Self {
        RnnConfig {
            hidden: 128,
            epochs: 250,
            batch_size: 500,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    pub layers: Vec<LstmLayerParams>,
    /// Initial states, drawn from N(0, 1) at construction and not trained.
    pub h0: Vec<Tensor>,
    pub c0: Vec<Tensor>,
    pub head: Dense,
    pub steps: usize,
    pub standardizer: Standardizer,
}

struct Trace {
    layers: Vec<LstmTrace>,
    last: Tensor,
    logits: Tensor,
}

impl RnnModel {
    pub fn new(steps: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let layers = (0..NUM_LAYERS)
            .map(|i| LstmLayerParams::new(if i == 0 { 3 } else { hidden }, hidden, &mut rng))
            .collect();
        let h0 = (0..NUM_LAYERS).map(|_| Tensor::randn(&[hidden], &mut rng)).collect();
        let c0 = (0..NUM_LAYERS).map(|_| Tensor::randn(&[hidden], &mut rng)).collect();
        RnnModel {
            layers,
            h0,
            c0,
            head: Dense::new(hidden, NUM_CLASSES, &mut rng),
            steps,
            standardizer: Standardizer::Identity,
        }
    }

    pub fn hidden(&self) -> usize {
        self.head.input_size()
    }

    pub fn arch_tag(&self) -> String {
        format!("rnn-{}x3-lstm{}x{}", self.steps, NUM_LAYERS, self.hidden())
    }

    fn tile(state: &Tensor, b: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(b * state.len());
        for _ in 0..b {
            v.extend_from_slice(state.data());
        }
        v
    }

    /// `x` holds `b` samples, each `[steps][3]`.
    fn forward_trace(&self, x: &[f64], b: usize) -> Result<Trace, NnError> {
        let (t_len, hid) = (self.steps, self.hidden());
        if x.len() != b * t_len * 3 {
            return Err(NnError::Shape {
                op: "rnn_forward",
                expected: format!("{b} x [{t_len}, 3]"),
                got: vec![x.len()],
            });
        }
        // to time-major [t][b][3]
        let mut input = vec![0.0; x.len()];
        for s in 0..b {
            for t in 0..t_len {
                let src = (s * t_len + t) * 3;
                let dst = (t * b + s) * 3;
                input[dst..dst + 3].copy_from_slice(&x[src..src + 3]);
            }
        }
        let mut traces = Vec::with_capacity(NUM_LAYERS);
        for (l, layer) in self.layers.iter().enumerate() {
            let tr = layer.forward_sequence(&input, t_len, b, &Self::tile(&self.h0[l], b), &Self::tile(&self.c0[l], b))?;
            input = tr.h.clone();
            traces.push(tr);
        }
        let last = Tensor::from_vec(&[b, hid], traces[NUM_LAYERS - 1].last_hidden().to_vec())?;
        let logits = self.head.forward(&last)?;
        Ok(Trace {
            layers: traces,
            last,
            logits,
        })
    }

    /// Logits for one `[steps, 3]` sample.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ClassifierError> {
        if x.shape() != [self.steps, 3] {
            return Err(ClassifierError::Shape(format!("rnn input {:?}, expected [{}, 3]", x.shape(), self.steps)));
        }
        Ok(self.forward_trace(x.data(), 1)?.logits.reshape(&[NUM_CLASSES])?)
    }

    fn backward(&self, t: &Trace, dlogits: &Tensor) -> Result<Vec<Tensor>, NnError> {
        let b = t.last.shape()[0];
        let (t_len, hid) = (self.steps, self.hidden());
        let hg = self.head.backward(&t.last, dlogits)?;
        let mut d_h = vec![0.0; t_len * b * hid];
        d_h[(t_len - 1) * b * hid..].copy_from_slice(hg.input.data());
        let mut layer_grads = Vec::with_capacity(NUM_LAYERS);
        for l in (0..NUM_LAYERS).rev() {
            let g = self.layers[l].backward_sequence(&t.layers[l], &d_h, None)?;
            d_h = g.input;
            layer_grads.push(g.params);
        }
        let mut grads: Vec<Tensor> = layer_grads.into_iter().rev().flatten().collect();
        grads.push(hg.weight);
        grads.push(hg.bias);
        Ok(grads)
    }

    /// Mean cross-entropy over a batch and its gradients.
    pub fn loss_and_grads(&self, x: &[f64], y: &[usize]) -> Result<(f64, Vec<Tensor>), ClassifierError> {
        let t = self.forward_trace(x, y.len())?;
        let (loss, d) = softmax_cross_entropy_batch(&t.logits, y)?;
        Ok((loss, self.backward(&t, &d)?))
    }

    fn sample(&self, r: &ResampledSequence) -> Vec<f64> {
        self.standardizer.flat(r)
    }

    pub fn fit(
        rows: &[ResampledSequence],
        dev: &[ResampledSequence],
        cfg: &RnnConfig,
        seed: u64,
    ) -> Result<(Self, Vec<EpochPoint>), ClassifierError> {
        let n = rows.first().ok_or(ClassifierError::Empty)?.n_features();
        let mut m = RnnModel::new(n, cfg.hidden, seed::derive(seed, "rnn-init"));
        m.standardizer = Standardizer::fit_per_channel(rows);
        let x: Vec<Vec<f64>> = rows.iter().map(|r| m.sample(r)).collect();
        let y: Vec<usize> = rows.iter().map(|r| r.label.index()).collect();
        let dx: Vec<Vec<f64>> = dev.iter().map(|r| m.sample(r)).collect();
        let dy: Vec<usize> = dev.iter().map(|r| r.label.index()).collect();
        let opts = TrainOptions {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            adam: cfg.adam,
            l2: 0.0,
        };
        let curves = trainer::train(&mut m, &x, &y, Some((&dx, &dy)), &opts, seed::derive(seed, "rnn-train"))?;
        Ok((m, curves))
    }

    pub fn predict_rows(&self, rows: &[ResampledSequence]) -> Result<Vec<Label>, ClassifierError> {
        if let Some(r) = rows.iter().find(|r| r.n_features() != self.steps) {
            return Err(ClassifierError::Shape(format!("row of {} steps, model expects {}", r.n_features(), self.steps)));
        }
        let x: Vec<Vec<f64>> = rows.iter().map(|r| self.sample(r)).collect();
        Ok(trainer::predict_classes(self, &x)?
            .into_iter()
            .map(|c| Label::from_index(c).expect("class index"))
            .collect())
    }

    /// The initial states are stored with the weights.
    pub fn save(&self, dir: &Path, cfg: &RnnConfig) -> Result<(), ClassifierError> {
        let mut tensors = self.named_params();
        for l in 0..NUM_LAYERS {
            tensors.push((format!("layer{}.h0", l + 1), &self.h0[l]));
            tensors.push((format!("layer{}.c0", l + 1), &self.c0[l]));
        }
        save_checkpoint(&dir.join("rnn.ckpt"), &self.arch_tag(), &tensors)?;
        let side = serde_json::json!({
            "arch": self.arch_tag(),
            "steps": self.steps,
            "config": cfg,
            "standardizer": self.standardizer,
        });
        super::write_file(&dir.join("rnn.json"), &serde_json::to_string_pretty(&side).unwrap())
    }

    pub fn load(dir: &Path) -> Result<Self, ClassifierError> {
        let side: serde_json::Value = serde_json::from_str(&super::read_file(&dir.join("rnn.json"))?)
            .map_err(|e| ClassifierError::Io(format!("rnn.json: {e}")))?;
        let bad = |what: &str| ClassifierError::Io(format!("rnn.json: bad {what}"));
        let cfg: RnnConfig = serde_json::from_value(side["config"].clone()).map_err(|_| bad("config"))?;
        let steps = side["steps"].as_u64().ok_or_else(|| bad("steps"))? as usize;
        let mut m = RnnModel::new(steps, cfg.hidden, 0);
        m.standardizer = serde_json::from_value(side["standardizer"].clone()).map_err(|_| bad("standardizer"))?;
        let ck = load_checkpoint(&dir.join("rnn.ckpt"))?;
        if ck.arch != m.arch_tag() {
            return Err(ClassifierError::Io(format!("checkpoint is {}, sidecar describes {}", ck.arch, m.arch_tag())));
        }
        let n = m.params().len();
        if ck.tensors.len() != n + 2 * NUM_LAYERS {
            return Err(ClassifierError::Io("rnn.ckpt: wrong tensor count".into()));
        }
        m.load_named(&ck.tensors[..n])?;
        for (l, pair) in ck.tensors[n..].chunks_exact(2).enumerate() {
            if pair[0].1.shape() != m.h0[l].shape() || pair[1].1.shape() != m.c0[l].shape() {
                return Err(ClassifierError::Io("rnn.ckpt: initial state shape".into()));
            }
            m.h0[l] = pair[0].1.clone();
            m.c0[l] = pair[1].1.clone();
        }
        Ok(m)
    }
}

impl DeepNet for RnnModel {
    fn sample_len(&self) -> usize {
        3 * self.steps
    }

    fn logits(&self, x: &[f64], b: usize) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_trace(x, b)?.logits.into_data())
    }

    fn chunk_grads(&self, x: &[f64], y: &[usize]) -> Result<(f64, Vec<Tensor>, Vec<f64>), NnError> {
        let b = y.len();
        let t = self.forward_trace(x, b)?;
        let (loss, mut d) = softmax_cross_entropy_batch(&t.logits, y)?;
        d.scale(b as f64);
        let grads = self.backward(&t, &d)?;
        Ok((loss * b as f64, grads, t.logits.into_data()))
    }
}

impl Parameterized for RnnModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.layers.iter().flat_map(|l| l.params()).collect();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        v.extend(self.head.params_mut());
        v
    }

    fn param_info(&self) -> Vec<ParamInfo> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(l.param_info().into_iter().map(|p| ParamInfo {
                name: format!("layer{}.{}", i + 1, p.name),
                is_weight: p.is_weight,
            }));
        }
        v.push(ParamInfo::weight("head.weight"));
        v.push(ParamInfo::bias("head.bias"));
        v
    }
}
