//! 1-D CNN over `3 × N` channel-major rows: three conv→maxpool→relu blocks,
//! relu fully connected layers, and a linear 26-way output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trainer::{self, DeepNet, EpochPoint, TrainOptions};
use super::{ClassifierError, Standardizer};
use crate::nn::{
    load_checkpoint, maxpool1d, maxpool1d_backward, save_checkpoint, softmax_cross_entropy_batch, AdamConfig,
    Conv1d, Dense, NnError, ParamInfo, Parameterized, PoolRouting, Tensor,
};
use crate::preprocess::ResampledSequence;
use crate::sensor_data::{Label, NUM_CLASSES};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub conv_channels: [usize; 3],
    /// Hidden fully connected widths after the flatten.
    pub fc: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub adam: AdamConfig,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            conv_channels: [32, 64, 64],
            fc: vec![3200, 1600, 500],
            epochs: 20,
            batch_size: 500,
            l2: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub convs: Vec<Conv1d>,
    /// Hidden layers followed by the output layer.
    pub fcs: Vec<Dense>,
    pub n_features: usize,
    pub standardizer: Standardizer,
}

struct Trace {
    /// Input of each conv block.
    conv_in: Vec<Tensor>,
    routes: Vec<PoolRouting>,
    /// Max-pool output before the relu.
    pooled: Vec<Tensor>,
    /// Input of each dense layer.
    fc_in: Vec<Tensor>,
    /// Pre-activation of each hidden dense layer.
    fc_pre: Vec<Tensor>,
    logits: Tensor,
}

fn relu(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

fn mask(pre: &Tensor, grad: &mut Tensor) {
    for (g, p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if *p <= 0.0 {
            *g = 0.0;
        }
    }
}

impl CnnModel {
    pub fn new(n_features: usize, cfg: &CnnConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let [c1, c2, c3] = cfg.conv_channels;
        let convs = vec![
            Conv1d::new(3, c1, &mut rng),
            Conv1d::new(c1, c2, &mut rng),
            Conv1d::new(c2, c3, &mut rng),
        ];
        let mut widths = vec![c3 * n_features];
        widths.extend(&cfg.fc);
        widths.push(NUM_CLASSES);
        let fcs = widths.windows(2).map(|w| Dense::new(w[0], w[1], &mut rng)).collect();
        CnnModel {
            convs,
            fcs,
            n_features,
            standardizer: Standardizer::Identity,
        }
    }

    pub fn arch_tag(&self) -> String {
        let convs: Vec<String> = self.convs.iter().map(|c| c.out_channels().to_string()).collect();
        let fcs: Vec<String> = self.fcs.iter().map(|d| d.output_size().to_string()).collect();
        format!("cnn-3x{}-conv{}-fc{}", self.n_features, convs.join("-"), fcs.join("-"))
    }

    fn forward_trace(&self, x: &[f64], b: usize) -> Result<Trace, NnError> {
        let n = self.n_features;
        let mut h = Tensor::from_vec(&[b, 3, n], x.to_vec())?;
        let mut conv_in = Vec::with_capacity(3);
        let mut routes = Vec::with_capacity(3);
        let mut pooled = Vec::with_capacity(3);
        for conv in &self.convs {
            let a = conv.forward(&h)?;
            let (p, r) = maxpool1d(&a);
            debug_assert_eq!(p.shape()[2], n);
            conv_in.push(std::mem::replace(&mut h, relu(&p)));
            routes.push(r);
            pooled.push(p);
        }
        let width = h.len() / b;
        let mut z = h.reshape(&[b, width])?;
        let mut fc_in = Vec::with_capacity(self.fcs.len());
        let mut fc_pre = Vec::with_capacity(self.fcs.len());
        let last = self.fcs.len() - 1;
        for (i, fc) in self.fcs.iter().enumerate() {
            let a = fc.forward(&z)?;
            fc_in.push(z);
            if i == last {
                return Ok(Trace {
                    conv_in,
                    routes,
                    pooled,
                    fc_in,
                    fc_pre,
                    logits: a,
                });
            }
            z = relu(&a);
            fc_pre.push(a);
        }
        unreachable!("at least the output layer exists")
    }

    /// Logits for one `3 × N` channel-major sample.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ClassifierError> {
        if x.shape() != [3, self.n_features] {
            return Err(ClassifierError::Shape(format!(
                "cnn input {:?}, expected [3, {}]",
                x.shape(),
                self.n_features
            )));
        }
        let t = self.forward_trace(x.data(), 1)?;
        Ok(t.logits.reshape(&[NUM_CLASSES])?)
    }

    fn backward(&self, t: &Trace, dlogits: Tensor) -> Result<Vec<Tensor>, NnError> {
        let mut fc_grads = Vec::with_capacity(self.fcs.len());
        let mut d = dlogits;
        for i in (0..self.fcs.len()).rev() {
            let g = self.fcs[i].backward(&t.fc_in[i], &d)?;
            fc_grads.push((g.weight, g.bias));
            d = g.input;
            if i > 0 {
                mask(&t.fc_pre[i - 1], &mut d);
            }
        }
        let shape = t.pooled[2].shape().to_vec();
        let mut d = d.reshape(&shape)?;
        let mut conv_grads = Vec::with_capacity(3);
        for i in (0..self.convs.len()).rev() {
            mask(&t.pooled[i], &mut d);
            let da = maxpool1d_backward(&d, &t.routes[i])?;
            let g = self.convs[i].backward(&t.conv_in[i], &da)?;
            conv_grads.push((g.kernels, g.bias));
            d = g.input;
        }
        let mut grads = Vec::with_capacity(2 * (self.convs.len() + self.fcs.len()));
        for (w, b) in conv_grads.into_iter().rev().chain(fc_grads.into_iter().rev()) {
            grads.push(w);
            grads.push(b);
        }
        Ok(grads)
    }

    /// Mean cross-entropy over a `[B, 3, N]` batch and its gradients, without
    /// regularization.
    pub fn loss_and_grads(&self, x: &[f64], y: &[usize]) -> Result<(f64, Vec<Tensor>), ClassifierError> {
        let t = self.forward_trace(x, y.len())?;
        let (loss, d) = softmax_cross_entropy_batch(&t.logits, y)?;
        Ok((loss, self.backward(&t, d)?))
    }

    pub fn fit(
        rows: &[ResampledSequence],
        dev: &[ResampledSequence],
        cfg: &CnnConfig,
        seed: u64,
    ) -> Result<(Self, Vec<EpochPoint>), ClassifierError> {
        let n = rows.first().ok_or(ClassifierError::Empty)?.n_features();
        let mut m = CnnModel::new(n, cfg, seed::derive(seed, "cnn-init"));
        m.standardizer = Standardizer::fit_per_channel(rows);
        let x: Vec<Vec<f64>> = rows.iter().map(|r| m.standardizer.channel_major(r)).collect();
        let y: Vec<usize> = rows.iter().map(|r| r.label.index()).collect();
        let dx: Vec<Vec<f64>> = dev.iter().map(|r| m.standardizer.channel_major(r)).collect();
        let dy: Vec<usize> = dev.iter().map(|r| r.label.index()).collect();
        let opts = TrainOptions {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            adam: cfg.adam,
            l2: cfg.l2,
        };
        let curves = trainer::train(&mut m, &x, &y, Some((&dx, &dy)), &opts, seed::derive(seed, "cnn-train"))?;
        Ok((m, curves))
    }

    pub fn predict_rows(&self, rows: &[ResampledSequence]) -> Result<Vec<Label>, ClassifierError> {
        if let Some(r) = rows.iter().find(|r| r.n_features() != self.n_features) {
            return Err(ClassifierError::Shape(format!("row of {} steps, model expects {}", r.n_features(), self.n_features)));
        }
        let x: Vec<Vec<f64>> = rows.iter().map(|r| self.standardizer.channel_major(r)).collect();
        Ok(trainer::predict_classes(self, &x)?
            .into_iter()
            .map(|c| Label::from_index(c).expect("class index"))
            .collect())
    }

    pub fn save(&self, dir: &Path, cfg: &CnnConfig) -> Result<(), ClassifierError> {
        save_checkpoint(&dir.join("cnn.ckpt"), &self.arch_tag(), &self.named_params())?;
        let side = serde_json::json!({
            "arch": self.arch_tag(),
            "n_features": self.n_features,
            "config": cfg,
            "standardizer": self.standardizer,
        });
        super::write_file(&dir.join("cnn.json"), &serde_json::to_string_pretty(&side).unwrap())
    }

    pub fn load(dir: &Path) -> Result<Self, ClassifierError> {
        let side: serde_json::Value = serde_json::from_str(&super::read_file(&dir.join("cnn.json"))?)
            .map_err(|e| ClassifierError::Io(format!("cnn.json: {e}")))?;
        let bad = |what: &str| ClassifierError::Io(format!("cnn.json: bad {what}"));
        let cfg: CnnConfig = serde_json::from_value(side["config"].clone()).map_err(|_| bad("config"))?;
        let n = side["n_features"].as_u64().ok_or_else(|| bad("n_features"))? as usize;
        let mut m = CnnModel::new(n, &cfg, 0);
        m.standardizer = serde_json::from_value(side["standardizer"].clone()).map_err(|_| bad("standardizer"))?;
        let ck = load_checkpoint(&dir.join("cnn.ckpt"))?;
        if ck.arch != m.arch_tag() {
            return Err(ClassifierError::Io(format!("checkpoint is {}, sidecar describes {}", ck.arch, m.arch_tag())));
        }
        m.load_named(&ck.tensors)?;
        Ok(m)
    }
}

impl DeepNet for CnnModel {
    fn sample_len(&self) -> usize {
        3 * self.n_features
    }

    fn logits(&self, x: &[f64], b: usize) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_trace(x, b)?.logits.into_data())
    }

    fn chunk_grads(&self, x: &[f64], y: &[usize]) -> Result<(f64, Vec<Tensor>, Vec<f64>), NnError> {
        let b = y.len();
        let t = self.forward_trace(x, b)?;
        let (loss, mut d) = softmax_cross_entropy_batch(&t.logits, y)?;
        d.scale(b as f64);
        let grads = self.backward(&t, d)?;
        Ok((loss * b as f64, grads, t.logits.into_data()))
    }
}

impl Parameterized for CnnModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.convs.iter().flat_map(|c| c.params()).collect();
        v.extend(self.fcs.iter().flat_map(|d| d.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(self.fcs.iter_mut().flat_map(|d| d.params_mut()));
        v
    }

    fn param_info(&self) -> Vec<ParamInfo> {
        let mut v = Vec::new();
        for i in 0..self.convs.len() {
            v.push(ParamInfo::weight(format!("conv{}.kernels", i + 1)));
            v.push(ParamInfo::bias(format!("conv{}.bias", i + 1)));
        }
        for i in 0..self.fcs.len() {
            v.push(ParamInfo::weight(format!("fc{}.weight", i + 1)));
            v.push(ParamInfo::bias(format!("fc{}.bias", i + 1)));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, l2_penalty, GradCheckOptions};
    use rand::Rng;

    fn small() -> CnnConfig {
        CnnConfig {
            conv_channels: [3, 4, 4],
            fc: vec![10, 8, 6],
            ..Default::default()
        }
    }

    #[test]
    fn default_architecture_widths() {
        let m = CnnModel::new(100, &CnnConfig::default(), 0);
        let convs: Vec<(usize, usize)> = m.convs.iter().map(|c| (c.in_channels(), c.out_channels())).collect();
        assert_eq!(convs, vec![(3, 32), (32, 64), (64, 64)]);
        let fcs: Vec<(usize, usize)> = m.fcs.iter().map(|d| (d.input_size(), d.output_size())).collect();
        assert_eq!(fcs, vec![(6400, 3200), (3200, 1600), (1600, 500), (500, 26)]);
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut m = CnnModel::new(12, &small(), 1);
        m.params_mut().into_iter().for_each(|p| p.fill(0.0));
        let x = Tensor::randn(&[3, 12], &mut seed::rng(2));
        let logits = m.forward(&x).unwrap();
        assert_eq!(logits.shape(), &[26]);
        assert!(logits.data().iter().all(|v| *v == 0.0));
        let (loss, _) = m.loss_and_grads(x.data(), &[7]).unwrap();
        assert!((loss - 26f64.ln()).abs() < 1e-12);
        assert!(m.forward(&Tensor::zeros(&[3, 11])).is_err());
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        for s in 0..5 {
            let mut m = CnnModel::new(8, &small(), 40 + s);
            // keep pre-activations away from the relu kink
            for p in m.params_mut().into_iter().skip(1).step_by(2) {
                p.fill(0.05);
            }
            let mut rng = seed::rng(60 + s);
            let x = Tensor::randn(&[4 * 3 * 8], &mut rng);
            let y: Vec<usize> = (0..4).map(|_| rng.gen_range(0..26)).collect();
            let lambda = 0.1;
            let loss = |m: &CnnModel| {
                let weights: Vec<&Tensor> = m.params().into_iter().step_by(2).collect();
                m.loss_and_grads(x.data(), &y).unwrap().0 + l2_penalty(&weights, lambda).0
            };
            let (_, mut g) = m.loss_and_grads(x.data(), &y).unwrap();
            let weights: Vec<&Tensor> = m.params().into_iter().step_by(2).collect();
            let (_, lg) = l2_penalty(&weights, lambda);
            for (i, t) in lg.iter().enumerate() {
                g[2 * i].add_assign(t);
            }
            let err = grad_check(&mut m, &g, loss, &GradCheckOptions::default());
            assert!(err < 1e-4, "seed {s}: {err}");
        }
    }

    fn toy_rows(n: usize, count: usize, s: u64) -> Vec<ResampledSequence> {
        let mut rng = seed::rng(s);
        (0..count)
            .map(|i| ResampledSequence {
                values: (0..n)
                    .map(|_| [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)])
                    .collect(),
                label: Label::from_index(i).unwrap(),
                subject_id: "s".into(),
                sequence_id: format!("q{i}"),
            })
            .collect()
    }

    #[test]
    fn memorizes_eight_samples() {
        let rows = toy_rows(100, 8, 70);
        let cfg = CnnConfig {
            epochs: 30,
            l2: 0.0,
            ..Default::default()
        };
        let (m, curves) = CnnModel::fit(&rows, &[], &cfg, 3).unwrap();
        assert_eq!(curves.len(), 30);
        let pred = m.predict_rows(&rows).unwrap();
        let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
        assert_eq!(pred, labels);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let rows = toy_rows(10, 12, 71);
        let cfg = CnnConfig {
            epochs: 2,
            batch_size: 5,
            ..small()
        };
        let (a, ca) = CnnModel::fit(&rows, &rows[..3], &cfg, 9).unwrap();
        let (b, cb) = CnnModel::fit(&rows, &rows[..3], &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert!(ca[0].dev_acc.is_some());
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path(), &cfg).unwrap();
        assert_eq!(CnnModel::load(dir.path()).unwrap(), a);
    }
}
