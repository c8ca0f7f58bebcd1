use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::sigmoid;
use super::{gemm, shape_err, NnError, ParamInfo, Parameterized, Tensor};

/// Weights of one LSTM layer. Gate order throughout is input (`i`),
/// forget (`f`), cell candidate (`g`), output (`o`).
///
/// ```text
/// i_t = σ(W_ii x_t + b_ii + W_hi h_{t-1} + b_hi)
/// f_t = σ(W_if x_t + b_if + W_hf h_{t-1} + b_hf)
/// g_t = tanh(W_ig x_t + b_ig + W_hg h_{t-1} + b_hg)
/// o_t = σ(W_io x_t + b_io + W_ho h_{t-1} + b_ho)
/// c_t = f_t ∗ c_{t-1} + i_t ∗ g_t
/// h_t = o_t ∗ tanh(c_t)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub w_ii: Tensor,
    pub w_if: Tensor,
    pub w_ig: Tensor,
    pub w_io: Tensor,
    pub w_hi: Tensor,
    pub w_hf: Tensor,
    pub w_hg: Tensor,
    pub w_ho: Tensor,
    pub b_ii: Tensor,
    pub b_if: Tensor,
    pub b_ig: Tensor,
    pub b_io: Tensor,
    pub b_hi: Tensor,
    pub b_hf: Tensor,
    pub b_hg: Tensor,
    pub b_ho: Tensor,
}

/// Activations of one layer unrolled over `steps` time steps for a batch,
/// stored time-major (`[t][b][unit]`).
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub steps: usize,
    pub batch: usize,
    x: Vec<f64>,
    h0: Vec<f64>,
    c0: Vec<f64>,
    /// Post-activation gates i, f, g, o.
    gates: [Vec<f64>; 4],
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    /// Hidden states `h_1..h_T`, `[T*B*H]`.
    pub h: Vec<f64>,
}

impl LstmTrace {
    fn hidden(&self) -> usize {
        self.h0.len() / self.batch
    }

    /// Cell state after the last step.
    pub fn last_cell(&self) -> &[f64] {
        let n = self.batch * self.hidden();
        &self.c[self.c.len() - n..]
    }

    /// Hidden state after the last step.
    pub fn last_hidden(&self) -> &[f64] {
        let n = self.batch * self.hidden();
        &self.h[self.h.len() - n..]
    }
}

/// Gradients of one layer's sequence.
#[derive(Debug, Clone)]
pub struct LstmGrads {
    /// `[T*B*in]`, time-major.
    pub input: Vec<f64>,
    pub h0: Vec<f64>,
    pub c0: Vec<f64>,
    /// Aligned with [`Parameterized::params`].
    pub params: Vec<Tensor>,
}

impl LstmLayerParams {
    /// Glorot-uniform weights, zero biases except the input-side forget bias,
    /// which starts at 1.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let wi = |rng: &mut R| Tensor::glorot(&[hidden, input], input, hidden, rng);
        let wh = |rng: &mut R| Tensor::glorot(&[hidden, hidden], hidden, hidden, rng);
        let z = || Tensor::zeros(&[hidden]);
        LstmLayerParams {
            w_ii: wi(rng),
            w_if: wi(rng),
            w_ig: wi(rng),
            w_io: wi(rng),
            w_hi: wh(rng),
            w_hf: wh(rng),
            w_hg: wh(rng),
            w_ho: wh(rng),
            b_ii: z(),
            b_if: Tensor::full(&[hidden], 1.0),
            b_ig: z(),
            b_io: z(),
            b_hi: z(),
            b_hf: z(),
            b_hg: z(),
            b_ho: z(),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let mut p = Self::new(input, hidden, &mut crate::seed::rng(0));
        p.params_mut().into_iter().for_each(|t| t.fill(0.0));
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_ii.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_ii.shape()[0]
    }

    fn w_input(&self) -> [&Tensor; 4] {
        [&self.w_ii, &self.w_if, &self.w_ig, &self.w_io]
    }

    fn w_hidden(&self) -> [&Tensor; 4] {
        [&self.w_hi, &self.w_hf, &self.w_hg, &self.w_ho]
    }

    fn b_input(&self) -> [&Tensor; 4] {
        [&self.b_ii, &self.b_if, &self.b_ig, &self.b_io]
    }

    fn b_hidden(&self) -> [&Tensor; 4] {
        [&self.b_hi, &self.b_hf, &self.b_hg, &self.b_ho]
    }

    /// Runs the layer over `x` (`[steps*batch*in]`, time-major) from the
    /// initial state `(h0, c0)` (each `[batch*hidden]`).
    pub fn forward_sequence(
        &self,
        x: &[f64],
        steps: usize,
        batch: usize,
        h0: &[f64],
        c0: &[f64],
    ) -> Result<LstmTrace, NnError> {
        let (n_in, hid) = (self.input_size(), self.hidden_size());
        if x.len() != steps * batch * n_in || steps == 0 {
            return Err(shape_err("lstm_forward", format!("[{steps}*{batch}*{n_in}]"), &[x.len()]));
        }
        if h0.len() != batch * hid || c0.len() != batch * hid {
            return Err(shape_err("lstm_forward", format!("state [{batch}*{hid}]"), &[h0.len(), c0.len()]));
        }
        let rows = steps * batch;
        let bh = batch * hid;
        // Input contributions for every step at once.
        let mut gates: [Vec<f64>; 4] = Default::default();
        for (k, gate) in gates.iter_mut().enumerate() {
            let bias: Vec<f64> = self.b_input()[k]
                .data()
                .iter()
                .zip(self.b_hidden()[k].data())
                .map(|(a, b)| a + b)
                .collect();
            let mut pre = Vec::with_capacity(rows * hid);
            for _ in 0..rows {
                pre.extend_from_slice(&bias);
            }
            gemm(rows, n_in, hid, x, false, self.w_input()[k].data(), true, 1.0, &mut pre);
            *gate = pre;
        }
        let mut c = vec![0.0; rows * hid];
        let mut tanh_c = vec![0.0; rows * hid];
        let mut h = vec![0.0; rows * hid];
        for t in 0..steps {
            let span = t * bh..(t + 1) * bh;
            let h_prev: &[f64] = if t == 0 { h0 } else { &h[(t - 1) * bh..t * bh] };
            for (k, gate) in gates.iter_mut().enumerate() {
                gemm(batch, hid, hid, h_prev, false, self.w_hidden()[k].data(), true, 1.0, &mut gate[span.clone()]);
            }
            for idx in span.clone() {
                let i = sigmoid(gates[0][idx]);
                let f = sigmoid(gates[1][idx]);
                let g = gates[2][idx].tanh();
                let o = sigmoid(gates[3][idx]);
                gates[0][idx] = i;
                gates[1][idx] = f;
                gates[2][idx] = g;
                gates[3][idx] = o;
                let cp = if t == 0 { c0[idx] } else { c[idx - bh] };
                let cn = f * cp + i * g;
                c[idx] = cn;
                tanh_c[idx] = cn.tanh();
                h[idx] = o * tanh_c[idx];
            }
        }
        Ok(LstmTrace {
            steps,
            batch,
            x: x.to_vec(),
            h0: h0.to_vec(),
            c0: c0.to_vec(),
            gates,
            c,
            tanh_c,
            h,
        })
    }

    /// Backpropagation through time. `d_h` is the gradient with respect to
    /// every emitted hidden state (`[T*B*H]`); `d_c_last` optionally adds a
    /// gradient on the final cell state.
    pub fn backward_sequence(
        &self,
        trace: &LstmTrace,
        d_h: &[f64],
        d_c_last: Option<&[f64]>,
    ) -> Result<LstmGrads, NnError> {
        let (n_in, hid) = (self.input_size(), self.hidden_size());
        let (steps, batch) = (trace.steps, trace.batch);
        let bh = batch * hid;
        let rows = steps * batch;
        if d_h.len() != rows * hid {
            return Err(shape_err("lstm_backward", format!("[{}]", rows * hid), &[d_h.len()]));
        }
        let mut dh_next = vec![0.0; bh];
        let mut dc_next = match d_c_last {
            Some(d) if d.len() == bh => d.to_vec(),
            Some(d) => return Err(shape_err("lstm_backward", format!("[{bh}]"), &[d.len()])),
            None => vec![0.0; bh],
        };
        let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; rows * hid]);
        let mut dw_h: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hid * hid]);
        let [gi, gf, gg, go] = &trace.gates;
        for t in (0..steps).rev() {
            for local in 0..bh {
                let idx = t * bh + local;
                let dh = d_h[idx] + dh_next[local];
                let (i, f, g, o, tc) = (gi[idx], gf[idx], gg[idx], go[idx], trace.tanh_c[idx]);
                let cp = if t == 0 { trace.c0[local] } else { trace.c[idx - bh] };
                let dc = dc_next[local] + dh * o * (1.0 - tc * tc);
                da[0][idx] = dc * g * i * (1.0 - i);
                da[1][idx] = dc * cp * f * (1.0 - f);
                da[2][idx] = dc * i * (1.0 - g * g);
                da[3][idx] = dh * tc * o * (1.0 - o);
                dc_next[local] = dc * f;
            }
            let span = t * bh..(t + 1) * bh;
            let h_prev: &[f64] = if t == 0 { &trace.h0 } else { &trace.h[(t - 1) * bh..t * bh] };
            dh_next.fill(0.0);
            for k in 0..4 {
                gemm(batch, hid, hid, &da[k][span.clone()], false, self.w_hidden()[k].data(), false, 1.0, &mut dh_next);
                gemm(hid, batch, hid, &da[k][span.clone()], true, h_prev, false, 1.0, &mut dw_h[k]);
            }
        }
        let mut dx = vec![0.0; rows * n_in];
        let mut dw_i: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hid * n_in]);
        let mut db: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hid]);
        for k in 0..4 {
            gemm(rows, hid, n_in, &da[k], false, self.w_input()[k].data(), false, 1.0, &mut dx);
            gemm(hid, rows, n_in, &da[k], true, &trace.x, false, 0.0, &mut dw_i[k]);
            for row in da[k].chunks_exact(hid) {
                for (d, v) in db[k].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let wi = |v: &Vec<f64>| Tensor::from_vec(&[hid, n_in], v.clone()).expect("sized above");
        let wh = |v: &Vec<f64>| Tensor::from_vec(&[hid, hid], v.clone()).expect("sized above");
        let b = |v: &Vec<f64>| Tensor::from_vec(&[hid], v.clone()).expect("sized above");
        let mut params = Vec::with_capacity(16);
        params.extend(dw_i.iter().map(wi));
        params.extend(dw_h.iter().map(wh));
        params.extend(db.iter().map(b));
        params.extend(db.iter().map(b));
        Ok(LstmGrads {
            input: dx,
            h0: dh_next,
            c0: dc_next,
            params,
        })
    }
}

/// A single LSTM step for one sample: returns `(h_t, c_t)`.
pub fn lstm_cell(
    params: &LstmLayerParams,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
) -> Result<(Tensor, Tensor), NnError> {
    let hid = params.hidden_size();
    if x.shape() != [params.input_size()] {
        return Err(shape_err("lstm_cell", format!("[{}]", params.input_size()), x.shape()));
    }
    if h_prev.shape() != [hid] || c_prev.shape() != [hid] {
        return Err(shape_err("lstm_cell", format!("state [{hid}]"), h_prev.shape()));
    }
    let tr = params.forward_sequence(x.data(), 1, 1, h_prev.data(), c_prev.data())?;
    Ok((Tensor::vector(tr.last_hidden()), Tensor::vector(tr.last_cell())))
}

impl Parameterized for LstmLayerParams {
    fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.w_ii, &self.w_if, &self.w_ig, &self.w_io, &self.w_hi, &self.w_hf, &self.w_hg, &self.w_ho,
            &self.b_ii, &self.b_if, &self.b_ig, &self.b_io, &self.b_hi, &self.b_hf, &self.b_hg, &self.b_ho,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_ii, &mut self.w_if, &mut self.w_ig, &mut self.w_io,
            &mut self.w_hi, &mut self.w_hf, &mut self.w_hg, &mut self.w_ho,
            &mut self.b_ii, &mut self.b_if, &mut self.b_ig, &mut self.b_io,
            &mut self.b_hi, &mut self.b_hf, &mut self.b_hg, &mut self.b_ho,
        ]
    }

    fn param_info(&self) -> Vec<ParamInfo> {
        let mut v: Vec<ParamInfo> = ["w_ii", "w_if", "w_ig", "w_io", "w_hi", "w_hf", "w_hg", "w_ho"]
            .into_iter()
            .map(ParamInfo::weight)
            .collect();
        v.extend(
            ["b_ii", "b_if", "b_ig", "b_io", "b_hi", "b_hf", "b_hg", "b_ho"]
                .into_iter()
                .map(ParamInfo::bias),
        );
        v
    }
}
