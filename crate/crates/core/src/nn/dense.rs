use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, shape_err, NnError, ParamInfo, Parameterized, Tensor};

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Dense {
            weight: Tensor::glorot(&[output, input], input, output, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Leading dimension of `x` is the batch when `x` is 2-D.
    fn batch_of(&self, x: &Tensor, op: &'static str) -> Result<usize, NnError> {
        let n_in = self.input_size();
        match x.shape() {
            [n] if *n == n_in => Ok(1),
            [b, n] if *n == n_in => Ok(*b),
            s => Err(shape_err(op, format!("[{n_in}] or [batch, {n_in}]"), s)),
        }
    }

    fn out_shape(x: &Tensor, out: usize) -> Vec<usize> {
        match x.shape() {
            [_] => vec![out],
            s => vec![s[0], out],
        }
    }

    /// Accepts `[in]` or `[batch, in]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let b = self.batch_of(x, "dense_forward")?;
        let (n_in, n_out) = (self.input_size(), self.output_size());
        let mut y = Vec::with_capacity(b * n_out);
        for _ in 0..b {
            y.extend_from_slice(self.bias.data());
        }
        gemm(b, n_in, n_out, x.data(), false, self.weight.data(), true, 1.0, &mut y);
        Tensor::from_vec(&Self::out_shape(x, n_out), y)
    }

    /// Exact gradients for input, weight and bias; batch contributions are
    /// summed.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<DenseGrads, NnError> {
        let b = self.batch_of(x, "dense_backward")?;
        let (n_in, n_out) = (self.input_size(), self.output_size());
        if grad_out.shape() != Self::out_shape(x, n_out).as_slice() {
            return Err(shape_err(
                "dense_backward",
                format!("{:?}", Self::out_shape(x, n_out)),
                grad_out.shape(),
            ));
        }
        let mut dx = vec![0.0; b * n_in];
        gemm(b, n_out, n_in, grad_out.data(), false, self.weight.data(), false, 0.0, &mut dx);
        let mut dw = vec![0.0; n_out * n_in];
        gemm(n_out, b, n_in, grad_out.data(), true, x.data(), false, 0.0, &mut dw);
        let mut db = vec![0.0; n_out];
        for row in grad_out.data().chunks_exact(n_out) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        Ok(DenseGrads {
            input: Tensor::from_vec(x.shape(), dx)?,
            weight: Tensor::from_vec(&[n_out, n_in], dw)?,
            bias: Tensor::from_vec(&[n_out], db)?,
        })
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn param_info(&self) -> Vec<ParamInfo> {
        vec![ParamInfo::weight("weight"), ParamInfo::bias("bias")]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use crate::seed;

    #[test]
    fn identity_weights() {
        let mut d = Dense::zeros(3, 3);
        for i in 0..3 {
            d.weight.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::vector(&[1.5, -2.0, 4.0]);
        assert_eq!(d.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_constant_output() {
        let mut d = Dense::zeros(4, 2);
        d.bias = Tensor::vector(&[3.0, -1.0]);
        let x = Tensor::vector(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.forward(&x).unwrap().data(), &[3.0, -1.0]);
        let g = d.backward(&x, &Tensor::vector(&[1.0, 1.0])).unwrap();
        assert!(g.input.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let d = Dense::zeros(4, 2);
        assert!(d.forward(&Tensor::vector(&[1.0, 2.0])).is_err());
        let x = Tensor::vector(&[1.0; 4]);
        assert!(d.backward(&x, &Tensor::vector(&[1.0; 3])).is_err());
    }

    #[test]
    fn batched_forward_matches_rows() {
        let d = Dense::new(5, 4, &mut seed::rng(1));
        let xs = Tensor::randn(&[3, 5], &mut seed::rng(2));
        let y = d.forward(&xs).unwrap();
        for b in 0..3 {
            let row = d.forward(&Tensor::vector(&xs.data()[b * 5..(b + 1) * 5])).unwrap();
            for (u, v) in row.data().iter().zip(&y.data()[b * 4..(b + 1) * 4]) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for s in 0..5 {
            let mut rng = seed::rng(100 + s);
            let layer = Dense::new(5, 4, &mut rng);
            let x = Tensor::randn(&[5], &mut rng);
            let w = Tensor::randn(&[4], &mut rng);
            let loss = |l: &Dense, x: &Tensor| -> f64 {
                l.forward(x).unwrap().data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            };
            let g = layer.backward(&x, &w).unwrap();
            let mut p = vec![layer.weight.clone(), layer.bias.clone(), x.clone()];
            let analytic = vec![g.weight, g.bias, g.input];
            let err = grad_check(
                &mut p,
                &analytic,
                |p| {
                    let l = Dense {
                        weight: p[0].clone(),
                        bias: p[1].clone(),
                    };
                    loss(&l, &p[2])
                },
                &GradCheckOptions::default(),
            );
            assert!(err < 1e-6, "seed {s}: {err}");
        }
    }
}
