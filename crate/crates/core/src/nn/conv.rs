use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, shape_err, NnError, ParamInfo, Parameterized, Tensor};

const WIDTH: usize = 3;

/// 1-D convolution with kernel width 3, stride 1 and one zero of padding on
/// each side, so the sequence length is preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    /// `[out_ch, in_ch, 3]`
    pub kernels: Tensor,
    /// `[out_ch]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Conv1d {
            kernels: Tensor::glorot(&[out_ch, in_ch, WIDTH], in_ch * WIDTH, out_ch * WIDTH, rng),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Conv1d {
            kernels: Tensor::zeros(&[out_ch, in_ch, WIDTH]),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    /// Returns `(batch, length)` for an input of shape `[in_ch, L]` or
    /// `[batch, in_ch, L]`.
    fn dims(&self, x: &Tensor, op: &'static str) -> Result<(usize, usize), NnError> {
        let c = self.in_channels();
        match x.shape() {
            [ch, l] if *ch == c && *l >= 1 => Ok((1, *l)),
            [b, ch, l] if *ch == c && *l >= 1 => Ok((*b, *l)),
            s => Err(shape_err(op, format!("[{c}, L] or [batch, {c}, L]"), s)),
        }
    }

    fn out_shape(&self, x: &Tensor) -> Vec<usize> {
        let mut s = x.shape().to_vec();
        let n = s.len();
        s[n - 2] = self.out_channels();
        s
    }

    /// `cols[(c*3 + k), l] = x[c, l + k - 1]` with zeros outside.
    fn im2col(x: &[f64], in_ch: usize, len: usize, cols: &mut [f64]) {
        cols.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..in_ch {
            let src = &x[c * len..(c + 1) * len];
            for k in 0..WIDTH {
                let dst = &mut cols[(c * WIDTH + k) * len..(c * WIDTH + k + 1) * len];
                match k {
                    0 => dst[1..].copy_from_slice(&src[..len - 1]),
                    1 => dst.copy_from_slice(src),
                    _ => dst[..len - 1].copy_from_slice(&src[1..]),
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let (batch, len) = self.dims(x, "conv1d_forward")?;
        let (ci, co) = (self.in_channels(), self.out_channels());
        let mut out = vec![0.0; batch * co * len];
        let mut cols = vec![0.0; ci * WIDTH * len];
        for b in 0..batch {
            Self::im2col(&x.data()[b * ci * len..(b + 1) * ci * len], ci, len, &mut cols);
            let y = &mut out[b * co * len..(b + 1) * co * len];
            for (o, row) in y.chunks_exact_mut(len).enumerate() {
                row.fill(self.bias.data()[o]);
            }
            gemm(co, ci * WIDTH, len, self.kernels.data(), false, &cols, false, 1.0, y);
        }
        Tensor::from_vec(&self.out_shape(x), out)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<Conv1dGrads, NnError> {
        let (batch, len) = self.dims(x, "conv1d_backward")?;
        let (ci, co) = (self.in_channels(), self.out_channels());
        if grad_out.shape() != self.out_shape(x).as_slice() {
            return Err(shape_err(
                "conv1d_backward",
                format!("{:?}", self.out_shape(x)),
                grad_out.shape(),
            ));
        }
        let mut dk = vec![0.0; co * ci * WIDTH];
        let mut db = vec![0.0; co];
        let mut dx = vec![0.0; batch * ci * len];
        let mut cols = vec![0.0; ci * WIDTH * len];
        let mut dcols = vec![0.0; ci * WIDTH * len];
        for b in 0..batch {
            Self::im2col(&x.data()[b * ci * len..(b + 1) * ci * len], ci, len, &mut cols);
            let g = &grad_out.data()[b * co * len..(b + 1) * co * len];
            for (o, row) in g.chunks_exact(len).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
            gemm(co, len, ci * WIDTH, g, false, &cols, true, 1.0, &mut dk);
            gemm(ci * WIDTH, co, len, self.kernels.data(), true, g, false, 0.0, &mut dcols);
            let dxb = &mut dx[b * ci * len..(b + 1) * ci * len];
            for c in 0..ci {
                let dst = &mut dxb[c * len..(c + 1) * len];
                for k in 0..WIDTH {
                    let src = &dcols[(c * WIDTH + k) * len..(c * WIDTH + k + 1) * len];
                    match k {
                        0 => dst[..len - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..len - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
        Ok(Conv1dGrads {
            input: Tensor::from_vec(x.shape(), dx)?,
            kernels: Tensor::from_vec(&[co, ci, WIDTH], dk)?,
            bias: Tensor::from_vec(&[co], db)?,
        })
    }
}

impl Parameterized for Conv1d {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.kernels, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.kernels, &mut self.bias]
    }

    fn param_info(&self) -> Vec<ParamInfo> {
        vec![ParamInfo::weight("kernels"), ParamInfo::bias("bias")]
    }
}

/// Which input element each pooled output came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRouting {
    shape: Vec<usize>,
    /// Offset into the input, or `None` when the zero pad won.
    source: Vec<Option<u32>>,
}

/// Max-pool with window 2 and stride 1 over the last axis, right-padded with
/// one zero so the length is unchanged: `y[l] = max(x[l], x[l+1])`. Ties go
/// to the earlier element.
pub fn maxpool1d(x: &Tensor) -> (Tensor, PoolRouting) {
    let len = *x.shape().last().expect("maxpool1d needs at least one axis");
    let mut out = Vec::with_capacity(x.len());
    let mut source = Vec::with_capacity(x.len());
    for (r, row) in x.data().chunks_exact(len).enumerate() {
        let base = r * len;
        for l in 0..len {
            let a = row[l];
            let (v, src) = if l + 1 < len {
                if a >= row[l + 1] {
                    (a, Some(base + l))
                } else {
                    (row[l + 1], Some(base + l + 1))
                }
            } else if a >= 0.0 {
                (a, Some(base + l))
            } else {
                (0.0, None)
            };
            out.push(v);
            source.push(src.map(|s| s as u32));
        }
    }
    let routing = PoolRouting {
        shape: x.shape().to_vec(),
        source,
    };
    (
        Tensor::from_vec(x.shape(), out).expect("same element count"),
        routing,
    )
}

pub fn maxpool1d_backward(grad_out: &Tensor, routing: &PoolRouting) -> Result<Tensor, NnError> {
    if grad_out.shape() != routing.shape.as_slice() {
        return Err(shape_err("maxpool1d_backward", format!("{:?}", routing.shape), grad_out.shape()));
    }
    let mut dx = vec![0.0; grad_out.len()];
    for (g, src) in grad_out.data().iter().zip(&routing.source) {
        if let Some(s) = src {
            dx[*s as usize] += g;
        }
    }
    Tensor::from_vec(&routing.shape, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use crate::seed;

    #[test]
    fn centre_tap_kernel_is_identity() {
        let mut c = Conv1d::zeros(1, 1);
        c.kernels.data_mut()[1] = 1.0;
        let x = Tensor::from_vec(&[1, 5], vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        assert_eq!(c.forward(&x).unwrap(), x);
    }

    #[test]
    fn ones_kernel_with_zero_padding() {
        let mut c = Conv1d::zeros(1, 1);
        c.kernels.fill(1.0);
        let x = Tensor::from_vec(&[1, 4], vec![1.0; 4]).unwrap();
        assert_eq!(c.forward(&x).unwrap().data(), &[2.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn conv_preserves_length_and_rejects_bad_shapes() {
        let c = Conv1d::new(3, 8, &mut seed::rng(0));
        let x = Tensor::randn(&[2, 3, 11], &mut seed::rng(1));
        assert_eq!(c.forward(&x).unwrap().shape(), &[2, 8, 11]);
        assert!(c.forward(&Tensor::zeros(&[4, 11])).is_err());
        let y = Tensor::zeros(&[2, 7, 11]);
        assert!(c.backward(&x, &y).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for s in 0..5 {
            let mut rng = seed::rng(200 + s);
            let conv = Conv1d::new(3, 4, &mut rng);
            let x = Tensor::randn(&[3, 7], &mut rng);
            let w = Tensor::randn(&[4, 7], &mut rng);
            let g = conv.backward(&x, &w).unwrap();
            let mut p = vec![conv.kernels.clone(), conv.bias.clone(), x.clone()];
            let err = grad_check(
                &mut p,
                &[g.kernels, g.bias, g.input],
                |p| {
                    let c = Conv1d {
                        kernels: p[0].clone(),
                        bias: p[1].clone(),
                    };
                    c.forward(&p[2]).unwrap().data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
                },
                &GradCheckOptions::default(),
            );
            assert!(err < 1e-6, "seed {s}: {err}");
        }
    }

    #[test]
    fn pool_values() {
        let (y, _) = maxpool1d(&Tensor::vector(&[1.0, 2.0, 3.0]));
        assert_eq!(y.data(), &[2.0, 3.0, 3.0]);
        let (y, _) = maxpool1d(&Tensor::vector(&[4.0; 6]));
        assert!(y.data().iter().all(|v| *v == 4.0));
        let (y, _) = maxpool1d(&Tensor::vector(&[-1.0, -3.0]));
        assert_eq!(y.data(), &[-1.0, 0.0]);
    }

    #[test]
    fn pool_routes_to_argmax() {
        let (_, r) = maxpool1d(&Tensor::vector(&[1.0, 5.0, 2.0]));
        let g = maxpool1d_backward(&Tensor::vector(&[1.0, 0.0, 0.0]), &r).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
        // ties go to the earlier index
        let (_, r) = maxpool1d(&Tensor::vector(&[2.0, 2.0]));
        let g = maxpool1d_backward(&Tensor::vector(&[1.0, 0.0]), &r).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0]);
    }

    #[test]
    fn pool_gradients_match_finite_differences() {
        for s in 0..5 {
            let mut rng = seed::rng(300 + s);
            let x = Tensor::randn(&[2, 3, 9], &mut rng);
            let w = Tensor::randn(&[2, 3, 9], &mut rng);
            let (_, r) = maxpool1d(&x);
            let g = maxpool1d_backward(&w, &r).unwrap();
            let mut p = vec![x];
            let err = grad_check(
                &mut p,
                &[g],
                |p| maxpool1d(&p[0]).0.data().iter().zip(w.data()).map(|(a, b)| a * b).sum(),
                &GradCheckOptions { eps: 1e-6, ..Default::default() },
            );
            assert!(err < 1e-6, "seed {s}: {err}");
        }
    }
}
