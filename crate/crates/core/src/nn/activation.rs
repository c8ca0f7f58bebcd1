use serde::{Deserialize, Serialize};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = self.apply(*v));
        y
    }

    pub fn forward_in_place(self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = self.apply(*v));
    }

    /// `grad_in = grad_out ⊙ f'(x)` given the forward input and output.
    pub fn backward(self, x: &Tensor, y: &Tensor, grad_out: &Tensor) -> Tensor {
        let mut g = grad_out.clone();
        for ((g, x), y) in g.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
            *g *= self.derivative(*x, *y);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use crate::seed;

    #[test]
    fn spot_values() {
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert!(Activation::Sigmoid.apply(-800.0).is_finite());
        assert!(Activation::Sigmoid.apply(800.0) <= 1.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Identity, Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
            for s in 0..5 {
                let mut rng = seed::rng(400 + s);
                let mut x = Tensor::randn(&[20], &mut rng);
                // keep relu away from its kink
                x.data_mut().iter_mut().for_each(|v| {
                    if v.abs() < 1e-3 {
                        *v += 0.01
                    }
                });
                let w = Tensor::randn(&[20], &mut rng);
                let y = act.forward(&x);
                let g = act.backward(&x, &y, &w);
                let mut p = vec![x];
                let err = grad_check(
                    &mut p,
                    &[g],
                    |p| act.forward(&p[0]).data().iter().zip(w.data()).map(|(a, b)| a * b).sum(),
                    &GradCheckOptions::default(),
                );
                assert!(err < 1e-7, "{act:?} seed {s}: {err}");
            }
        }
    }
}
