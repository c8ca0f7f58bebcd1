use rand::seq::index::sample;

use super::{Parameterized, Tensor};
use crate::seed;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates checked per tensor; tensors at most this large are
    /// checked exhaustively.
    pub coords_per_tensor: usize,
    pub seed: u64,
    /// Floor on the relative-error denominator.
    pub min_scale: f64,
    /// Use the fourth-order five-point central stencil instead of the
    /// two-point one. Pair it with a larger `eps` on smooth losses, where it
    /// cuts round-off without adding truncation error.
    pub five_point: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            coords_per_tensor: 64,
            seed: 0,
            min_scale: 1e-8,
            five_point: false,
        }
    }
}

/// Compares `analytic` against central differences of `loss` around the
/// current parameters of `model`. Returns the maximum over sampled
/// coordinates of `|a - n| / max(|a|, |n|, min_scale)`.
///
/// Parameters are perturbed in place and restored afterwards.
pub fn grad_check<M, F>(model: &mut M, analytic: &[Tensor], mut loss: F, opts: &GradCheckOptions) -> f64
where
    M: Parameterized + ?Sized,
    F: FnMut(&M) -> f64,
{
    let sizes: Vec<usize> = model.params().iter().map(|t| t.len()).collect();
    assert_eq!(sizes.len(), analytic.len(), "gradient list does not match parameters");
    let mut rng = seed::rng(opts.seed);
    let mut worst = 0.0f64;
    for (pi, &n) in sizes.iter().enumerate() {
        assert_eq!(analytic[pi].len(), n, "gradient {pi} has the wrong size");
        let coords: Vec<usize> = if n <= opts.coords_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.coords_per_tensor).into_vec()
        };
        for c in coords {
            let orig = model.params()[pi].data()[c];
            let mut at = |delta: f64, model: &mut M| {
                model.params_mut()[pi].data_mut()[c] = orig + delta;
                loss(model)
            };
            let h = opts.eps;
            let numeric = if opts.five_point {
                let (m2, m1) = (at(-2.0 * h, model), at(-h, model));
                let (p1, p2) = (at(h, model), at(2.0 * h, model));
                (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h)
            } else {
                (at(h, model) - at(-h, model)) / (2.0 * h)
            };
            model.params_mut()[pi].data_mut()[c] = orig;
            let a = analytic[pi].data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.min_scale);
            worst = worst.max(rel);
        }
    }
    worst
}
