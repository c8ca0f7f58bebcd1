use serde::{Deserialize, Serialize};

use crate::preprocess::{flatten, ResampledSequence};

const MIN_STD: f64 = 1e-12;

/// Feature standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Standardizer {
    Identity,
    /// One mean/std per flattened feature (`3N` of them, interleaved).
    PerDimension { mean: Vec<f64>, std: Vec<f64> },
    /// One mean/std per rotation channel.
    PerChannel { mean: [f64; 3], std: [f64; 3] },
}

fn guarded_std(sum_sq_dev: f64, n: f64) -> f64 {
    let sd = (sum_sq_dev / n).sqrt();
    if sd < MIN_STD {
        1.0
    } else {
        sd
    }
}

impl Standardizer {
    pub fn fit_per_dimension(rows: &[ResampledSequence]) -> Self {
        let dim = rows.first().map_or(0, |r| 3 * r.n_features());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(flatten(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(flatten(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| guarded_std(s, n)).collect();
        Standardizer::PerDimension { mean, std }
    }

    pub fn fit_per_channel(rows: &[ResampledSequence]) -> Self {
        let mut mean = [0.0; 3];
        let mut std = [1.0; 3];
        let count = rows.iter().map(|r| r.n_features()).sum::<usize>() as f64;
        for c in 0..3 {
            let sum: f64 = rows.iter().flat_map(|r| r.values.iter().map(move |v| v[c])).sum();
            let m = sum / count;
            let sq: f64 = rows
                .iter()
                .flat_map(|r| r.values.iter().map(move |v| (v[c] - m) * (v[c] - m)))
                .sum();
            mean[c] = m;
            std[c] = guarded_std(sq, count);
        }
        Standardizer::PerChannel { mean, std }
    }

    /// Standardized `(yaw, pitch, roll)` rows.
    pub fn values(&self, r: &ResampledSequence) -> Vec<[f64; 3]> {
        match self {
            Standardizer::Identity => r.values.clone(),
            Standardizer::PerChannel { mean, std } => r
                .values
                .iter()
                .map(|v| std::array::from_fn(|c| (v[c] - mean[c]) / std[c]))
                .collect(),
            Standardizer::PerDimension { mean, std } => r
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| std::array::from_fn(|c| (v[c] - mean[3 * i + c]) / std[3 * i + c]))
                .collect(),
        }
    }

    /// Standardized flattened (interleaved) features.
    pub fn flat(&self, r: &ResampledSequence) -> Vec<f64> {
        self.values(r).into_iter().flatten().collect()
    }

    /// Standardized channel-major features: all yaw, then pitch, then roll.
    pub fn channel_major(&self, r: &ResampledSequence) -> Vec<f64> {
        let v = self.values(r);
        (0..3).flat_map(|c| v.iter().map(move |row| row[c])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor_data::Label;

    fn row(values: Vec<[f64; 3]>) -> ResampledSequence {
        ResampledSequence {
            values,
            label: Label::from_index(0).unwrap(),
            subject_id: "s".into(),
            sequence_id: "q".into(),
        }
    }

    #[test]
    fn per_dimension_zero_mean_unit_std() {
        let rows = vec![
            row(vec![[1.0, 5.0, 7.0], [0.0, 2.0, 3.0]]),
            row(vec![[3.0, 5.0, 1.0], [2.0, 4.0, 3.0]]),
        ];
        let s = Standardizer::fit_per_dimension(&rows);
        let a = s.flat(&rows[0]);
        let b = s.flat(&rows[1]);
        assert_eq!(a[0], -1.0);
        assert_eq!(b[0], 1.0);
        // constant dimension keeps unit scale
        assert_eq!(a[1], 0.0);
        assert_eq!(a[5], 0.0);
    }

    #[test]
    fn per_channel_statistics() {
        let rows = vec![row(vec![[1.0, 0.0, 2.0], [3.0, 0.0, 2.0]])];
        let Standardizer::PerChannel { mean, std } = Standardizer::fit_per_channel(&rows) else {
            panic!()
        };
        assert_eq!(mean, [2.0, 0.0, 2.0]);
        assert_eq!(std, [1.0, 1.0, 1.0]);
        let s = Standardizer::fit_per_channel(&rows);
        assert_eq!(s.channel_major(&rows[0]), vec![-1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
