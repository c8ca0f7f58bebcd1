use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{ClassifierError, Standardizer};
use crate::preprocess::ResampledSequence;
use crate::sensor_data::{Label, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k: 2 }
    }
}

/// Brute-force k-nearest-neighbour vote over flattened rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<Label>,
    pub k: usize,
    pub standardizer: Standardizer,
}

/// Heap entry ordered by `(distance, training index)`.
#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl KnnModel {
    /// A model over already-prepared vectors.
    pub fn new(train_x: Vec<Vec<f64>>, train_y: Vec<Label>, k: usize) -> Result<Self, ClassifierError> {
        if train_x.is_empty() || train_x.len() != train_y.len() {
            return Err(ClassifierError::Empty);
        }
        if k == 0 || k > train_x.len() {
            return Err(ClassifierError::Config(format!(
                "knn.k = {k} must lie in 1..={}",
                train_x.len()
            )));
        }
        Ok(KnnModel {
            train_x,
            train_y,
            k,
            standardizer: Standardizer::Identity,
        })
    }

    /// Standardizes per flattened dimension using `rows` and stores them.
    pub fn fit(rows: &[ResampledSequence], cfg: &KnnConfig) -> Result<Self, ClassifierError> {
        let standardizer = Standardizer::fit_per_dimension(rows);
        let x = rows.iter().map(|r| standardizer.flat(r)).collect();
        let y = rows.iter().map(|r| r.label).collect();
        let mut m = KnnModel::new(x, y, cfg.k)?;
        m.standardizer = standardizer;
        Ok(m)
    }

    /// The `k` nearest training indices with their distances, nearest first.
    /// Equal distances favour the lower training index.
    pub fn neighbours(&self, x: &[f64]) -> Vec<(f64, usize)> {
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(self.k + 1);
        for (i, t) in self.train_x.iter().enumerate() {
            let c = Candidate(euclidean(t, x), i);
            if heap.len() < self.k {
                heap.push(c);
            } else if c < *heap.peek().expect("k >= 1") {
                heap.pop();
                heap.push(c);
            }
        }
        heap.into_sorted_vec().into_iter().map(|c| (c.0, c.1)).collect()
    }

    /// Majority vote among the neighbours. Ties go to the label with the
    /// smallest summed distance, then to the lowest label index.
    pub fn predict_vector(&self, x: &[f64]) -> Result<Label, ClassifierError> {
        let dim = self.train_x[0].len();
        if x.len() != dim {
            return Err(ClassifierError::Shape(format!("query of length {} where {dim} expected", x.len())));
        }
        Ok(vote(self.neighbours(x).iter().map(|&(d, i)| (d, self.train_y[i]))))
    }

    pub fn predict(&self, r: &ResampledSequence) -> Result<Label, ClassifierError> {
        self.predict_vector(&self.standardizer.flat(r))
    }
}

pub(crate) fn vote(neigh: impl Iterator<Item = (f64, Label)>) -> Label {
    let mut count = [0usize; NUM_CLASSES];
    let mut dist = [0.0f64; NUM_CLASSES];
    for (d, l) in neigh {
        count[l.index()] += 1;
        dist[l.index()] += d;
    }
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if count[c] > count[best] || (count[c] == count[best] && dist[c] < dist[best]) {
            best = c;
        }
    }
    Label::from_index(best).expect("index below NUM_CLASSES")
}
