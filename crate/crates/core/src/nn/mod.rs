//! Minimal dense-tensor neural network toolkit.
//!
//! Every layer has an explicit forward and backward function; models keep
//! whatever activations they need for their own backward pass. There is no
//! general autodiff graph.

mod activation;
mod checkpoint;
mod conv;
mod dense;
mod gemm;
mod gradcheck;
mod loss;
mod lstm;
mod optim;
mod tensor;

use thiserror::Error;

pub use activation::Activation;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use conv::{maxpool1d, maxpool1d_backward, Conv1d, Conv1dGrads, PoolRouting};
pub use dense::{Dense, DenseGrads};
pub use gradcheck::{grad_check, GradCheckOptions};
pub use loss::{
    l2_penalty, softmax, softmax_cross_entropy, softmax_cross_entropy_batch,
};
pub use lstm::{lstm_cell, LstmGrads, LstmLayerParams, LstmTrace};
pub use optim::{AdamConfig, AdamState};
pub use tensor::Tensor;

pub(crate) use gemm::gemm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub(crate) fn shape_err(op: &'static str, expected: impl Into<String>, got: &[usize]) -> NnError {
    NnError::Shape {
        op,
        expected: expected.into(),
        got: got.to_vec(),
    }
}

/// Name and regularization flag of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    /// Weights are L2-regularized; biases are not.
    pub is_weight: bool,
}

impl ParamInfo {
    pub fn weight(name: impl Into<String>) -> Self {
        ParamInfo {
            name: name.into(),
            is_weight: true,
        }
    }

    pub fn bias(name: impl Into<String>) -> Self {
        ParamInfo {
            name: name.into(),
            is_weight: false,
        }
    }
}

/// A model with a fixed, ordered list of parameter tensors. Gradient vectors
/// and optimizer state use the same order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn param_info(&self) -> Vec<ParamInfo>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.param_info()
            .into_iter()
            .map(|i| i.name)
            .zip(self.params())
            .collect()
    }

    /// Overwrites parameters from `(name, tensor)` pairs, matching by name
    /// and shape.
    fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<(), NnError> {
        let names: Vec<String> = self.param_info().into_iter().map(|i| i.name).collect();
        if names.len() != tensors.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                tensors.len()
            )));
        }
        for ((name, dst), (src_name, src)) in names.iter().zip(self.params_mut()).zip(tensors) {
            if name != src_name || dst.shape() != src.shape() {
                return Err(NnError::Checkpoint(format!(
                    "tensor {src_name} {:?} does not match {name} {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

impl Parameterized for Vec<Tensor> {
    fn params(&self) -> Vec<&Tensor> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }

    fn param_info(&self) -> Vec<ParamInfo> {
        (0..self.len()).map(|i| ParamInfo::weight(format!("p{i}"))).collect()
    }
}

/// Zero tensors shaped like `model`'s parameters.
pub fn zeros_like_params<M: Parameterized + ?Sized>(model: &M) -> Vec<Tensor> {
    model
        .params()
        .iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect()
}

/// `acc += other`, elementwise over aligned gradient lists.
pub fn accumulate(acc: &mut [Tensor], other: &[Tensor]) {
    for (a, b) in acc.iter_mut().zip(other) {
        a.add_assign(b);
    }
}
