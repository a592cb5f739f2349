//! A small CPU tensor engine with exactly the layers the detector needs:
//! dense, layer normalization, gelu, (spatial) dropout, global max pooling
//! and a fused softmax/cross-entropy head, each with an analytic backward.

mod gemm;
mod gradcheck;
mod layers;
mod scalar;
mod tape;
mod tensor;

use thiserror::Error;

pub use gemm::{gemm, gemm_nt, gemm_tn};
pub use gradcheck::{grad_check, grad_check_coords, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use layers::{
    cross_entropy, dense_forward, dropout, gelu, gelu_derivative, global_max_pool,
    layernorm_forward, softmax, spatial_dropout, DenseLayer, LayerNormParams, MaxPool, Mode,
    LAYERNORM_EPS,
};
pub use scalar::Scalar;
pub use tape::{backward, backward_into, Node, Tape};
pub use tensor::Tensor;
pub(crate) use layers::{gelu_in_place, layernorm_rows};
pub(crate) use tape::embed_into;
pub(crate) use tensor::transpose_into;

/// Errors raised by the tensor engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("cannot reduce over an empty axis")]
    EmptyAxis,
    #[error("dropout rate {0} is outside [0, 1)")]
    BadRate(f64),
    #[error("backward called on an empty tape")]
    TapeEmpty,
    #[error("tape does not end with a loss node")]
    NoLoss,
}

pub(crate) fn shape_err(expected: impl Into<String>, found: impl Into<String>) -> NnError {
    NnError::ShapeMismatch {
        expected: expected.into(),
        found: found.into(),
    }
}
