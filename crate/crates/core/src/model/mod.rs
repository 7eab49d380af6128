//! Feed-forward feature extractor and linear classifier with hand-written
//! forward and backward passes.

mod cosine;
mod extractor;
mod head;
mod params;

use thiserror::Error;

pub use cosine::{cosine_backward, cosine_scores};
pub use extractor::{backprop_extractor, forward_batch, forward_features, ForwardCache};
pub use head::{
    cross_entropy, grad_wrt_classifier, grad_wrt_features, logits, logits_batch, softmax, softmax_jacobian,
    softmax_rows, to_residual_form, BatchResidual, LOG_CLAMP,
};
pub use params::{Activation, LayerSpec, LayerView, LayerViewMut, ModelParams, ModelShape};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("backward pass called without a forward cache")]
    MissingCache,
    #[error("forward cache does not match the model ({layers} layers, batch {batch})")]
    CacheMismatch { layers: usize, batch: usize },
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
}
