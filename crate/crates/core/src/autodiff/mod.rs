//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes. Parameters enter
//! as [`Graph::param`] leaves, data as [`Graph::constant`] leaves, and
//! [`Graph::backward`] returns gradients for every parameter leaf. Every
//! forward operation rejects non-finite results.

mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor, MAGIC as CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, relative_error, GradCheck};
pub use graph::{argmax, softmax, Gradients, Graph, Var};
pub use tensor::Tensor;

/// Which loss [`loss`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// Target of a loss: class indices for cross-entropy, a tensor for MSE.
pub enum LossTarget<'a> {
    Classes(&'a [usize]),
    Values(Var),
}

/// Dispatches to [`Graph::cross_entropy`] or [`Graph::mse`].
pub fn loss(
    graph: &mut Graph,
    kind: LossKind,
    prediction: Var,
    target: LossTarget<'_>,
) -> crate::Result<Var> {
    match (kind, target) {
        (LossKind::CrossEntropy, LossTarget::Classes(c)) => graph.cross_entropy(prediction, c),
        (LossKind::Mse, LossTarget::Values(t)) => graph.mse(prediction, t),
        (kind, _) => Err(crate::Error::Contract(format!(
            "{kind:?} loss given the wrong kind of target"
        ))),
    }
}

#[cfg(test)]
mod tests;
