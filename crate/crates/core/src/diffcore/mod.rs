//! Tiny differentiable classifiers: a linear model, a one-hidden-layer tanh
//! MLP and a mean-pooled embedding bag, all over one flat parameter vector
//! with exact backpropagation.

mod check;
mod forward;
mod model;

pub use check::{
    adversarial_loss_from_logits, embedding_loss_logit_grad, finite_diff_check, fisher_diag, grad_wrt_embeddings, EmbeddingLoss,
};
pub use forward::{
    argmax, example_loss, forward_logits, grad_params, grad_selected_logits, losses, nll_from_logits, nll_loss, predict,
    zero_one_loss, LossKind,
};
pub use model::{Architecture, BatchGradient, Example, Input, Layout, ModelSpec, ModelState, Slot};

pub fn init_params<T: crate::Scalar>(spec: ModelSpec, seed: u64) -> crate::Result<ModelState<T>> {
    ModelState::init(spec, seed)
}
