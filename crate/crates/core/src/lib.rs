//! Distributionally robust training, checkpoint selection, continual
//! learning and adversarial-example metrics over small differentiable
//! classifiers. Everything numeric is generic over [`Scalar`] (`f32` or
//! `f64`); the aliases below fix the common `f64` instantiation.

// NaN must fail range checks, so negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advmetrics;
pub mod continual;
pub mod datasets;
pub mod diffcore;
pub mod dro;
mod error;
mod scalar;
pub mod seeding;
pub mod selection;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{dot, log_sum_exp, mean, norm2, softmax, Scalar};

pub type Model = diffcore::ModelState<f64>;
pub type Model32 = diffcore::ModelState<f32>;
pub type Dataset = datasets::GroupedDataset<f64>;
pub type Dataset32 = datasets::GroupedDataset<f32>;
pub type Sample = diffcore::Example<f64>;
pub type Gradient = diffcore::BatchGradient<f64>;
