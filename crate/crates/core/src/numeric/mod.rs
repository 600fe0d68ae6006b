//! Deterministic numerical substrate: dense matrices, probability losses,
//! ridge regression, Adam, a small MLP and a finite-difference checker.

pub mod adam;
pub mod gradcheck;
mod matrix;
pub mod mlp;
pub mod prob;
pub mod ridge;

pub use adam::AdamState;
pub use gradcheck::grad_check;
pub(crate) use matrix::gemm_nn;
pub use matrix::{dot, sq_dist, Matrix};
pub use mlp::Mlp;
pub use prob::{argmax, cross_entropy, entropy, kl_to_uniform, softmax, ProbVector};
pub use ridge::{ridge_fit, Cholesky};
