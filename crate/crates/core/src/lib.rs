//! Language-model prior graph regularization for cold-start item
//! recommendation.
//!
//! Item similarities estimated from pretrained text embeddings (a global RBF
//! kernel or a per-item Mahalanobis kernel) are stored as a sparse graph and
//! injected as a Laplacian penalty into the training objective of a BPR
//! matrix factorization model or an attentive sequential model.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod mf;
pub mod optim;
pub mod pipeline;
pub mod prior;
pub mod regularizer;
pub mod seq;
pub mod synth;

pub use error::{Error, Result};
