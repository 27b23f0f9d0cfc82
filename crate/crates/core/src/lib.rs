//! Planar normalizing flows inside a variational autoencoder.
//!
//! The crate is self-contained: [`gradcore`] is a small reverse-mode gradient
//! engine, [`flows`] implements planar flows and their log-det-Jacobians,
//! [`nets`] the encoder/decoder networks, [`elbo`] the flow-augmented training
//! objective, [`optim`] Adam, [`data`] MNIST IDX ingestion, and [`cli`] the
//! training, export and comparison commands behind the `pfvae` binary.

pub mod cli;
pub mod data;
pub mod elbo;
pub mod error;
pub mod flows;
pub mod gradcore;
pub mod nets;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use gradcore::{Gradients, Graph, ParamSet, Var};
pub use tensor::Tensor;
