//! Blind source separation with a variational autoencoder whose latent
//! dimensions each carry their own learnable Gaussian-mixture prior.
//!
//! The crate is organized bottom-up:
//!
//! * [`diffnum`]: dense matrices and a reverse-mode tape,
//! * [`synthgen`]: non-Gaussian sources with linear and `tanh∘tanh` mixing,
//! * [`prior`]: the per-dimension mixture prior,
//! * [`model`]: encoder, decoder and the shared-variance posterior,
//! * [`objective`]: the scaled reconstruction + single-sample KL loss,
//! * [`trainer`]: reparameterized full-batch training with Adam,
//! * [`evalsep`]: permutation/sign-aware recovery metrics.
//!
//! With the default `parallel` feature, row-wise kernels and reductions run
//! on rayon. Chunk boundaries are fixed, so results are bit-identical to
//! the sequential build.

pub mod checkpoint;
pub mod csvio;
pub mod diffnum;
pub mod error;
pub mod evalsep;
pub mod matrix;
pub mod model;
pub mod objective;
pub mod par;
pub mod prior;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
