//! A laboratory for studying how sequence models represent compositional
//! latent structure.
//!
//! The crate builds generalized hidden Markov models (GHMMs) out of small
//! elementary generators, composes them into multipartite processes
//! (independent, chained, or noise-coupled), samples token sequences with
//! exact belief-state ground truth attached, trains small sequence models
//! (decoder-only transformer, RNN, LSTM) on those sequences, and measures
//! whether the learned activations adopt a factored direct-sum geometry or a
//! joint tensor-product geometry.
//!
//! Modules:
//! - [`ghmm`]: single-factor generators, sequence probabilities, belief updates
//! - [`compose`]: multipartite generators, the sub-token codec, joint/factored
//!   state machinery, and the direct-sum embedding
//! - [`datagen`]: reproducible sequence sampling with ground-truth targets
//! - [`seqmodel`]: trainable sequence models with gradient checking and named
//!   activation capture
//! - [`analysis`]: PCA spectra, SVD regression, subspace identification and
//!   overlap diagnostics
//! - [`config`]: serializable process and experiment descriptions
//! - [`io`]: the header+payload tensor dump format and CSV report writers
//! - [`verify`]: the oracle-backed check suite used by `labcli verify` and the
//!   acceptance tests

// `a = a + b` in generic scalar code: `+=` would demand extra trait bounds,
// and the index-based loops in the model kernels address several arrays at
// once.
#![allow(clippy::assign_op_pattern, clippy::needless_range_loop)]

// Link the BLAS backend so ndarray's matrix products go through it.
extern crate blas_src;

pub mod analysis;
pub mod compose;
pub mod config;
pub mod datagen;
mod error;
pub mod ghmm;
pub mod io;
pub mod seqmodel;
pub mod verify;

pub use error::{Error, Result};
