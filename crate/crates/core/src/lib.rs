//! Downlink channel estimation from precoding-matrix-indicator (PMI) feedback.
//!
//! The user reports only the index of the codeword that maximizes its
//! effective gain after a dimensionality-reduction matrix `Q_t`. Modeling the
//! report as a softmax over codebook gains with temperature `tau` gives a
//! likelihood in the unknown channel, which [`likelihood::solve_mle`]
//! minimizes by projected gradient descent.
//!
//! Modules:
//! - [`model`]: codebooks, feedback rounds, softmax probabilities, PMI sampling.
//! - [`designs`]: DFT codebooks, Haar/structured/Type-I reduction matrices, synthetic channels.
//! - [`likelihood`]: negative log-likelihood, gradient, Hessian, MLE solver, excess risk.
//! - [`crb`]: realification, Fisher information, gauge checks, trace-pseudoinverse bound.
//! - [`baselines`]: spectral, alternating minimization, subspace phase retrieval.
//! - [`theory`]: computable constants and Monte-Carlo certification of the assumptions.
//! - [`metrics`]: phase-invariant distance, beam precision, Procrustes relative change.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod crb;
pub mod designs;
mod error;
pub mod likelihood;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use linalg::{CMat, RMat, C64};
