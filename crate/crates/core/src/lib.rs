//! Alignment of two word-embedding spaces over the manifold of doubly
//! stochastic matrices.
//!
//! The crate is `no_std` (it needs `alloc`). Enable `std` for `std::error::Error`
//! integration, and `parallel` for row-parallel dense kernels through rayon.
//! Parallel kernels split work by output row only, so results do not depend on
//! the thread count.
//!
//! Layout:
//! - [`linalg`]: the small dense matrix type and the kernels everything else uses.
//! - [`ds_manifold`]: Fisher geometry of the doubly stochastic manifold.
//! - [`objective`]: the bi-directional covariance-matching cost and the
//!   Gromov-Wasserstein cost, evaluated through embedding factors.
//! - [`optimizer`]: Riemannian conjugate gradient and the vocabulary curriculum.
//! - [`gw_baseline`]: entropic Gromov-Wasserstein alignment.
//! - [`procrustes`]: orthogonal mapping extraction.
//! - [`inference`]: CSLS retrieval, precision metrics, permutation rounding.
//! - [`embedding`]: in-memory embedding matrices and bilingual dictionaries.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod ds_manifold;
pub mod embedding;
pub mod error;
pub mod gw_baseline;
pub mod inference;
pub mod linalg;
pub mod objective;
pub mod optimizer;
pub mod procrustes;
pub mod rng;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use ds_manifold::{AlignmentMatrix, ManifoldConfig, TangentVector};
pub use embedding::{BilingualDictionary, EmbeddingMatrix, NormState};
pub use error::{Error, Result};
pub use linalg::Mat;
pub use objective::{CovarianceOperator, ObjectiveValue};
