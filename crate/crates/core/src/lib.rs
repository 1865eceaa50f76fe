//! Sequential posterior approximation for continuous-time filtering problems
//! with the splitting-up method, where each prediction step is a neural
//! network trained on Feynman-Kac Monte-Carlo targets.
//!
//! A run alternates two operations per observation interval:
//!
//! 1. **Prediction.** A fresh network is fit to
//!    `psi(X_T) exp(-int k(X_s) ds)` over auxiliary diffusion paths started
//!    uniformly on the domain, where `psi` is the previous posterior.
//! 2. **Correction.** The network is multiplied by the likelihood of the
//!    observation increment and normalized by a Monte-Carlo estimate of its
//!    integral.
//!
//! The [`reference`] module holds the oracles used to check the result: the
//! Kalman-Bucy filter, a pointwise Feynman-Kac estimator and a
//! finite-difference splitting-up filter.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod density;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod optim;
pub mod reference;
pub mod rng;
pub mod sde;
pub mod training;

pub use density::{Density, GaussianDensity};
pub use domain::Domain;
pub use error::{Error, Result};
pub use model::{make_benes_model, make_linear_model, BenesModelParams, FilterModel, LinearModelParams};
pub use rng::{Purpose, Streams};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/prediction.md")]
    mod prediction {}
    #[doc = include_str!("../../../book/src/correction.md")]
    mod correction {}
    #[doc = include_str!("../../../book/src/filter.md")]
    mod filter {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/run-directory.md")]
    mod run_directory {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
