//! Monte Carlo EM for stochastic blockmodels with dyadic covariates.
//!
//! Edges follow `logit P(a_ij = 1) = theta[z_i][z_j] + beta . X(i, j)` with
//! latent labels `z`. The crate fits `(theta, beta, pi)` by Monte Carlo EM,
//! optionally replacing the non-edge part of the likelihood with a
//! case-control estimate, and can split the fit across workers that pass
//! running estimates around a ring.
//!
//! Groups and nodes are 0-based in the Rust API. Files and CSV output use
//! 1-based numbering.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariates;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod gibbs;
pub mod init;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod modelselect;
pub mod mstep;
pub mod network;
pub mod parallel;
pub mod params;
pub mod rng;
pub mod validate;

pub use covariates::{BackendKind, DyadCovariates};
pub use error::{Error, Result};
pub use likelihood::{cc_log_lik, complete_log_lik, draw_plan, node_cond_log_lik, CaseControlPlan, PlanMode};
pub use network::Network;
pub use params::{Labels, Params};
pub use rng::RngSpec;
pub use validate::{validate, Violation};
