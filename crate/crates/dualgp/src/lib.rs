//! Sparse variational Gaussian processes in the dual parameterization.
//!
//! A [`svgp::DualState`] stores the posterior through per-inducing-point dual
//! parameters `(lambda, Lambda)`. Fitting runs natural-gradient steps; new data
//! is absorbed in one additive step with [`svgp::DualState::dual_condition`],
//! which costs `O(n_new m^2 + m^3)` and never revisits old data. The same step
//! serves Gaussian and probit likelihoods.
//!
//! On top of that sit streaming classification ([`bo::run_streaming`]),
//! Kriging-Believer batch construction ([`fantasy::fantasize_batch`]) and a
//! batch Bayesian optimisation loop ([`bo::run_bo`]) with an expected
//! improvement times success probability acquisition.
//!
//! Runnable examples live in `examples/`:
//!
//! - `kernels_and_gram`: kernel evaluation and Gram matrices
//! - `likelihood_quadrature`: expected log-likelihoods and their gradients
//! - `gaussian_conditioning`: conditioning in any order equals one full fit
//! - `classification_fit`: probit classification on the banana set
//! - `streaming_banana`: batch-by-batch conditioning against an offline fit
//! - `kriging_believer_batch`: fantasized batches and EI collapse
//! - `constrained_bo`: batch versus sequential constrained BO
//! - `conditioning_benchmark`: timing of one-step conditioning
//! - `state_serialization`: JSON round trip of a fitted state
//! - `csv_stream`: CSV input and stream partitioning

pub mod acquisition;
pub mod bo;
pub mod cli;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod fantasy;
pub mod kernels;
pub mod likelihoods;
pub mod linalg;
pub mod normal;
pub mod optim;
pub mod state_io;
pub mod svgp;
