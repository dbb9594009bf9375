//! Negative-binomial-randomized gamma dynamical systems (NBRGDS) for
//! count-valued time series.
//!
//! The crate provides:
//! * [`dist`] — the distribution kernels everything else is built on
//!   (gamma/Poisson plumbing, Chinese-restaurant-table counts, Bessel counts,
//!   truncated and tilted Poissons, randomized-gamma densities);
//! * [`chains`] — forward simulation and closed-form conditional moments for
//!   the gamma Markov chain (GMC), the Poisson-randomized gamma Markov chain
//!   (PRGMC) and the negative-binomial-randomized gamma Markov process
//!   (NBRGMP);
//! * [`model`] — the full generative model: Poisson observations over latent
//!   gamma chains with per-component weights, loading columns, burstiness
//!   scaling, and plain / factor-structured / graph-structured transition
//!   priors;
//! * [`transition`] — inference machinery for the factor- and
//!   graph-structured transition priors (relational gamma process factors,
//!   Bernoulli–Poisson masks);
//! * [`inference`] — the Gibbs sampler, missing-data handling, and a
//!   forward/successive-conditional (Geweke-style) correctness harness;
//! * [`data`] — count matrix IO, masking, the zero-inflated negative-binomial
//!   synthetic generator, and held-out metrics;
//! * [`eval`] — held-out prediction and the smoothing/forecasting experiment
//!   harness.
//!
//! All randomness flows through [`rng::RngStream`] so that every run is
//! reproducible from a single seed.

pub mod chains;
pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod inference;
pub mod manifest;
pub mod model;
pub mod rng;
pub mod transition;

pub use error::{Error, Result};
