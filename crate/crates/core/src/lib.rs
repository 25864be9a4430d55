//! Bayesian decomposition of sparse compositional land-cover observations
//! into a smooth natural-cover field and a human land-use field on a
//! regular lattice.
//!
//! The model places a separable Gauss–Markov random field prior on three
//! latent link-scale fields (two additive log-ratio coordinates for the
//! natural composition, one logit coordinate for the human fraction),
//! regresses their means on covariates under a grouped horseshoe prior, and
//! observes noisy compositions (Dirichlet) and human-use fractions (Beta)
//! at scattered cells. Inference runs a block-updated MCMC sampler:
//! preconditioned Langevin proposals for the latent block, conjugate and
//! random-walk updates for the hyperparameters.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod gmrf;
pub mod lattice;
pub mod likelihoods;
pub mod math;
pub mod model;
pub mod priors;
pub mod sampler;
pub mod synthetic;
pub mod transforms;

pub use error::{Error, Result};
