//! Variational Bayesian last-layer models with deterministic, sampling-free
//! training objectives.
//!
//! The crate trains neural networks whose final layer is a Bayesian linear
//! model held in closed form: a matrix-normal posterior over last-layer
//! weights for regression, per-class Gaussian weight posteriors for
//! discriminative classification, and Gaussian class-conditional feature
//! densities with a Dirichlet prior over labels for generative
//! classification. All three training losses are exact expectations under the
//! variational posterior — no Monte Carlo over last-layer weights — so a
//! training step is an ordinary deterministic gradient step, and predictive
//! distributions come out in closed form alongside calibrated uncertainty and
//! out-of-distribution scores.
//!
//! Module map:
//! - [`mathcore`]: reverse-mode tape over dense arrays, special functions.
//! - [`psdparam`]: Cholesky-style parameterizations of PSD matrices.
//! - [`dists`]: Gaussian/Dirichlet/inverse-Wishart quantities used by losses.
//! - [`heads`]: the three last-layer models and their objectives.
//! - [`backbone`]: deterministic and variational MLP feature maps.
//! - [`train`]: optimizers and the three training modes.
//! - [`evalood`]: predictive metrics, calibration, and OOD scoring.
//! - [`bandit`]: a contextual-bandit harness with Thompson sampling.
//! - [`harness`]: configs, datasets, experiment orchestration.

pub mod backbone;
pub mod bandit;
pub mod dists;
pub mod error;
pub mod evalood;
pub mod harness;
pub mod heads;
pub mod mathcore;
pub mod psdparam;
pub mod train;
pub mod util;

pub use error::{Error, Result};
