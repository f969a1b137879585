//! Head hyperparameters in two equivalent coordinate systems.
//!
//! The objective exposes four knobs: the weight prior scale, the KL weight,
//! and the inverse-Wishart degrees-of-freedom/scale on the noise covariance.
//! Sweeping those raw values is awkward because their effect moves with the
//! dataset size and output dimension, so a reparameterized form is also
//! supported where the knobs are the *mode* of the regularized noise
//! precision, the *mode* of the regularized posterior scale, and two
//! dimensionless strengths. The mapping is exact, so a config may specify
//! either form and training behaves identically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters as they enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawHyper {
    /// Variance `s` of the isotropic Gaussian prior on last-layer weights
    /// (per element).
    pub prior_scale: f64,
    /// Weight `lambda` on the KL term.
    pub kl_weight: f64,
    /// Degrees-of-freedom coefficient on `log det(precision)` in the
    /// inverse-Wishart noise prior.
    pub noise_dof: f64,
    /// Scale coefficient on `tr(precision)` in the inverse-Wishart noise
    /// prior.
    pub noise_scale: f64,
}

impl Default for RawHyper {
    /// Every knob set to 1.
    fn default() -> Self {
        RawHyper {
            prior_scale: 1.0,
            kl_weight: 1.0,
            noise_dof: 1.0,
            noise_scale: 1.0,
        }
    }
}

/// Hyperparameters as interpretable modes and strengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReformulatedHyper {
    /// Stationary point of the noise regularizer alone: the per-dimension
    /// noise *precision* the prior pulls toward.
    pub noise_precision_mode: f64,
    /// Stationary point of the KL regularizer alone: the per-dimension
    /// posterior covariance scale the prior pulls toward.
    pub posterior_scale_mode: f64,
    /// Dimensionless strength of the noise prior.
    pub noise_strength: f64,
    /// Dimensionless strength of the KL pull, per output and per datapoint.
    pub kl_strength: f64,
}

/// A config supplies exactly one of the two forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperSpec {
    Raw(RawHyper),
    Reformulated(ReformulatedHyper),
}

impl HyperSpec {
    /// Resolve to raw objective coefficients.
    ///
    /// The reformulated mapping is
    /// `prior_scale = posterior_scale_mode`,
    /// `noise_scale = noise_strength`,
    /// `noise_dof = noise_precision_mode * noise_strength`,
    /// `kl_weight = posterior_scale_mode * train_size * kl_strength / n_outputs`,
    /// chosen so the regularizers alone are stationary exactly at the stated
    /// modes and the strengths scale out dataset size and output width.
    pub fn resolve(&self, n_outputs: usize, train_size: usize) -> Result<RawHyper> {
        let raw = match *self {
            HyperSpec::Raw(raw) => raw,
            HyperSpec::Reformulated(r) => RawHyper {
                prior_scale: r.posterior_scale_mode,
                kl_weight: r.posterior_scale_mode * train_size as f64 * r.kl_strength
                    / n_outputs as f64,
                noise_dof: r.noise_precision_mode * r.noise_strength,
                noise_scale: r.noise_strength,
            },
        };
        if !(raw.prior_scale > 0.0) {
            return Err(Error::invalid(
                "HyperSpec::resolve",
                format!("prior_scale must be positive, got {}", raw.prior_scale),
            ));
        }
        if raw.kl_weight < 0.0 || raw.noise_dof < 0.0 || raw.noise_scale < 0.0 {
            return Err(Error::invalid(
                "HyperSpec::resolve",
                "kl_weight, noise_dof, and noise_scale must be non-negative".to_string(),
            ));
        }
        Ok(raw)
    }
}
