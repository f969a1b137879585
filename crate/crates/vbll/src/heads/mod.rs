//! Variational Bayesian last layers.
//!
//! Each head owns a variational posterior over its last-layer parameters and
//! exposes the same three surfaces:
//!
//! - a **training objective** built on the tape as whole-batch matrix
//!   expressions: an average expected log-likelihood (`data_avg`), the KL
//!   divergence from the posterior to its prior (`kl`), and the log-prior of
//!   the noise covariance (`noise_logprior`). All three are exact in the
//!   variational parameters — no sampling enters the loss;
//! - **closed-form prediction** from plain parameter values;
//! - **named parameters** for optimizers and checkpoints.
//!
//! The objective assembled from the terms is
//! `data_avg + (noise_logprior - kl_weight * kl) / train_size`, maximized by
//! minimizing its negation; the `1/train_size` scaling keeps minibatch
//! gradients unbiased estimates of the full-data gradient.

pub mod discriminative;
pub mod generative;
pub mod hyper;
pub mod regression;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::mathcore::param::Parameter;
use crate::mathcore::tape::{Tape, Var};

pub use discriminative::{DiscriminativeConfig, DiscriminativeHead};
pub use generative::{GenerativeConfig, GenerativeHead};
pub use hyper::{HyperSpec, RawHyper, ReformulatedHyper};
pub use regression::{RegressionConfig, RegressionHead};

/// Supervision for one batch. Rows of the feature matrix pair with entries
/// here by position.
#[derive(Debug, Clone)]
pub enum Targets {
    /// Real-valued targets, one row per sample.
    Real(Array2<f64>),
    /// Class labels.
    Class(Vec<usize>),
    /// Bandit replay: each sample observed a reward on a single output row.
    MaskedReal {
        rewards: Array1<f64>,
        actions: Vec<usize>,
    },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(y) => y.nrows(),
            Targets::Class(y) => y.len(),
            Targets::MaskedReal { rewards, .. } => rewards.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy out the subset of targets at `idx`, in order.
    pub fn gather(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Real(y) => {
                let mut out = Array2::zeros((idx.len(), y.ncols()));
                for (r, &i) in idx.iter().enumerate() {
                    out.row_mut(r).assign(&y.row(i));
                }
                Targets::Real(out)
            }
            Targets::Class(y) => Targets::Class(idx.iter().map(|&i| y[i]).collect()),
            Targets::MaskedReal { rewards, actions } => Targets::MaskedReal {
                rewards: Array1::from_iter(idx.iter().map(|&i| rewards[i])),
                actions: idx.iter().map(|&i| actions[i]).collect(),
            },
        }
    }
}

/// The three tape-side pieces of a head's objective. Values are unscaled:
/// `data_avg` is already a per-sample average, while `kl` and
/// `noise_logprior` refer to the whole posterior and are divided by the
/// training-set size when combined.
pub struct Terms {
    pub data_avg: Var,
    pub kl: Var,
    pub noise_logprior: Var,
}

impl Terms {
    /// Assemble the maximization objective
    /// `data_avg + (noise_logprior - kl_weight * kl) / train_size`.
    pub fn objective(&self, tape: &mut Tape, kl_weight: f64, train_size: usize) -> Var {
        let t = train_size as f64;
        let kl_scaled = tape.scale(self.kl, kl_weight / t);
        let prior_scaled = tape.scale(self.noise_logprior, 1.0 / t);
        let reg = tape.sub(prior_scaled, kl_scaled);
        tape.add(self.data_avg, reg)
    }
}

/// Any of the three last-layer models, behind one dispatch surface so the
/// trainer and harness stay head-agnostic.
pub enum Head {
    Regression(RegressionHead),
    Discriminative(DiscriminativeHead),
    Generative(GenerativeHead),
}

impl Head {
    pub fn params(&self) -> Vec<&Parameter> {
        match self {
            Head::Regression(h) => h.params(),
            Head::Discriminative(h) => h.params(),
            Head::Generative(h) => h.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Head::Regression(h) => h.params_mut(),
            Head::Discriminative(h) => h.params_mut(),
            Head::Generative(h) => h.params_mut(),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Head::Regression(h) => h.n_features(),
            Head::Discriminative(h) => h.n_features(),
            Head::Generative(h) => h.n_features(),
        }
    }

    pub fn kl_weight(&self) -> f64 {
        match self {
            Head::Regression(h) => h.hyper().kl_weight,
            Head::Discriminative(h) => h.hyper().kl_weight,
            Head::Generative(h) => h.hyper().kl_weight,
        }
    }

    pub fn train_size(&self) -> usize {
        match self {
            Head::Regression(h) => h.train_size(),
            Head::Discriminative(h) => h.train_size(),
            Head::Generative(h) => h.train_size(),
        }
    }

    /// Rescale the regularizers against a new training-set size, e.g. when a
    /// replay buffer grows between refits.
    pub fn set_train_size(&mut self, train_size: usize) -> Result<()> {
        match self {
            Head::Regression(h) => h.set_train_size(train_size),
            Head::Discriminative(h) => h.set_train_size(train_size),
            Head::Generative(h) => h.set_train_size(train_size),
        }
    }

    /// Build the objective terms on `tape`. `phi` is the `(B, n_features)`
    /// feature node and `vars` are tape nodes for this head's parameters, in
    /// [`Head::params`] order.
    pub fn objective_terms(
        &self,
        tape: &mut Tape,
        phi: Var,
        targets: &Targets,
        vars: &[Var],
    ) -> Result<Terms> {
        let rows = tape.value(phi).shape()[0];
        if targets.len() != rows {
            return Err(Error::shape(
                "Head::objective_terms",
                format!("{rows} feature rows but {} targets", targets.len()),
            ));
        }
        match (self, targets) {
            (Head::Regression(h), Targets::Real(y)) => h.objective_terms(tape, phi, y, vars),
            (Head::Regression(h), Targets::MaskedReal { rewards, actions }) => {
                h.masked_objective_terms(tape, phi, rewards, actions, vars)
            }
            (Head::Discriminative(h), Targets::Class(y)) => {
                h.objective_terms(tape, phi, y, vars)
            }
            (Head::Generative(h), Targets::Class(y)) => h.objective_terms(tape, phi, y, vars),
            _ => Err(Error::invalid(
                "Head::objective_terms",
                "target kind does not match head kind",
            )),
        }
    }

    /// Evaluate the scalar objective at the current parameter values, with
    /// features supplied as plain data (no gradients). Used for evaluation
    /// curves and tests.
    pub fn objective_value(&self, phi_rows: &Array2<f64>, targets: &Targets) -> Result<f64> {
        let mut tape = Tape::new();
        let phi = tape.constant2(phi_rows);
        let vars: Vec<Var> = self
            .params()
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        let terms = self.objective_terms(&mut tape, phi, targets, &vars)?;
        let kl_weight = self.kl_weight();
        let t = self.train_size();
        let obj = terms.objective(&mut tape, kl_weight, t);
        Ok(tape.scalar_value(obj))
    }
}

/// One-hot encoding of labels as a constant `(B, n_classes)` node.
pub(crate) fn onehot_const(tape: &mut Tape, labels: &[usize], n_classes: usize) -> Var {
    let mut m = Array2::zeros((labels.len(), n_classes));
    for (i, &y) in labels.iter().enumerate() {
        m[[i, y]] = 1.0;
    }
    tape.constant2(&m)
}

/// Validate class labels against the class count.
pub(crate) fn check_labels(context: &'static str, labels: &[usize], n_classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::invalid(
            context,
            format!("label {bad} out of range for {n_classes} classes"),
        ));
    }
    Ok(())
}
