//! Regression head: matrix-normal posterior over last-layer weights with a
//! learned noise covariance.
//!
//! Model: `y = W phi + eps`, `eps ~ N(0, Sigma)`. The variational posterior
//! over `W` is matrix-normal with mean `w_mean`, identity row coupling, and a
//! shared column covariance `S` held as a triangular factor; the noise is
//! parameterized through its *precision* `Sigma^{-1} = L L^T`, so its
//! log-determinant is linear in the factor's log-diagonal and the expected
//! log-likelihood stays exact:
//!
//! `E_q[log N(y | W phi, Sigma)] = log N(y | w_mean phi, Sigma)
//!    - phi^T S phi * tr(Sigma^{-1}) / 2`.
//!
//! A masked variant trains only the observed output row per sample (one
//! bandit arm's reward), which drops the cross-row coupling and uses the
//! per-row noise precision instead of the full trace.

use ndarray::{Array1, Array2, ArrayView1, Ix1, Ix2};
use rand::Rng;

use crate::dists::LN_2PI;
use crate::error::{Error, Result};
use crate::heads::hyper::RawHyper;
use crate::heads::{onehot_const, Terms};
use crate::mathcore::param::Parameter;
use crate::mathcore::tape::{Tape, Var};
use crate::psdparam::{FactorLayout, FactorVars, TriangularFactor};

#[derive(Debug, Clone)]
pub struct RegressionConfig {
    pub n_features: usize,
    pub n_outputs: usize,
    /// Layout of the posterior column covariance `S`.
    pub posterior_layout: FactorLayout,
    /// Layout of the noise precision factor.
    pub noise_layout: FactorLayout,
    pub hyper: RawHyper,
    /// Size of the training set the objective is scaled against.
    pub train_size: usize,
}

pub struct RegressionHead {
    n_features: usize,
    n_outputs: usize,
    posterior_layout: FactorLayout,
    noise_layout: FactorLayout,
    hyper: RawHyper,
    train_size: usize,
    w_mean: Parameter,
    s_off: Option<Parameter>,
    s_log_diag: Parameter,
    noise_off: Option<Parameter>,
    noise_log_diag: Parameter,
}

/// Parameter/tape-var ordering shared by `params()` and the loss builders.
struct VarSplit {
    w_mean: Var,
    s_off: Option<Var>,
    s_log_diag: Var,
    noise_off: Option<Var>,
    noise_log_diag: Var,
}

impl RegressionHead {
    pub fn new(cfg: RegressionConfig) -> Result<Self> {
        if cfg.n_features == 0 || cfg.n_outputs == 0 {
            return Err(Error::invalid(
                "RegressionHead::new",
                "n_features and n_outputs must be positive",
            ));
        }
        if cfg.train_size == 0 {
            return Err(Error::invalid(
                "RegressionHead::new",
                "train_size must be positive",
            ));
        }
        let s_off = match cfg.posterior_layout {
            FactorLayout::Dense => Some(Parameter::new(
                "head.s_off",
                Array2::<f64>::zeros((cfg.n_features, cfg.n_features)).into_dyn(),
            )),
            FactorLayout::Diagonal => None,
        };
        let noise_off = match cfg.noise_layout {
            FactorLayout::Dense => Some(Parameter::new(
                "head.noise_off",
                Array2::<f64>::zeros((cfg.n_outputs, cfg.n_outputs)).into_dyn(),
            )),
            FactorLayout::Diagonal => None,
        };
        Ok(RegressionHead {
            n_features: cfg.n_features,
            n_outputs: cfg.n_outputs,
            posterior_layout: cfg.posterior_layout,
            noise_layout: cfg.noise_layout,
            hyper: cfg.hyper,
            train_size: cfg.train_size,
            w_mean: Parameter::new(
                "head.w_mean",
                Array2::<f64>::zeros((cfg.n_outputs, cfg.n_features)).into_dyn(),
            ),
            s_off,
            s_log_diag: Parameter::new(
                "head.s_log_diag",
                Array1::<f64>::zeros(cfg.n_features).into_dyn(),
            ),
            noise_off,
            noise_log_diag: Parameter::new(
                "head.noise_log_diag",
                Array1::<f64>::zeros(cfg.n_outputs).into_dyn(),
            ),
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn hyper(&self) -> &RawHyper {
        &self.hyper
    }

    pub fn train_size(&self) -> usize {
        self.train_size
    }

    /// Rescale the regularizers against a new training-set size, e.g. when a
    /// replay buffer grows between refits.
    pub fn set_train_size(&mut self, train_size: usize) -> Result<()> {
        if train_size == 0 {
            return Err(Error::invalid(
                "RegressionHead::set_train_size",
                "train_size must be positive",
            ));
        }
        self.train_size = train_size;
        Ok(())
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.w_mean];
        if let Some(p) = &self.s_off {
            out.push(p);
        }
        out.push(&self.s_log_diag);
        if let Some(p) = &self.noise_off {
            out.push(p);
        }
        out.push(&self.noise_log_diag);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.w_mean];
        if let Some(p) = &mut self.s_off {
            out.push(p);
        }
        out.push(&mut self.s_log_diag);
        if let Some(p) = &mut self.noise_off {
            out.push(p);
        }
        out.push(&mut self.noise_log_diag);
        out
    }

    fn split_vars(&self, vars: &[Var]) -> Result<VarSplit> {
        let expected = 3 + usize::from(self.s_off.is_some()) + usize::from(self.noise_off.is_some());
        if vars.len() != expected {
            return Err(Error::invalid(
                "RegressionHead",
                format!("expected {expected} parameter vars, got {}", vars.len()),
            ));
        }
        let mut it = vars.iter().copied();
        let w_mean = it.next().unwrap();
        let s_off = self.s_off.as_ref().map(|_| it.next().unwrap());
        let s_log_diag = it.next().unwrap();
        let noise_off = self.noise_off.as_ref().map(|_| it.next().unwrap());
        let noise_log_diag = it.next().unwrap();
        Ok(VarSplit {
            w_mean,
            s_off,
            s_log_diag,
            noise_off,
            noise_log_diag,
        })
    }

    /// Shared KL and noise log-prior expressions.
    fn regularizer_terms(
        &self,
        tape: &mut Tape,
        v: &VarSplit,
        s_fv: &FactorVars,
        noise_fv: &FactorVars,
    ) -> (Var, Var) {
        let s = self.hyper.prior_scale;
        let n_y = self.n_outputs as f64;
        let n_phi = self.n_features as f64;

        // KL(MN(w_mean, I, S) || MN(0, I, s I)), all constants kept.
        let wq = tape.sum_sq(v.w_mean);
        let trs = s_fv.trace_gram(tape);
        let lds = s_fv.log_det_gram(tape);
        let t_mean = tape.scale(wq, 0.5 / s);
        let t_tr = tape.scale(trs, 0.5 * n_y / s);
        let t_ld = tape.scale(lds, -0.5 * n_y);
        let partial = tape.add(t_mean, t_tr);
        let partial = tape.add(partial, t_ld);
        let kl = tape.add_const(partial, 0.5 * n_y * n_phi * (s.ln() - 1.0));

        // Inverse-Wishart log-prior through the precision.
        let ld_prec = noise_fv.log_det_gram(tape);
        let tr_prec = noise_fv.trace_gram(tape);
        let w_ld = tape.scale(ld_prec, 0.5 * self.hyper.noise_dof);
        let w_tr = tape.scale(tr_prec, -0.5 * self.hyper.noise_scale);
        let noise_logprior = tape.add(w_ld, w_tr);
        (kl, noise_logprior)
    }

    /// Objective terms for fully observed targets `(B, n_outputs)`.
    pub fn objective_terms(
        &self,
        tape: &mut Tape,
        phi: Var,
        y: &Array2<f64>,
        vars: &[Var],
    ) -> Result<Terms> {
        let v = self.split_vars(vars)?;
        if y.ncols() != self.n_outputs {
            return Err(Error::shape(
                "RegressionHead::objective_terms",
                format!("targets have {} columns, head has {} outputs", y.ncols(), self.n_outputs),
            ));
        }
        let b = y.nrows() as f64;
        let s_fv = FactorVars::build(tape, self.posterior_layout, v.s_off, v.s_log_diag)?;
        let noise_fv = FactorVars::build(tape, self.noise_layout, v.noise_off, v.noise_log_diag)?;

        // log N(y | w_mean phi, Sigma), summed over the batch.
        let yv = tape.constant2(y);
        let wt = tape.transpose(v.w_mean);
        let pred = tape.matmul(phi, wt);
        let err = tape.sub(yv, pred);
        let resid_quad = noise_fv.quad_form_sum(tape, err);

        // Exact penalty: sum_t phi_t^T S phi_t * tr(Sigma^{-1}).
        let s_quad = s_fv.quad_form_sum(tape, phi);
        let tr_prec = noise_fv.trace_gram(tape);
        let penalty = tape.mul(s_quad, tr_prec);

        let ld_prec = noise_fv.log_det_gram(tape);
        let base = tape.scale(ld_prec, 0.5);
        let base = tape.add_const(base, -0.5 * self.n_outputs as f64 * LN_2PI);
        let rq = tape.scale(resid_quad, -0.5 / b);
        let pen = tape.scale(penalty, -0.5 / b);
        let partial = tape.add(base, rq);
        let data_avg = tape.add(partial, pen);

        let (kl, noise_logprior) = self.regularizer_terms(tape, &v, &s_fv, &noise_fv);
        Ok(Terms {
            data_avg,
            kl,
            noise_logprior,
        })
    }

    /// Objective terms when each sample observes a single output row (bandit
    /// replay: `rewards[t]` was produced by row `actions[t]`).
    ///
    /// Requires the diagonal noise layout: with uncorrelated noise the
    /// unobserved rows marginalize out and the per-sample likelihood only
    /// involves the chosen row's precision `exp(2 * noise_log_diag[a])`:
    ///
    /// `log N(r | w_a . phi, sigma_a^2) - phi^T S phi * exp(2 l_a) / 2`.
    pub fn masked_objective_terms(
        &self,
        tape: &mut Tape,
        phi: Var,
        rewards: &Array1<f64>,
        actions: &[usize],
        vars: &[Var],
    ) -> Result<Terms> {
        let v = self.split_vars(vars)?;
        if !matches!(self.noise_layout, FactorLayout::Diagonal) {
            return Err(Error::invalid(
                "RegressionHead::masked_objective_terms",
                "masked targets require the diagonal noise layout",
            ));
        }
        crate::heads::check_labels(
            "RegressionHead::masked_objective_terms",
            actions,
            self.n_outputs,
        )?;
        if rewards.len() != actions.len() {
            return Err(Error::shape(
                "RegressionHead::masked_objective_terms",
                format!("{} rewards vs {} actions", rewards.len(), actions.len()),
            ));
        }
        let b = rewards.len() as f64;
        let s_fv = FactorVars::build(tape, self.posterior_layout, v.s_off, v.s_log_diag)?;
        let noise_fv =
            FactorVars::build(tape, self.noise_layout, v.noise_off, v.noise_log_diag)?;

        // Predicted reward of the taken action: rows of phi W^T masked by a
        // one-hot action matrix.
        let wt = tape.transpose(v.w_mean);
        let z = tape.matmul(phi, wt);
        let mask = onehot_const(tape, actions, self.n_outputs);
        let zm = tape.mul(z, mask);
        let picked = tape.row_sums(zm);
        let rv = tape.constant1(rewards);
        let resid = tape.sub(rv, picked);

        // Per-sample precision of the observed row.
        let l_a = tape.gather_elems(v.noise_log_diag, actions);
        let two_l_a = tape.scale(l_a, 2.0);
        let prec_a = tape.exp(two_l_a);

        let r2 = tape.mul(resid, resid);
        let rq = tape.mul(r2, prec_a);
        let rq_sum = tape.sum(rq);

        let s_quads = s_fv.quad_form_batch(tape, phi);
        let pen = tape.mul(s_quads, prec_a);
        let pen_sum = tape.sum(pen);

        let l_sum = tape.sum(l_a);
        let base = tape.scale(l_sum, 1.0 / b);
        let base = tape.add_const(base, -0.5 * LN_2PI);
        let rq_term = tape.scale(rq_sum, -0.5 / b);
        let pen_term = tape.scale(pen_sum, -0.5 / b);
        let partial = tape.add(base, rq_term);
        let data_avg = tape.add(partial, pen_term);

        let (kl, noise_logprior) = self.regularizer_terms(tape, &v, &s_fv, &noise_fv);
        Ok(Terms {
            data_avg,
            kl,
            noise_logprior,
        })
    }

    /// Posterior column covariance factor from current values.
    pub fn posterior_factor(&self) -> TriangularFactor {
        factor_from_params(self.posterior_layout, self.s_off.as_ref(), &self.s_log_diag)
    }

    /// Noise precision factor from current values.
    pub fn noise_precision_factor(&self) -> TriangularFactor {
        factor_from_params(self.noise_layout, self.noise_off.as_ref(), &self.noise_log_diag)
    }

    /// Mean weight matrix `(n_outputs, n_features)`.
    pub fn weight_mean(&self) -> Array2<f64> {
        self.w_mean
            .value
            .clone()
            .into_dimensionality::<Ix2>()
            .expect("w_mean is 2-d")
    }

    /// Noise covariance `Sigma` (inverse of the parameterized precision).
    pub fn noise_covariance(&self) -> Array2<f64> {
        self.noise_precision_factor().gram_inverse()
    }

    /// Predictive mean and weight-uncertainty quadratic form for one feature
    /// vector. The predictive distribution is
    /// `N(mean, s_quad * I + noise_covariance())`.
    pub fn predict(&self, phi: ArrayView1<'_, f64>) -> (Array1<f64>, f64) {
        let w = self.weight_mean();
        let mean = w.dot(&phi);
        let s_quad = self.posterior_factor().quad_form(phi);
        (mean, s_quad)
    }

    /// Draw one weight matrix from the posterior: row `k` is
    /// `w_mean[k] + P z_k` with the shared column factor `P`.
    pub fn sample_weight_rows<R: Rng + ?Sized>(&self, rng: &mut R) -> Array2<f64> {
        let w = self.weight_mean();
        let factor = self.posterior_factor();
        let mut out = Array2::zeros((self.n_outputs, self.n_features));
        for k in 0..self.n_outputs {
            out.row_mut(k)
                .assign(&factor.sample_gaussian(w.row(k), rng));
        }
        out
    }
}

fn factor_from_params(
    layout: FactorLayout,
    off: Option<&Parameter>,
    log_diag: &Parameter,
) -> TriangularFactor {
    let ld = log_diag
        .value
        .clone()
        .into_dimensionality::<Ix1>()
        .expect("log_diag is 1-d");
    match layout {
        FactorLayout::Dense => {
            let off = off
                .expect("dense layout has off parameter")
                .value
                .clone()
                .into_dimensionality::<Ix2>()
                .expect("off is 2-d");
            TriangularFactor::dense(off, ld).expect("parameter shapes are consistent")
        }
        FactorLayout::Diagonal => TriangularFactor::diagonal(ld),
    }
}
