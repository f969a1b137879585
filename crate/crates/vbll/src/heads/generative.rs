//! Generative classification head: Gaussian class-conditional feature
//! densities with a conjugate Dirichlet posterior over class frequencies.
//!
//! Model: `phi | y ~ N(mu_y, Sigma)`, `y ~ Categorical(rho)`,
//! `rho ~ Dirichlet`. The variational posterior keeps an independent Gaussian
//! `N(mu_mean_k, S_k)` per class embedding and the exact conjugate Dirichlet
//! posterior (prior concentration plus observed class counts) over `rho`.
//! Both `Sigma` and every `S_k` are diagonal, so forming the marginal
//! covariance `Sigma + S_k` — which the objective and predictions need — stays
//! linear in the feature dimension.
//!
//! The per-sample objective combines the exact expected in-class density with
//! a marginalized normalizer:
//!
//! `log N(phi | mu_mean_y, Sigma) - tr(Sigma^{-1} S_y) / 2
//!    + E[log rho_y] + log alpha_total
//!    - LSE_k(log N(phi | mu_mean_k, Sigma + S_k) + log alpha_k)`,
//!
//! where `E[log rho_y] = psi(alpha_y) - psi(alpha_total)`. The digamma terms
//! are constants with respect to every trained parameter, so they are folded
//! in host-side; they still matter for the objective's value as a bound on
//! the log-marginal likelihood. The KL term includes the Dirichlet posterior
//! against its prior for the same reason.

use ndarray::{Array1, Array2, ArrayView1, Ix1, Ix2};

use crate::dists::{self, LN_2PI};
use crate::error::{Error, Result};
use crate::heads::hyper::RawHyper;
use crate::heads::{check_labels, Terms};
use crate::mathcore::param::Parameter;
use crate::mathcore::special::{digamma, logsumexp, softmax};
use crate::mathcore::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct GenerativeConfig {
    pub n_features: usize,
    pub n_classes: usize,
    /// Symmetric Dirichlet prior concentration over class frequencies.
    pub prior_concentration: f64,
    pub hyper: RawHyper,
    pub train_size: usize,
}

pub struct GenerativeHead {
    n_features: usize,
    n_classes: usize,
    prior_concentration: f64,
    hyper: RawHyper,
    train_size: usize,
    /// Class embedding means, `(n_classes, n_features)`.
    means: Parameter,
    /// Per-class log-std of the diagonal embedding covariances `S_k`.
    s_log_diag: Parameter,
    /// Log-std of the shared diagonal noise covariance `Sigma`.
    noise_log_diag: Parameter,
    /// Dirichlet posterior concentration (prior + class counts); not a
    /// gradient parameter — its update is the exact conjugate one.
    alpha: Array1<f64>,
}

struct VarSplit {
    means: Var,
    s_log_diag: Var,
    noise_log_diag: Var,
}

impl GenerativeHead {
    pub fn new(cfg: GenerativeConfig) -> Result<Self> {
        if cfg.n_features == 0 || cfg.n_classes == 0 {
            return Err(Error::invalid(
                "GenerativeHead::new",
                "need n_features > 0 and at least one class",
            ));
        }
        if cfg.train_size == 0 {
            return Err(Error::invalid(
                "GenerativeHead::new",
                "train_size must be positive",
            ));
        }
        if !(cfg.prior_concentration > 0.0) {
            return Err(Error::invalid(
                "GenerativeHead::new",
                format!(
                    "prior_concentration must be positive, got {}",
                    cfg.prior_concentration
                ),
            ));
        }
        Ok(GenerativeHead {
            n_features: cfg.n_features,
            n_classes: cfg.n_classes,
            prior_concentration: cfg.prior_concentration,
            hyper: cfg.hyper,
            train_size: cfg.train_size,
            means: Parameter::new(
                "head.means",
                Array2::<f64>::zeros((cfg.n_classes, cfg.n_features)).into_dyn(),
            ),
            s_log_diag: Parameter::new(
                "head.s_log_diag",
                Array2::<f64>::zeros((cfg.n_classes, cfg.n_features)).into_dyn(),
            ),
            noise_log_diag: Parameter::new(
                "head.noise_log_diag",
                Array1::<f64>::zeros(cfg.n_features).into_dyn(),
            ),
            alpha: Array1::from_elem(cfg.n_classes, cfg.prior_concentration),
        })
    }

    /// Exact conjugate update of the class-frequency posterior from training
    /// labels: concentration = prior + counts. Call once per dataset.
    pub fn fit_class_posterior(&mut self, labels: &[usize]) -> Result<()> {
        check_labels("GenerativeHead::fit_class_posterior", labels, self.n_classes)?;
        let mut alpha = Array1::from_elem(self.n_classes, self.prior_concentration);
        for &y in labels {
            alpha[y] += 1.0;
        }
        self.alpha = alpha;
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn hyper(&self) -> &RawHyper {
        &self.hyper
    }

    pub fn train_size(&self) -> usize {
        self.train_size
    }

    /// Rescale the regularizers against a new training-set size.
    pub fn set_train_size(&mut self, train_size: usize) -> Result<()> {
        if train_size == 0 {
            return Err(Error::invalid(
                "GenerativeHead::set_train_size",
                "train_size must be positive",
            ));
        }
        self.train_size = train_size;
        Ok(())
    }

    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.means, &self.s_log_diag, &self.noise_log_diag]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.means, &mut self.s_log_diag, &mut self.noise_log_diag]
    }

    fn split_vars(&self, vars: &[Var]) -> Result<VarSplit> {
        if vars.len() != 3 {
            return Err(Error::invalid(
                "GenerativeHead",
                format!("expected 3 parameter vars, got {}", vars.len()),
            ));
        }
        Ok(VarSplit {
            means: vars[0],
            s_log_diag: vars[1],
            noise_log_diag: vars[2],
        })
    }

    pub fn objective_terms(
        &self,
        tape: &mut Tape,
        phi: Var,
        labels: &[usize],
        vars: &[Var],
    ) -> Result<Terms> {
        check_labels("GenerativeHead::objective_terms", labels, self.n_classes)?;
        let v = self.split_vars(vars)?;
        let b = labels.len() as f64;
        let n_phi = self.n_features as f64;
        let k = self.n_classes;

        // Shared noise pieces: variance, inverse variance, log-determinant.
        let two_lsig = tape.scale(v.noise_log_diag, 2.0);
        let var_sigma = tape.exp(two_lsig);
        let neg_two_lsig = tape.scale(v.noise_log_diag, -2.0);
        let inv_var_sigma = tape.exp(neg_two_lsig);
        let lsig_sum = tape.sum(v.noise_log_diag);
        let logdet_sigma = tape.scale(lsig_sum, 2.0);

        // In-class expected log-density: log N(phi | mu_y, Sigma) minus the
        // embedding-uncertainty trace of the labeled class.
        let mu_y = tape.gather_rows(v.means, labels);
        let d = tape.sub(phi, mu_y);
        let d2 = tape.mul(d, d);
        let quad1 = tape.matvec(d2, inv_var_sigma);
        let quad1_sum = tape.sum(quad1);

        let two_ls = tape.scale(v.s_log_diag, 2.0);
        let var_s = tape.exp(two_ls);
        let tr_k = tape.matvec(var_s, inv_var_sigma);
        let tr_y = tape.gather_elems(tr_k, labels);
        let tr_sum = tape.sum(tr_y);

        // Marginalized normalizer: log N(phi | mu_k, Sigma + S_k) + ln alpha_k
        // for every class at once, then a row-wise log-sum-exp.
        let rows = labels.len();
        let var_sigma_rows = tape.broadcast_row(var_sigma, k);
        let var_tot = tape.add(var_sigma_rows, var_s);
        let ones = tape.constant2(&Array2::ones((k, self.n_features)));
        let inv_tot = tape.div(ones, var_tot);
        let ln_tot = tape.ln(var_tot);
        let logdet_tot = tape.row_sums(ln_tot);

        let phi2 = tape.mul(phi, phi);
        let inv_tot_t = tape.transpose(inv_tot);
        let a_term = tape.matmul(phi2, inv_tot_t);
        let mi = tape.mul(v.means, inv_tot);
        let mi_t = tape.transpose(mi);
        let b_term = tape.matmul(phi, mi_t);
        let m2 = tape.mul(v.means, v.means);
        let m2i = tape.mul(m2, inv_tot);
        let c_term = tape.row_sums(m2i);

        let b2 = tape.scale(b_term, -2.0);
        let maha = tape.add(a_term, b2);
        let c_rows = tape.broadcast_row(c_term, rows);
        let maha = tape.add(maha, c_rows);

        let ln_alpha =
            tape.constant1(&self.alpha.mapv(f64::ln));
        let half_ld = tape.scale(logdet_tot, -0.5);
        let lognorm = tape.add(half_ld, ln_alpha);
        let lognorm = tape.add_const(lognorm, -0.5 * n_phi * LN_2PI);
        let half_maha = tape.scale(maha, -0.5);
        let lognorm_rows = tape.broadcast_row(lognorm, rows);
        let scores = tape.add(half_maha, lognorm_rows);
        let lse = tape.row_logsumexp(scores);
        let lse_sum = tape.sum(lse);

        // Label-frequency constants: E[log rho_y] + log alpha_total. Constant
        // in every trained parameter, folded in as a scalar shift.
        let alpha_total = self.alpha.sum();
        let psi_total = digamma(alpha_total);
        let dig_avg = labels
            .iter()
            .map(|&y| digamma(self.alpha[y]) - psi_total + alpha_total.ln())
            .sum::<f64>()
            / b;

        let base = tape.scale(logdet_sigma, -0.5);
        let base = tape.add_const(base, -0.5 * n_phi * LN_2PI + dig_avg);
        let quads = tape.add(quad1_sum, tr_sum);
        let quad_term = tape.scale(quads, -0.5 / b);
        let lse_term = tape.scale(lse_sum, -1.0 / b);
        let partial = tape.add(base, quad_term);
        let data_avg = tape.add(partial, lse_term);

        // KL of the class embeddings against the isotropic prior, plus the
        // (constant) Dirichlet posterior-to-prior KL.
        let s = self.hyper.prior_scale;
        let mq = tape.sum_sq(v.means);
        let t_mean = tape.scale(mq, 0.5 / s);
        let tr_all = tape.sum(var_s);
        let t_tr = tape.scale(tr_all, 0.5 / s);
        let ls_sum = tape.sum(v.s_log_diag);
        let t_ld = tape.scale(ls_sum, -1.0);
        let dir_kl = dists::dirichlet_kl(
            self.alpha.view(),
            Array1::from_elem(self.n_classes, self.prior_concentration).view(),
        );
        let partial = tape.add(t_mean, t_tr);
        let partial = tape.add(partial, t_ld);
        let kl = tape.add_const(
            partial,
            0.5 * k as f64 * n_phi * (s.ln() - 1.0) + dir_kl,
        );

        // Inverse-Wishart prior on Sigma via its diagonal precision.
        let ld_term = tape.scale(lsig_sum, -1.0 * self.hyper.noise_dof);
        let tr_prec = tape.sum(inv_var_sigma);
        let tr_term = tape.scale(tr_prec, -0.5 * self.hyper.noise_scale);
        let noise_logprior = tape.add(ld_term, tr_term);

        Ok(Terms {
            data_avg,
            kl,
            noise_logprior,
        })
    }

    pub fn class_means(&self) -> Array2<f64> {
        self.means
            .value
            .clone()
            .into_dimensionality::<Ix2>()
            .expect("means is 2-d")
    }

    /// Diagonal of `Sigma` (noise variances).
    pub fn noise_variances(&self) -> Array1<f64> {
        self.noise_log_diag
            .value
            .clone()
            .into_dimensionality::<Ix1>()
            .expect("noise_log_diag is 1-d")
            .mapv(|x| (2.0 * x).exp())
    }

    /// Diagonal of the marginal covariance `Sigma + S_k` for class `k`.
    pub fn marginal_variances(&self, k: usize) -> Array1<f64> {
        let noise = self.noise_variances();
        let ls = self
            .s_log_diag
            .value
            .clone()
            .into_dimensionality::<Ix2>()
            .expect("s_log_diag is 2-d");
        &noise + &ls.row(k).mapv(|x| (2.0 * x).exp())
    }

    /// Per-class scores `log N(phi | mu_k, Sigma + S_k) + log alpha_k`.
    fn class_scores(&self, phi: ArrayView1<'_, f64>) -> Vec<f64> {
        let means = self.class_means();
        (0..self.n_classes)
            .map(|c| {
                let vars = self.marginal_variances(c);
                dists::gaussian_logpdf_diag(phi, means.row(c), vars.view())
                    + self.alpha[c].ln()
            })
            .collect()
    }

    /// Closed-form predictive class probabilities
    /// `softmax_k(log N(phi | mu_k, Sigma + S_k) + log E[rho_k])`.
    pub fn predict_probs(&self, phi: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_vec(softmax(&self.class_scores(phi)))
    }

    /// Log-density of a feature vector under the posterior-predictive mixture
    /// `sum_k E[rho_k] N(phi | mu_k, Sigma + S_k)`. With
    /// `normalize_by_prior` the log-density of the feature under the weight
    /// prior's predictive, `N(phi | 0, prior_scale * I)`, is subtracted,
    /// which removes the volume effect of the feature scale and makes scores
    /// comparable across feature maps.
    pub fn feature_log_density(&self, phi: ArrayView1<'_, f64>, normalize_by_prior: bool) -> f64 {
        let scores = self.class_scores(phi);
        let raw = logsumexp(&scores) - self.alpha.sum().ln();
        if normalize_by_prior {
            let zero = Array1::zeros(self.n_features);
            raw - dists::gaussian_logpdf_iso(phi, zero.view(), self.hyper.prior_scale)
        } else {
            raw
        }
    }
}
