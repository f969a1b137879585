//! Discriminative classification head: independent Gaussian posteriors over
//! per-class logit weights with optional learned logit noise.
//!
//! Model: logits `z = W phi + eps` with `eps ~ N(0, diag(sigma^2))` and
//! `y ~ Categorical(softmax(z))`. The posterior factorizes over classes,
//! `q(w_k) = N(w_mean_k, S_k)`. The training objective lower-bounds the
//! expected log-likelihood by moving the expectation of the log-normalizer
//! inside the exponential, which leaves the exact per-class correction
//! `(phi^T S_k phi + sigma_k^2) / 2` inside the log-sum-exp:
//!
//! `E_q[log p(y | phi)] >= w_mean_y . phi
//!    - LSE_k(w_mean_k . phi + (phi^T S_k phi + sigma_k^2) / 2)`.
//!
//! Unlike the regression objective this is a strict bound rather than an
//! exact expectation, but it remains deterministic and sampling-free.
//! Prediction averages softmax probabilities over a small number of exact
//! posterior draws (weights and logit noise), which is cheap because the
//! posterior is Gaussian in closed form.

use ndarray::{Array1, Array2, ArrayView1, Ix1, Ix2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::heads::hyper::RawHyper;
use crate::heads::{check_labels, onehot_const, Terms};
use crate::mathcore::param::Parameter;
use crate::mathcore::special::softmax;
use crate::mathcore::tape::{Tape, Var};
use crate::psdparam::{FactorLayout, FactorVars, TriangularFactor};

#[derive(Debug, Clone)]
pub struct DiscriminativeConfig {
    pub n_features: usize,
    pub n_classes: usize,
    /// Layout of each per-class posterior covariance `S_k`.
    pub posterior_layout: FactorLayout,
    /// Train the logit noise scales; `false` pins `sigma = 0`, recovering a
    /// noiseless softmax likelihood (and dropping the noise prior term).
    pub train_noise: bool,
    pub hyper: RawHyper,
    pub train_size: usize,
}

/// Per-class posterior covariance storage. The diagonal layout packs every
/// class into one `(n_classes, n_features)` log-diagonal so the batch
/// quadratic forms reduce to a single matrix product; the dense layout keeps
/// one triangular factor per class.
enum SStore {
    Diagonal {
        log_diag: Parameter,
    },
    Dense {
        per_class: Vec<(Parameter, Parameter)>,
    },
}

pub struct DiscriminativeHead {
    n_features: usize,
    n_classes: usize,
    posterior_layout: FactorLayout,
    hyper: RawHyper,
    train_size: usize,
    w_mean: Parameter,
    s_store: SStore,
    noise_log_sd: Option<Parameter>,
}

struct VarSplit {
    w_mean: Var,
    /// Diagonal: the packed log-diag node. Dense: (off, log_diag) per class.
    s_diag: Option<Var>,
    s_dense: Vec<(Var, Var)>,
    noise_log_sd: Option<Var>,
}

impl DiscriminativeHead {
    pub fn new(cfg: DiscriminativeConfig) -> Result<Self> {
        if cfg.n_features == 0 || cfg.n_classes < 2 {
            return Err(Error::invalid(
                "DiscriminativeHead::new",
                "need n_features > 0 and at least two classes",
            ));
        }
        if cfg.train_size == 0 {
            return Err(Error::invalid(
                "DiscriminativeHead::new",
                "train_size must be positive",
            ));
        }
        let s_store = match cfg.posterior_layout {
            FactorLayout::Diagonal => SStore::Diagonal {
                log_diag: Parameter::new(
                    "head.s_log_diag",
                    Array2::<f64>::zeros((cfg.n_classes, cfg.n_features)).into_dyn(),
                ),
            },
            FactorLayout::Dense => SStore::Dense {
                per_class: (0..cfg.n_classes)
                    .map(|k| {
                        (
                            Parameter::new(
                                format!("head.s_off_{k}"),
                                Array2::<f64>::zeros((cfg.n_features, cfg.n_features))
                                    .into_dyn(),
                            ),
                            Parameter::new(
                                format!("head.s_log_diag_{k}"),
                                Array1::<f64>::zeros(cfg.n_features).into_dyn(),
                            ),
                        )
                    })
                    .collect(),
            },
        };
        Ok(DiscriminativeHead {
            n_features: cfg.n_features,
            n_classes: cfg.n_classes,
            posterior_layout: cfg.posterior_layout,
            hyper: cfg.hyper,
            train_size: cfg.train_size,
            w_mean: Parameter::new(
                "head.w_mean",
                Array2::<f64>::zeros((cfg.n_classes, cfg.n_features)).into_dyn(),
            ),
            s_store,
            noise_log_sd: cfg.train_noise.then(|| {
                Parameter::new(
                    "head.noise_log_sd",
                    Array1::<f64>::zeros(cfg.n_classes).into_dyn(),
                )
            }),
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn posterior_layout(&self) -> FactorLayout {
        self.posterior_layout
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
                "DiscriminativeHead::set_train_size",
                "train_size must be positive",
            ));
        }
        self.train_size = train_size;
        Ok(())
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.w_mean];
        match &self.s_store {
            SStore::Diagonal { log_diag } => out.push(log_diag),
            SStore::Dense { per_class } => {
                for (off, ld) in per_class {
                    out.push(off);
                    out.push(ld);
                }
            }
        }
        if let Some(p) = &self.noise_log_sd {
            out.push(p);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.w_mean];
        match &mut self.s_store {
            SStore::Diagonal { log_diag } => out.push(log_diag),
            SStore::Dense { per_class } => {
                for (off, ld) in per_class {
                    out.push(off);
                    out.push(ld);
                }
            }
        }
        if let Some(p) = &mut self.noise_log_sd {
            out.push(p);
        }
        out
    }

    fn split_vars(&self, vars: &[Var]) -> Result<VarSplit> {
        let n_s = match &self.s_store {
            SStore::Diagonal { .. } => 1,
            SStore::Dense { per_class } => 2 * per_class.len(),
        };
        let expected = 1 + n_s + usize::from(self.noise_log_sd.is_some());
        if vars.len() != expected {
            return Err(Error::invalid(
                "DiscriminativeHead",
                format!("expected {expected} parameter vars, got {}", vars.len()),
            ));
        }
        let mut it = vars.iter().copied();
        let w_mean = it.next().unwrap();
        let (s_diag, s_dense) = match &self.s_store {
            SStore::Diagonal { .. } => (Some(it.next().unwrap()), Vec::new()),
            SStore::Dense { per_class } => {
                let mut pairs = Vec::with_capacity(per_class.len());
                for _ in per_class {
                    let off = it.next().unwrap();
                    let ld = it.next().unwrap();
                    pairs.push((off, ld));
                }
                (None, pairs)
            }
        };
        let noise_log_sd = self.noise_log_sd.as_ref().map(|_| it.next().unwrap());
        Ok(VarSplit {
            w_mean,
            s_diag,
            s_dense,
            noise_log_sd,
        })
    }

    /// Batch matrix of per-class quadratic forms `phi_t^T S_k phi_t`, shape
    /// `(B, n_classes)`.
    fn quad_matrix(&self, tape: &mut Tape, phi: Var, v: &VarSplit) -> Result<Var> {
        match &self.s_store {
            SStore::Diagonal { .. } => {
                let ld = v.s_diag.expect("diagonal store has packed node");
                let two_ld = tape.scale(ld, 2.0);
                let var = tape.exp(two_ld);
                let var_t = tape.transpose(var);
                let phi2 = tape.mul(phi, phi);
                Ok(tape.matmul(phi2, var_t))
            }
            SStore::Dense { per_class } => {
                let mut cols = Vec::with_capacity(per_class.len());
                for &(off, ld) in &v.s_dense {
                    let fv = FactorVars::build(tape, FactorLayout::Dense, Some(off), ld)?;
                    cols.push(fv.quad_form_batch(tape, phi));
                }
                Ok(tape.stack_cols(&cols))
            }
        }
    }

    pub fn objective_terms(
        &self,
        tape: &mut Tape,
        phi: Var,
        labels: &[usize],
        vars: &[Var],
    ) -> Result<Terms> {
        check_labels("DiscriminativeHead::objective_terms", labels, self.n_classes)?;
        let v = self.split_vars(vars)?;
        let b = labels.len() as f64;

        // Logit means and the picked-class term.
        let wt = tape.transpose(v.w_mean);
        let z = tape.matmul(phi, wt);
        let oh = onehot_const(tape, labels, self.n_classes);
        let zm = tape.mul(z, oh);
        let picked = tape.row_sums(zm);
        let picked_sum = tape.sum(picked);

        // Log-normalizer with the per-class uncertainty correction.
        let quads = self.quad_matrix(tape, phi, &v)?;
        let half_quads = tape.scale(quads, 0.5);
        let mut scores = tape.add(z, half_quads);
        if let Some(rho) = v.noise_log_sd {
            let two_rho = tape.scale(rho, 2.0);
            let sigma2 = tape.exp(two_rho);
            let half_sigma2 = tape.scale(sigma2, 0.5);
            let rows = tape.value(phi).shape()[0];
            let bcast = tape.broadcast_row(half_sigma2, rows);
            scores = tape.add(scores, bcast);
        }
        let lse = tape.row_logsumexp(scores);
        let lse_sum = tape.sum(lse);
        let diff = tape.sub(picked_sum, lse_sum);
        let data_avg = tape.scale(diff, 1.0 / b);

        // KL summed over the per-class posteriors.
        let s = self.hyper.prior_scale;
        let k = self.n_classes as f64;
        let n_phi = self.n_features as f64;
        let wq = tape.sum_sq(v.w_mean);
        let t_mean = tape.scale(wq, 0.5 / s);
        let (tr_all, ld_all) = match &self.s_store {
            SStore::Diagonal { .. } => {
                let ld = v.s_diag.expect("diagonal store has packed node");
                let two_ld = tape.scale(ld, 2.0);
                let var = tape.exp(two_ld);
                let tr = tape.sum(var);
                let lds = tape.sum(ld);
                (tr, tape.scale(lds, 2.0))
            }
            SStore::Dense { per_class } => {
                let mut tr_acc: Option<Var> = None;
                let mut ld_acc: Option<Var> = None;
                for &(off, ld) in &v.s_dense {
                    let fv = FactorVars::build(tape, FactorLayout::Dense, Some(off), ld)?;
                    let tr = fv.trace_gram(tape);
                    let lg = fv.log_det_gram(tape);
                    tr_acc = Some(match tr_acc {
                        Some(acc) => tape.add(acc, tr),
                        None => tr,
                    });
                    ld_acc = Some(match ld_acc {
                        Some(acc) => tape.add(acc, lg),
                        None => lg,
                    });
                }
                let _ = per_class;
                (tr_acc.expect("at least two classes"), ld_acc.expect("at least two classes"))
            }
        };
        let t_tr = tape.scale(tr_all, 0.5 / s);
        let t_ld = tape.scale(ld_all, -0.5);
        let partial = tape.add(t_mean, t_tr);
        let partial = tape.add(partial, t_ld);
        let kl = tape.add_const(partial, 0.5 * k * n_phi * (s.ln() - 1.0));

        // Noise prior over diag(sigma^2) when the noise is trained; with
        // sigma pinned to zero the term is absent (a zero constant here).
        let noise_logprior = match v.noise_log_sd {
            Some(rho) => {
                let ld_prec = tape.sum(rho);
                let ld_term = tape.scale(ld_prec, -1.0 * self.hyper.noise_dof);
                let neg_two_rho = tape.scale(rho, -2.0);
                let prec = tape.exp(neg_two_rho);
                let tr_prec = tape.sum(prec);
                let tr_term = tape.scale(tr_prec, -0.5 * self.hyper.noise_scale);
                tape.add(ld_term, tr_term)
            }
            None => tape.scalar(0.0),
        };

        Ok(Terms {
            data_avg,
            kl,
            noise_logprior,
        })
    }

    /// Posterior covariance factor of class `k` from current values.
    pub fn class_factor(&self, k: usize) -> TriangularFactor {
        match &self.s_store {
            SStore::Diagonal { log_diag } => {
                let ld = log_diag
                    .value
                    .clone()
                    .into_dimensionality::<Ix2>()
                    .expect("packed log_diag is 2-d");
                TriangularFactor::diagonal(ld.row(k).to_owned())
            }
            SStore::Dense { per_class } => {
                let (off, ld) = &per_class[k];
                TriangularFactor::dense(
                    off.value
                        .clone()
                        .into_dimensionality::<Ix2>()
                        .expect("off is 2-d"),
                    ld.value
                        .clone()
                        .into_dimensionality::<Ix1>()
                        .expect("log_diag is 1-d"),
                )
                .expect("parameter shapes are consistent")
            }
        }
    }

    pub fn weight_mean(&self) -> Array2<f64> {
        self.w_mean
            .value
            .clone()
            .into_dimensionality::<Ix2>()
            .expect("w_mean is 2-d")
    }

    /// Logit noise standard deviations (zeros when the noise is pinned).
    pub fn noise_sd(&self) -> Array1<f64> {
        match &self.noise_log_sd {
            Some(p) => p
                .value
                .clone()
                .into_dimensionality::<Ix1>()
                .expect("noise_log_sd is 1-d")
                .mapv(f64::exp),
            None => Array1::zeros(self.n_classes),
        }
    }

    /// Predictive class probabilities: the posterior-predictive softmax
    /// averaged over `n_samples` exact posterior draws of the weights and
    /// logit noise.
    pub fn predict_probs<R: Rng + ?Sized>(
        &self,
        phi: ArrayView1<'_, f64>,
        n_samples: usize,
        rng: &mut R,
    ) -> Array1<f64> {
        assert!(n_samples > 0, "need at least one predictive sample");
        let w = self.weight_mean();
        let sds = self.noise_sd();
        let factors: Vec<TriangularFactor> =
            (0..self.n_classes).map(|k| self.class_factor(k)).collect();
        let mut probs = Array1::<f64>::zeros(self.n_classes);
        let mut logits = vec![0.0; self.n_classes];
        for _ in 0..n_samples {
            for k in 0..self.n_classes {
                let wk = factors[k].sample_gaussian(w.row(k), rng);
                let eps: f64 = rng.sample::<f64, _>(StandardNormal) * sds[k];
                logits[k] = wk.dot(&phi) + eps;
            }
            let p = softmax(&logits);
            for k in 0..self.n_classes {
                probs[k] += p[k];
            }
        }
        probs / n_samples as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::param::{
        eval_scalar, finite_diff, max_rel_gradient_error, value_and_grad,
    };
    use crate::mathcore::special::logsumexp;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hyper() -> RawHyper {
        RawHyper {
            prior_scale: 0.9,
            kl_weight: 1.4,
            noise_dof: 1.0,
            noise_scale: 2.0,
        }
    }

    fn diag_head() -> DiscriminativeHead {
        let mut h = DiscriminativeHead::new(DiscriminativeConfig {
            n_features: 2,
            n_classes: 3,
            posterior_layout: FactorLayout::Diagonal,
            train_noise: true,
            hyper: hyper(),
            train_size: 11,
        })
        .unwrap();
        h.w_mean.value = array![[0.4, -0.7], [0.1, 0.9], [-0.3, 0.2]].into_dyn();
        if let SStore::Diagonal { log_diag } = &mut h.s_store {
            log_diag.value = array![[0.2, -0.1], [-0.4, 0.3], [0.0, 0.5]].into_dyn();
        }
        if let Some(p) = &mut h.noise_log_sd {
            p.value = array![-0.2, 0.1, 0.4].into_dyn();
        }
        h
    }

    fn phi_batch() -> Array2<f64> {
        array![[1.0, -0.5], [0.3, 0.8], [-1.2, 0.4], [0.0, 1.0]]
    }

    #[test]
    fn data_term_matches_per_sample_formula() {
        let head = diag_head();
        let phi = phi_batch();
        let labels = vec![0, 2, 1, 1];

        // Independent value-side computation of the bound.
        let w = head.weight_mean();
        let sds = head.noise_sd();
        let mut want = 0.0;
        for (t, &y) in labels.iter().enumerate() {
            let phi_t = phi.row(t);
            let mut scores = vec![0.0; 3];
            for k in 0..3 {
                let quad = head.class_factor(k).quad_form(phi_t);
                scores[k] = w.row(k).dot(&phi_t) + 0.5 * (quad + sds[k] * sds[k]);
            }
            want += w.row(y).dot(&phi_t) - logsumexp(&scores);
        }
        want /= labels.len() as f64;

        let mut tape = Tape::new();
        let phiv = tape.constant2(&phi);
        let vars: Vec<Var> = head
            .params()
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        let terms = head
            .objective_terms(&mut tape, phiv, &labels, &vars)
            .unwrap();
        let got = tape.scalar_value(terms.data_avg);
        assert!((got - want).abs() < 1e-12, "batch {got} vs reference {want}");
    }

    #[test]
    fn kl_matches_sum_of_per_class_references() {
        let head = diag_head();
        let w = head.weight_mean();
        let mut want = 0.0;
        for k in 0..3 {
            let f = head.class_factor(k);
            want += crate::dists::kl_matrix_normal_to_iso(
                w.row(k).insert_axis(ndarray::Axis(0)),
                Array2::zeros((1, 2)).view(),
                f.trace_gram(),
                f.log_det_gram(),
                head.hyper.prior_scale,
            );
        }
        let mut tape = Tape::new();
        let phiv = tape.constant2(&phi_batch());
        let vars: Vec<Var> = head
            .params()
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        let terms = head
            .objective_terms(&mut tape, phiv, &[0, 1, 2, 0], &vars)
            .unwrap();
        assert!((tape.scalar_value(terms.kl) - want).abs() < 1e-12);
    }

    #[test]
    fn noise_prior_matches_reference_and_is_stationary_at_mode() {
        let head = diag_head();
        // Reference value via the shared inverse-Wishart formula with the
        // diagonal precision exp(-2 rho).
        let rho = match &head.noise_log_sd {
            Some(p) => p.value.clone().into_dimensionality::<Ix1>().unwrap(),
            None => unreachable!(),
        };
        let prec_ld: f64 = rho.iter().map(|r| -2.0 * r).sum();
        let prec_tr: f64 = rho.iter().map(|r| (-2.0 * r).exp()).sum();
        let want = crate::dists::inv_wishart_logprior(
            prec_ld,
            prec_tr,
            head.hyper.noise_dof,
            head.hyper.noise_scale,
        );
        let mut tape = Tape::new();
        let phiv = tape.constant2(&phi_batch());
        let vars: Vec<Var> = head
            .params()
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        let terms = head
            .objective_terms(&mut tape, phiv, &[0, 1, 2, 0], &vars)
            .unwrap();
        assert!((tape.scalar_value(terms.noise_logprior) - want).abs() < 1e-12);

        // Stationarity: the precision exp(-2 rho) = noise_dof / noise_scale
        // maximizes the term, i.e. rho = ln(noise_scale / noise_dof) / 2.
        let mut head = diag_head();
        let mode = 0.5 * (head.hyper.noise_scale / head.hyper.noise_dof).ln();
        if let Some(p) = &mut head.noise_log_sd {
            p.value.fill(mode);
        }
        let phi = phi_batch();
        let build = |tape: &mut Tape, vars: &[Var]| {
            let phiv = tape.constant2(&phi);
            let terms = head.objective_terms(tape, phiv, &[0, 1, 2, 0], vars)?;
            Ok(terms.noise_logprior)
        };
        let values: Vec<_> = head.params().iter().map(|p| p.value.clone()).collect();
        let refs: Vec<_> = values.iter().collect();
        let (_, grads) = value_and_grad(&refs, build).unwrap();
        let g = grads.last().unwrap();
        assert!(g.iter().all(|&x| x.abs() < 1e-12), "gradient at mode: {g:?}");
    }

    #[test]
    fn gradients_match_central_differences_diagonal() {
        let head = diag_head();
        let phi = phi_batch();
        let labels = vec![2, 0, 1, 2];
        let kl_weight = head.hyper.kl_weight;
        let t = head.train_size;
        let build = |tape: &mut Tape, vars: &[Var]| {
            let phiv = tape.constant2(&phi);
            let terms = head.objective_terms(tape, phiv, &labels, vars)?;
            Ok(terms.objective(tape, kl_weight, t))
        };
        let values: Vec<_> = head.params().iter().map(|p| p.value.clone()).collect();
        let refs: Vec<_> = values.iter().collect();
        let (_, analytic) = value_and_grad(&refs, build).unwrap();
        let numeric = finite_diff(&refs, |vals| eval_scalar(vals, build), 1e-5).unwrap();
        let err = max_rel_gradient_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-5, "max relative gradient error {err}");
    }

    #[test]
    fn gradients_match_central_differences_dense_frozen_noise() {
        let mut head = DiscriminativeHead::new(DiscriminativeConfig {
            n_features: 2,
            n_classes: 2,
            posterior_layout: FactorLayout::Dense,
            train_noise: false,
            hyper: hyper(),
            train_size: 6,
        })
        .unwrap();
        head.w_mean.value = array![[0.4, -0.7], [0.1, 0.9]].into_dyn();
        if let SStore::Dense { per_class } = &mut head.s_store {
            per_class[0].0.value = array![[0.0, 0.0], [0.6, 0.0]].into_dyn();
            per_class[0].1.value = array![0.2, -0.3].into_dyn();
            per_class[1].0.value = array![[0.0, 0.0], [-0.4, 0.0]].into_dyn();
            per_class[1].1.value = array![-0.1, 0.4].into_dyn();
        }
        let phi = array![[1.0, -0.5], [0.3, 0.8], [-1.2, 0.4]];
        let labels = vec![0, 1, 1];
        let kl_weight = head.hyper.kl_weight;
        let t = head.train_size;
        let build = |tape: &mut Tape, vars: &[Var]| {
            let phiv = tape.constant2(&phi);
            let terms = head.objective_terms(tape, phiv, &labels, vars)?;
            Ok(terms.objective(tape, kl_weight, t))
        };
        let values: Vec<_> = head.params().iter().map(|p| p.value.clone()).collect();
        let refs: Vec<_> = values.iter().collect();
        let (_, analytic) = value_and_grad(&refs, build).unwrap();
        let numeric = finite_diff(&refs, |vals| eval_scalar(vals, build), 1e-5).unwrap();
        let err = max_rel_gradient_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-5, "max relative gradient error {err}");

        // Frozen noise contributes no prior term.
        let mut tape = Tape::new();
        let phiv = tape.constant2(&phi);
        let vars: Vec<Var> = head
            .params()
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        let terms = head
            .objective_terms(&mut tape, phiv, &labels, &vars)
            .unwrap();
        assert_eq!(tape.scalar_value(terms.noise_logprior), 0.0);
    }

    #[test]
    fn predictive_probabilities_are_normalized_and_seeded() {
        let head = diag_head();
        let phi = array![0.6, -0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = head.predict_probs(phi.view(), 10, &mut rng);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x > 0.0));

        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let p2 = head.predict_probs(phi.view(), 10, &mut rng2);
        for (a, b) in p.iter().zip(p2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits(), "same seed, same prediction");
        }
    }

    #[test]
    fn degenerate_posterior_prediction_is_plain_softmax() {
        let mut head = DiscriminativeHead::new(DiscriminativeConfig {
            n_features: 2,
            n_classes: 3,
            posterior_layout: FactorLayout::Diagonal,
            train_noise: false,
            hyper: hyper(),
            train_size: 5,
        })
        .unwrap();
        head.w_mean.value = array![[0.4, -0.7], [0.1, 0.9], [-0.3, 0.2]].into_dyn();
        if let SStore::Diagonal { log_diag } = &mut head.s_store {
            log_diag.value.fill(-800.0);
        }
        let phi = array![0.6, -0.9];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = head.predict_probs(phi.view(), 3, &mut rng);
        let logits: Vec<f64> = (0..3)
            .map(|k| head.weight_mean().row(k).dot(&phi))
            .collect();
        let want = softmax(&logits);
        for (a, b) in p.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
