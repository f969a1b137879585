//! Distribution quantities used by the last-layer objectives: Gaussian
//! log-densities, exact expectations of Gaussian log-likelihoods under
//! Gaussian weight posteriors, KL divergences, the inverse-Wishart log-prior,
//! and Dirichlet posterior statistics.
//!
//! Everything here is plain-value math. The training losses rebuild the same
//! formulas as tape expressions inside `heads`; unit tests pin the two code
//! paths together, and Monte Carlo estimators from the test-support crate pin
//! the closed forms themselves.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::Result;
use crate::mathcore::special::{digamma, ln_gamma};
use crate::psdparam::{cholesky_lower, chol_log_det, solve_lower, spd_solve};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_6;

// ---------------------------------------------------------------------------
// Gaussian log-densities
// ---------------------------------------------------------------------------

/// `log N(x | mean, var * I)`.
pub fn gaussian_logpdf_iso(x: ArrayView1<'_, f64>, mean: ArrayView1<'_, f64>, var: f64) -> f64 {
    assert!(var > 0.0, "isotropic variance must be positive, got {var}");
    let d = x.len() as f64;
    let mut maha = 0.0;
    for (&xi, &mi) in x.iter().zip(mean.iter()) {
        let diff = xi - mi;
        maha += diff * diff;
    }
    -0.5 * (d * (LN_2PI + var.ln()) + maha / var)
}

/// `log N(x | mean, diag(vars))`.
pub fn gaussian_logpdf_diag(
    x: ArrayView1<'_, f64>,
    mean: ArrayView1<'_, f64>,
    vars: ArrayView1<'_, f64>,
) -> f64 {
    let d = x.len() as f64;
    let mut maha = 0.0;
    let mut logdet = 0.0;
    for ((&xi, &mi), &vi) in x.iter().zip(mean.iter()).zip(vars.iter()) {
        let diff = xi - mi;
        maha += diff * diff / vi;
        logdet += vi.ln();
    }
    -0.5 * (d * LN_2PI + logdet + maha)
}

/// `log N(x | mean, cov)` for a dense SPD covariance.
pub fn gaussian_logpdf_dense(
    x: ArrayView1<'_, f64>,
    mean: ArrayView1<'_, f64>,
    cov: &Array2<f64>,
) -> Result<f64> {
    let chol = cholesky_lower(cov)?;
    Ok(gaussian_logpdf_chol(x, mean, &chol))
}

/// `log N(x | mean, L L^T)` given the covariance's lower Cholesky factor.
pub fn gaussian_logpdf_chol(
    x: ArrayView1<'_, f64>,
    mean: ArrayView1<'_, f64>,
    chol: &Array2<f64>,
) -> f64 {
    let d = x.len() as f64;
    let diff = &x.to_owned() - &mean;
    let z = solve_lower(chol, diff.view());
    let maha = z.dot(&z);
    -0.5 * (d * LN_2PI + chol_log_det(chol) + maha)
}

/// `tr(A^{-1} M)` given the lower Cholesky factor of SPD `A`.
fn trace_spd_inv_product(chol: &Array2<f64>, m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut tr = 0.0;
    for j in 0..n {
        let col = spd_solve(chol, m.column(j));
        tr += col[j];
    }
    tr
}

// ---------------------------------------------------------------------------
// Exact expectations of Gaussian log-likelihoods under Gaussian posteriors
// ---------------------------------------------------------------------------

/// `E_{w ~ N(w_mean, s_cov)}[log N(y | X w, noise_cov)]`.
///
/// The expectation splits into the log-density at the mean weights minus half
/// the trace of the noise-whitened predictive weight covariance:
/// `log N(y | X w_mean, noise_cov) - tr(noise_cov^{-1} X s_cov X^T) / 2`.
pub fn expected_loglik_vector(
    y: ArrayView1<'_, f64>,
    x: ArrayView2<'_, f64>,
    w_mean: ArrayView1<'_, f64>,
    s_cov: &Array2<f64>,
    noise_cov: &Array2<f64>,
) -> Result<f64> {
    let chol_noise = cholesky_lower(noise_cov)?;
    let mean = x.dot(&w_mean);
    let base = gaussian_logpdf_chol(y, mean.view(), &chol_noise);
    let xs = x.dot(s_cov);
    let xsxt = xs.dot(&x.t());
    Ok(base - 0.5 * trace_spd_inv_product(&chol_noise, &xsxt))
}

/// `E_{mu ~ N(mu_mean, s_cov)}[log N(x | mu, noise_cov)]`, the identity-design
/// special case: `log N(x | mu_mean, noise_cov) - tr(noise_cov^{-1} s_cov) / 2`.
pub fn expected_loglik_identity(
    x: ArrayView1<'_, f64>,
    mu_mean: ArrayView1<'_, f64>,
    s_cov: &Array2<f64>,
    noise_cov: &Array2<f64>,
) -> Result<f64> {
    let chol_noise = cholesky_lower(noise_cov)?;
    let base = gaussian_logpdf_chol(x, mu_mean, &chol_noise);
    Ok(base - 0.5 * trace_spd_inv_product(&chol_noise, s_cov))
}

/// `E_W[log N(y | W phi, noise_cov)]` where the rows of `W` are independent
/// `N(w_mean_k, s_cov)` (matrix-normal with identity row coupling): the
/// penalty collapses to `phi^T s_cov phi * tr(noise_cov^{-1}) / 2`.
pub fn expected_loglik_matrix(
    y: ArrayView1<'_, f64>,
    phi: ArrayView1<'_, f64>,
    w_mean: ArrayView2<'_, f64>,
    s_cov: &Array2<f64>,
    noise_cov: &Array2<f64>,
) -> Result<f64> {
    let chol_noise = cholesky_lower(noise_cov)?;
    let mean = w_mean.dot(&phi);
    let base = gaussian_logpdf_chol(y, mean.view(), &chol_noise);
    let quad = phi.dot(&s_cov.dot(&phi));
    let eye = Array2::eye(noise_cov.nrows());
    let tr_inv = trace_spd_inv_product(&chol_noise, &eye);
    Ok(base - 0.5 * quad * tr_inv)
}

/// Log of the Gaussian marginal `E_{mu ~ N(mu_mean, s_cov)}[N(x | mu,
/// noise_cov)] = N(x | mu_mean, noise_cov + s_cov)`.
pub fn marginal_gaussian_logpdf(
    x: ArrayView1<'_, f64>,
    mu_mean: ArrayView1<'_, f64>,
    s_cov: &Array2<f64>,
    noise_cov: &Array2<f64>,
) -> Result<f64> {
    let total = noise_cov + s_cov;
    gaussian_logpdf_dense(x, mu_mean, &total)
}

// ---------------------------------------------------------------------------
// KL divergences
// ---------------------------------------------------------------------------

/// KL divergence from a row-iid matrix-normal posterior `MN(w_mean, I, S)` to
/// the isotropic prior `MN(prior_mean, I, prior_scale * I)`.
///
/// `S` enters only through its trace and log-determinant, so callers pass the
/// factor summaries and the formula works for any layout. All constants are
/// kept: the result is exactly zero when the posterior equals the prior.
pub fn kl_matrix_normal_to_iso(
    w_mean: ArrayView2<'_, f64>,
    prior_mean: ArrayView2<'_, f64>,
    s_trace: f64,
    s_log_det: f64,
    prior_scale: f64,
) -> f64 {
    let n_out = w_mean.nrows() as f64;
    let n_feat = w_mean.ncols() as f64;
    let mut mean_quad = 0.0;
    for (&a, &b) in w_mean.iter().zip(prior_mean.iter()) {
        let d = a - b;
        mean_quad += d * d;
    }
    0.5 * (mean_quad / prior_scale
        + n_out * (s_trace / prior_scale + n_feat * prior_scale.ln() - s_log_det - n_feat))
}

/// `KL(Dir(alpha) || Dir(beta))` between Dirichlet distributions.
pub fn dirichlet_kl(alpha: ArrayView1<'_, f64>, beta: ArrayView1<'_, f64>) -> f64 {
    assert_eq!(alpha.len(), beta.len(), "dirichlet_kl dimension mismatch");
    let a0: f64 = alpha.sum();
    let b0: f64 = beta.sum();
    let mut kl = ln_gamma(a0) - ln_gamma(b0);
    let psi_a0 = digamma(a0);
    for (&a, &b) in alpha.iter().zip(beta.iter()) {
        kl += ln_gamma(b) - ln_gamma(a) + (a - b) * (digamma(a) - psi_a0);
    }
    kl
}

// ---------------------------------------------------------------------------
// Inverse-Wishart log-prior on a noise covariance
// ---------------------------------------------------------------------------

/// Unnormalized inverse-Wishart log-density of a noise covariance, expressed
/// through its precision: `dof/2 * log det(precision) - scale/2 *
/// tr(precision)`.
///
/// `dof` is the combined exponent on `det(precision)` (the distribution's
/// degrees-of-freedom parameter already folded together with the `dim + 1`
/// Jacobian-style offset), so a caller sets it directly. The normalizing
/// constant is omitted: it does not depend on the covariance, so objectives
/// and their gradients are unaffected.
pub fn inv_wishart_logprior(prec_log_det: f64, prec_trace: f64, dof: f64, scale: f64) -> f64 {
    0.5 * (dof * prec_log_det - scale * prec_trace)
}

// ---------------------------------------------------------------------------
// Dirichlet posterior over class probabilities
// ---------------------------------------------------------------------------

/// Conjugate Dirichlet posterior over class frequencies: prior concentration
/// plus observed class counts.
#[derive(Debug, Clone)]
pub struct DirichletPosterior {
    pub alpha: Array1<f64>,
}

impl DirichletPosterior {
    /// Posterior from a (broadcast) symmetric prior concentration and labels.
    pub fn from_labels(prior_concentration: f64, n_classes: usize, labels: &[usize]) -> Self {
        let mut alpha = Array1::from_elem(n_classes, prior_concentration);
        for &y in labels {
            assert!(y < n_classes, "label {y} out of range for {n_classes} classes");
            alpha[y] += 1.0;
        }
        DirichletPosterior { alpha }
    }

    pub fn n_classes(&self) -> usize {
        self.alpha.len()
    }

    /// Total concentration `alpha_*`.
    pub fn total(&self) -> f64 {
        self.alpha.sum()
    }

    /// `E[log rho_k] = psi(alpha_k) - psi(alpha_*)`.
    pub fn expected_log_probs(&self) -> Array1<f64> {
        let psi_total = digamma(self.total());
        self.alpha.mapv(|a| digamma(a) - psi_total)
    }

    /// `log E[rho_k] = log(alpha_k / alpha_*)`.
    pub fn log_mean_probs(&self) -> Array1<f64> {
        let total = self.total();
        self.alpha.mapv(|a| (a / total).ln())
    }
}
