//! Evaluation metrics and out-of-distribution scoring.
//!
//! Metrics: predictive negative log-likelihood and RMSE for regression;
//! accuracy, NLL, and expected calibration error (ECE, the equal-width-bin
//! estimator of Guo et al., 2017) for classification; AUROC as the exact
//! Mann–Whitney rank statistic.
//!
//! OOD scores: maximum softmax probability for discriminative heads, the
//! posterior-predictive feature density for generative heads, and a post-hoc
//! MAP covariance fit for sharpening that density. Throughout, AUROC treats
//! **in-distribution as the positive class**, so 1.0 means perfect detection.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dists;
use crate::error::{Error, Result};
use crate::psdparam::FactorLayout;

/// Default number of equal-width confidence bins for ECE.
pub const DEFAULT_ECE_BINS: usize = 15;

/// One Gaussian predictive distribution.
#[derive(Debug, Clone)]
pub struct GaussianPrediction {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

/// Flat metrics object; fields are filled per task and serialized with
/// snake_case keys. Optional fields are omitted when absent so the object
/// stays minimal and deterministic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ece: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    /// One AUROC per out-of-distribution source, in source order; present
    /// only when several sources were scored.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc_per_dataset: Option<Vec<f64>>,
    /// Predictive-std ratio between a probe region and the training inputs
    /// (interval-gap experiments).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumulative_regret_normalized: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simple_regret: Option<f64>,
    pub n_eval: usize,
}

/// Mean negative predictive log-likelihood and RMSE of the means. RMSE
/// averages squared errors over every output component.
pub fn regression_metrics(
    predictions: &[GaussianPrediction],
    targets: &ArrayView2<'_, f64>,
) -> Result<(f64, f64)> {
    if predictions.is_empty() {
        return Err(Error::invalid("regression_metrics", "empty prediction set"));
    }
    if predictions.len() != targets.nrows() {
        return Err(Error::shape(
            "regression_metrics",
            format!("{} predictions vs {} targets", predictions.len(), targets.nrows()),
        ));
    }
    let mut nll = 0.0;
    let mut sq = 0.0;
    for (pred, y) in predictions.iter().zip(targets.rows()) {
        nll -= dists::gaussian_logpdf_dense(y, pred.mean.view(), &pred.covariance)?;
        sq += y
            .iter()
            .zip(pred.mean.iter())
            .map(|(t, m)| (t - m) * (t - m))
            .sum::<f64>();
    }
    let t = predictions.len() as f64;
    let n_outputs = targets.ncols() as f64;
    Ok((nll / t, (sq / (t * n_outputs)).sqrt()))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
}

/// Accuracy (argmax, lowest index wins ties), mean negative log-likelihood of
/// the true label, and expected calibration error over `n_bins` equal-width
/// confidence bins on the maximum probability.
pub fn classification_metrics(
    probs: &ArrayView2<'_, f64>,
    labels: &[usize],
    n_bins: usize,
) -> Result<ClassificationMetrics> {
    if probs.nrows() == 0 || n_bins == 0 {
        return Err(Error::invalid(
            "classification_metrics",
            "need at least one sample and one bin",
        ));
    }
    if probs.nrows() != labels.len() {
        return Err(Error::shape(
            "classification_metrics",
            format!("{} prob rows vs {} labels", probs.nrows(), labels.len()),
        ));
    }
    let n = labels.len();
    let k = probs.ncols();
    let mut nll = 0.0;
    let mut correct_count = 0usize;
    let mut bin_n = vec![0usize; n_bins];
    let mut bin_acc = vec![0.0; n_bins];
    let mut bin_conf = vec![0.0; n_bins];
    for (row, &label) in probs.rows().into_iter().zip(labels) {
        if label >= k {
            return Err(Error::invalid(
                "classification_metrics",
                format!("label {label} out of range for {k} classes"),
            ));
        }
        let (arg, conf) = argmax(row);
        let correct = arg == label;
        correct_count += correct as usize;
        nll -= row[label].ln();
        let bin = ((conf * n_bins as f64) as usize).min(n_bins - 1);
        bin_n[bin] += 1;
        bin_acc[bin] += correct as usize as f64;
        bin_conf[bin] += conf;
    }
    let mut ece = 0.0;
    for b in 0..n_bins {
        if bin_n[b] == 0 {
            continue;
        }
        let nb = bin_n[b] as f64;
        ece += (nb / n as f64) * ((bin_acc[b] - bin_conf[b]) / nb).abs();
    }
    Ok(ClassificationMetrics {
        accuracy: correct_count as f64 / n as f64,
        nll: nll / n as f64,
        ece,
    })
}

/// Highest-probability class; the lowest index wins exact ties.
fn argmax(row: ArrayView1<'_, f64>) -> (usize, f64) {
    let mut best = 0;
    let mut best_val = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    (best, best_val)
}

/// Exact Mann–Whitney AUROC: `P(score_in > score_out) + P(tie) / 2`, with
/// in-distribution as the positive class. Computed by average ranks, so ties
/// are handled exactly in `O(n log n)`.
pub fn auroc(scores_in: &[f64], scores_out: &[f64]) -> Result<f64> {
    if scores_in.is_empty() || scores_out.is_empty() {
        return Err(Error::invalid("auroc", "both score sets must be nonempty"));
    }
    if scores_in.iter().chain(scores_out).any(|s| s.is_nan()) {
        return Err(Error::invalid("auroc", "scores must not be NaN"));
    }
    let n_in = scores_in.len();
    let n_out = scores_out.len();
    let mut all: Vec<(f64, bool)> = scores_in
        .iter()
        .map(|&s| (s, true))
        .chain(scores_out.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN after the check"));
    let mut rank_sum_in = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Tied block [i, j): every member gets the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1 ..= j
        let in_count = all[i..j].iter().filter(|e| e.1).count() as f64;
        rank_sum_in += avg_rank * in_count;
        i = j;
    }
    let u = rank_sum_in - (n_in * (n_in + 1)) as f64 / 2.0;
    Ok(u / (n_in as f64 * n_out as f64))
}

/// Maximum softmax probability — the discriminative OOD score.
pub fn msp_score(probs: ArrayView1<'_, f64>) -> f64 {
    argmax(probs).1
}

/// Per-class MAP-calibrated feature Gaussian.
#[derive(Debug, Clone)]
pub struct CalibratedClass {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    pub count: usize,
}

/// Post-hoc per-class feature Gaussians: the class feature mean and the MAP
/// covariance under the same inverse-Wishart prior the head trains with,
/// `cov = (scale * I + scatter) / (count + dof)`. The diagonal layout keeps
/// only the scatter's diagonal. These fits sharpen the density-based OOD
/// score; they are deliberately not used for label prediction.
pub fn map_covariance_calibration(
    features: &ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    dof: f64,
    scale: f64,
    layout: FactorLayout,
) -> Result<Vec<CalibratedClass>> {
    if features.nrows() != labels.len() {
        return Err(Error::shape(
            "map_covariance_calibration",
            format!("{} feature rows vs {} labels", features.nrows(), labels.len()),
        ));
    }
    let d = features.ncols();
    let mut counts = vec![0usize; n_classes];
    let mut means = vec![Array1::<f64>::zeros(d); n_classes];
    for (row, &y) in features.rows().into_iter().zip(labels) {
        if y >= n_classes {
            return Err(Error::invalid(
                "map_covariance_calibration",
                format!("label {y} out of range for {n_classes} classes"),
            ));
        }
        counts[y] += 1;
        means[y] += &row;
    }
    for (c, m) in counts.iter().zip(means.iter_mut()) {
        if *c == 0 {
            return Err(Error::invalid(
                "map_covariance_calibration",
                "every class needs at least one feature vector",
            ));
        }
        *m /= *c as f64;
    }
    let mut scatters = vec![Array2::<f64>::zeros((d, d)); n_classes];
    for (row, &y) in features.rows().into_iter().zip(labels) {
        let diff = &row.to_owned() - &means[y];
        match layout {
            FactorLayout::Dense => {
                for a in 0..d {
                    for b in 0..d {
                        scatters[y][[a, b]] += diff[a] * diff[b];
                    }
                }
            }
            FactorLayout::Diagonal => {
                for a in 0..d {
                    scatters[y][[a, a]] += diff[a] * diff[a];
                }
            }
        }
    }
    Ok((0..n_classes)
        .map(|y| {
            let denom = counts[y] as f64 + dof;
            let mut cov = scatters[y].clone();
            for a in 0..d {
                cov[[a, a]] += scale;
            }
            cov /= denom;
            CalibratedClass { mean: means[y].clone(), covariance: cov, count: counts[y] }
        })
        .collect())
}

/// Log-density of a feature vector under a mixture of calibrated class
/// Gaussians with the given log mixture weights.
pub fn calibrated_log_density(
    classes: &[CalibratedClass],
    log_weights: &[f64],
    phi: ArrayView1<'_, f64>,
) -> Result<f64> {
    if classes.len() != log_weights.len() || classes.is_empty() {
        return Err(Error::invalid(
            "calibrated_log_density",
            "need matching, nonempty classes and weights",
        ));
    }
    let mut terms = Vec::with_capacity(classes.len());
    for (c, &lw) in classes.iter().zip(log_weights) {
        terms.push(dists::gaussian_logpdf_dense(phi, c.mean.view(), &c.covariance)? + lw);
    }
    Ok(crate::mathcore::special::logsumexp(&terms))
}
