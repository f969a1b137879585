//! Experiment execution: data preparation, model construction, evaluation,
//! artifact writing, checkpoints, and hyperparameter sweeps.
//!
//! Every run directory is self-describing: `resolved_config.json` (the full
//! config after defaults and overrides), `metrics.json`, `checkpoint.json`,
//! and a training log (`curves.jsonl` per epoch, or `steps.jsonl` plus
//! `summary.json` for bandit runs). Re-running a config at the same seed
//! reproduces every artifact byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Mlp;
use crate::bandit::{run_bandit, AgentConfig, WheelEnv, N_ACTIONS};
use crate::dists::gaussian_logpdf_iso;
use crate::error::{Error, Result};
use crate::evalood::{
    auroc, calibrated_log_density, classification_metrics, map_covariance_calibration, msp_score,
    regression_metrics, CalibratedClass, GaussianPrediction, MetricsReport,
};
use crate::harness::data::{
    apply_input_normalization, apply_normalization, labels_from_targets, load_dataset_csv,
    load_matrix_csv, make_ring, make_toy_dataset, normalization_stats, split_rows,
    write_dataset_csv, NormalizationStats, ToyKind,
};
use crate::harness::{ExperimentConfig, Task};
use crate::heads::hyper::{HyperSpec, ReformulatedHyper};
use crate::heads::{
    DiscriminativeConfig, DiscriminativeHead, GenerativeConfig, GenerativeHead, Head,
    RegressionConfig, RegressionHead, Targets,
};
use crate::train::{stream_rng, streams, Dataset, Model, TrainMode, Trainer};
use crate::util;

/// Offset added to the experiment seed for the synthetic test split, so the
/// train and test generators never share a stream.
const TEST_SEED_DELTA: u64 = 0x9E37_79B9_7F4A_7C15;
/// Offset for the synthetic OOD ring.
const OOD_SEED_DELTA: u64 = 0x3C6E_F372_FE94_F82A;

/// Data after loading/generation, splitting, and normalization. When the
/// test fraction is zero, `eval` is a copy of the training set.
pub struct Prepared {
    pub train: Dataset,
    pub eval: Dataset,
    pub stats: Option<NormalizationStats>,
    /// Mean of the raw (pre-normalization) training inputs; synthetic OOD
    /// rings are centered here.
    pub raw_input_mean: Array1<f64>,
}

fn targets_matrix(t: &Targets) -> Array2<f64> {
    match t {
        Targets::Real(y) => y.clone(),
        Targets::Class(labels) => {
            Array2::from_shape_fn((labels.len(), 1), |(i, _)| labels[i] as f64)
        }
        Targets::MaskedReal { .. } => unreachable!("generators never emit masked targets"),
    }
}

fn matrix_targets(y: Array2<f64>, classification: bool) -> Result<Targets> {
    if classification {
        Ok(Targets::Class(labels_from_targets(&y.view())?))
    } else {
        Ok(Targets::Real(y))
    }
}

fn class_labels(t: &Targets) -> &[usize] {
    match t {
        Targets::Class(labels) => labels,
        _ => unreachable!("classification tasks carry class targets"),
    }
}

/// Load or generate the task's data, split it, and normalize by train-split
/// statistics.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    let classification = matches!(cfg.task, Task::DiscClass | Task::GenClass | Task::HalfMoon);
    let (mut train_x, mut train_y, mut eval_x, mut eval_y) = match cfg.task {
        Task::Bandit => {
            return Err(Error::Config(
                "the bandit task generates its own data online".into(),
            ))
        }
        Task::ToyGap | Task::HalfMoon => {
            let kind = if cfg.task == Task::ToyGap {
                ToyKind::CubicGap
            } else {
                ToyKind::HalfMoon
            };
            let (x, t) = make_toy_dataset(kind, &cfg.data.toy, cfg.seed)?;
            let (ex, et) =
                make_toy_dataset(kind, &cfg.data.toy, cfg.seed.wrapping_add(TEST_SEED_DELTA))?;
            (x, targets_matrix(&t), ex, targets_matrix(&et))
        }
        Task::Regression | Task::DiscClass | Task::GenClass => {
            let path = cfg
                .data
                .path
                .as_ref()
                .ok_or_else(|| Error::Config(format!("task `{}` needs data.path", cfg.task)))?;
            let ds = load_dataset_csv(Path::new(path), cfg.data.n_targets, false)?;
            let (train_idx, test_idx) =
                split_rows(ds.inputs.nrows(), cfg.data.test_fraction, cfg.seed);
            let tx = ds.inputs.select(Axis(0), &train_idx);
            let ty = ds.targets.select(Axis(0), &train_idx);
            let (ex, ey) = if test_idx.is_empty() {
                (tx.clone(), ty.clone())
            } else {
                (
                    ds.inputs.select(Axis(0), &test_idx),
                    ds.targets.select(Axis(0), &test_idx),
                )
            };
            (tx, ty, ex, ey)
        }
    };
    let raw_input_mean = train_x.mean_axis(Axis(0)).expect("nonempty training inputs");
    let stats = if cfg.data.normalize {
        let stats = normalization_stats(&train_x.view(), &train_y.view(), !classification);
        apply_normalization(&mut train_x, &mut train_y, &stats);
        apply_normalization(&mut eval_x, &mut eval_y, &stats);
        Some(stats)
    } else {
        None
    };
    Ok(Prepared {
        train: Dataset::new(train_x, matrix_targets(train_y, classification)?)?,
        eval: Dataset::new(eval_x, matrix_targets(eval_y, classification)?)?,
        stats,
        raw_input_mean,
    })
}

fn resolve_n_classes(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<usize> {
    if let Some(k) = cfg.head.n_classes {
        if k < 2 {
            return Err(Error::Config(format!("head.n_classes must be at least 2, got {k}")));
        }
        return Ok(k);
    }
    let max = class_labels(&prepared.train.targets)
        .iter()
        .chain(class_labels(&prepared.eval.targets))
        .max()
        .copied()
        .expect("nonempty datasets");
    Ok((max + 1).max(2))
}

/// Construct the untrained model for a config: the feature map (variational
/// when training collapses the feature posterior, a point estimate
/// otherwise) and the task's head, with hyperparameters resolved against the
/// training-set size.
pub fn build_model(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<Model> {
    let n_inputs = prepared.train.inputs.ncols();
    let widths = &cfg.mlp.layer_widths;
    if widths.first() != Some(&n_inputs) {
        return Err(Error::Config(format!(
            "mlp.layer_widths starts with {:?} but the data has {n_inputs} inputs",
            widths.first()
        )));
    }
    let mut init_rng = stream_rng(cfg.seed, streams::INIT);
    let backbone = if cfg.train.mode == TrainMode::Collapsed {
        Mlp::variational(cfg.mlp.clone(), &mut init_rng)?
    } else {
        Mlp::map(cfg.mlp.clone(), &mut init_rng)?
    };
    let n_features = backbone.n_features();
    let train_size = prepared.train.len();
    let head = match cfg.task {
        Task::Regression | Task::ToyGap => {
            let n_outputs = match &prepared.train.targets {
                Targets::Real(y) => y.ncols(),
                _ => unreachable!("regression tasks carry real targets"),
            };
            Head::Regression(RegressionHead::new(RegressionConfig {
                n_features,
                n_outputs,
                posterior_layout: cfg.head.posterior_layout,
                noise_layout: cfg.head.noise_layout,
                hyper: cfg.hyper.resolve(n_outputs, train_size)?,
                train_size,
            })?)
        }
        Task::DiscClass => {
            let n_classes = resolve_n_classes(cfg, prepared)?;
            Head::Discriminative(DiscriminativeHead::new(DiscriminativeConfig {
                n_features,
                n_classes,
                posterior_layout: cfg.head.posterior_layout,
                train_noise: cfg.head.train_noise,
                hyper: cfg.hyper.resolve(n_classes, train_size)?,
                train_size,
            })?)
        }
        Task::GenClass | Task::HalfMoon => {
            let n_classes = resolve_n_classes(cfg, prepared)?;
            Head::Generative(GenerativeHead::new(GenerativeConfig {
                n_features,
                n_classes,
                prior_concentration: cfg.head.prior_concentration,
                hyper: cfg.hyper.resolve(n_classes, train_size)?,
                train_size,
            })?)
        }
        Task::Bandit => {
            return Err(Error::Config(
                "the bandit task builds its agent internally".into(),
            ))
        }
    };
    Model::new(backbone, head)
}

/// Gaussian predictive distributions, one per input row. A point-estimate
/// feature map gives the closed form (noise covariance plus the posterior
/// quadratic form on the diagonal); a variational feature map draws
/// `n_samples` feature passes and moment-matches the resulting mixture.
pub fn regression_predictions(
    model: &Model,
    inputs: &Array2<f64>,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GaussianPrediction>> {
    let head = match &model.head {
        Head::Regression(h) => h,
        _ => {
            return Err(Error::invalid(
                "regression_predictions",
                "the model has no regression head",
            ))
        }
    };
    let noise_cov = head.noise_covariance();
    let n_outputs = head.n_outputs();
    if !model.backbone.is_variational() {
        let phi = model.backbone.mean_features(inputs)?;
        return Ok(util::map_indices(phi.nrows(), |i| {
            let (mean, s_quad) = head.predict(phi.row(i));
            let mut cov = noise_cov.clone();
            for d in 0..n_outputs {
                cov[[d, d]] += s_quad;
            }
            GaussianPrediction { mean, covariance: cov }
        }));
    }
    let mut draws = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        draws.push(model.backbone.sampled_features(inputs, rng)?);
    }
    Ok(util::map_indices(inputs.nrows(), |i| {
        let mut means = Vec::with_capacity(draws.len());
        let mut avg_quad = 0.0;
        for phi in &draws {
            let (m, q) = head.predict(phi.row(i));
            avg_quad += q / draws.len() as f64;
            means.push(m);
        }
        let mut mean = Array1::zeros(n_outputs);
        for m in &means {
            mean += m;
        }
        mean /= means.len() as f64;
        let mut cov = noise_cov.clone();
        for d in 0..n_outputs {
            cov[[d, d]] += avg_quad;
        }
        for m in &means {
            let diff = m - &mean;
            for a in 0..n_outputs {
                for b in 0..n_outputs {
                    cov[[a, b]] += diff[a] * diff[b] / means.len() as f64;
                }
            }
        }
        GaussianPrediction { mean, covariance: cov }
    }))
}

/// Predictive class probabilities, one row per input. Discriminative heads
/// average softmax draws (`n_samples` posterior samples per feature pass);
/// generative heads are closed-form. A variational feature map contributes
/// `n_samples` feature passes whose predictions are averaged. Results do not
/// depend on thread count: every row draws from its own seeded generator.
pub fn classification_probs(
    model: &Model,
    inputs: &Array2<f64>,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::invalid("classification_probs", "no input rows"));
    }
    let draws: Vec<Array2<f64>> = if model.backbone.is_variational() {
        (0..n_samples)
            .map(|_| model.backbone.sampled_features(inputs, rng))
            .collect::<Result<_>>()?
    } else {
        vec![model.backbone.mean_features(inputs)?]
    };
    let row_seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    let rows: Vec<Array1<f64>> = match &model.head {
        Head::Discriminative(h) => util::map_indices(n, |i| {
            let mut row_rng = ChaCha8Rng::seed_from_u64(row_seeds[i]);
            let mut acc = Array1::zeros(h.n_classes());
            for phi in &draws {
                acc += &h.predict_probs(phi.row(i), n_samples, &mut row_rng);
            }
            acc / draws.len() as f64
        }),
        Head::Generative(h) => util::map_indices(n, |i| {
            let mut acc = Array1::zeros(h.n_classes());
            for phi in &draws {
                acc += &h.predict_probs(phi.row(i));
            }
            acc / draws.len() as f64
        }),
        Head::Regression(_) => {
            return Err(Error::invalid(
                "classification_probs",
                "the model has no classification head",
            ))
        }
    };
    let k = rows[0].len();
    let mut out = Array2::zeros((n, k));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}

/// Feature-space log-density OOD scores (higher = more in-distribution) for
/// a generative head, optionally through post-hoc MAP-calibrated class
/// covariances, optionally normalized by the feature prior.
fn density_scores(
    model: &Model,
    inputs: &Array2<f64>,
    normalize: bool,
    calibration: Option<&[CalibratedClass]>,
) -> Result<Vec<f64>> {
    let head = match &model.head {
        Head::Generative(h) => h,
        _ => {
            return Err(Error::invalid(
                "density_scores",
                "feature-density scoring needs a generative head",
            ))
        }
    };
    let phi = model.backbone.mean_features(inputs)?;
    match calibration {
        None => Ok(util::map_indices(phi.nrows(), |i| {
            head.feature_log_density(phi.row(i), normalize)
        })),
        Some(classes) => {
            let alpha = head.alpha();
            let total: f64 = alpha.sum();
            let log_weights: Vec<f64> = alpha.iter().map(|a| (a / total).ln()).collect();
            let prior_scale = head.hyper().prior_scale;
            let zero = Array1::zeros(phi.ncols());
            let scores: Vec<Result<f64>> = util::map_indices(phi.nrows(), |i| {
                let mut s = calibrated_log_density(classes, &log_weights, phi.row(i))?;
                if normalize {
                    s -= gaussian_logpdf_iso(phi.row(i), zero.view(), prior_scale);
                }
                Ok(s)
            });
            scores.into_iter().collect()
        }
    }
}

/// In-distribution confidence scores for OOD detection: maximum softmax
/// probability for discriminative heads, feature log-density for generative
/// ones.
fn ood_scores(
    model: &Model,
    inputs: &Array2<f64>,
    probs: Option<&Array2<f64>>,
    cfg: &ExperimentConfig,
    calibration: Option<&[CalibratedClass]>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    match &model.head {
        Head::Discriminative(_) => {
            let owned;
            let probs = match probs {
                Some(p) => p,
                None => {
                    owned = classification_probs(model, inputs, cfg.eval.n_pred_samples, rng)?;
                    &owned
                }
            };
            Ok(probs.rows().into_iter().map(msp_score).collect())
        }
        Head::Generative(_) => {
            density_scores(model, inputs, cfg.eval.normalize_density, calibration)
        }
        Head::Regression(_) => Err(Error::invalid(
            "ood_scores",
            "OOD scoring needs a classification head",
        )),
    }
}

/// Standardized OOD input sets, in a fixed order: the synthetic ring first
/// (two-moons task only), then each `eval.ood_paths` file.
fn ood_sources(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<Vec<Array2<f64>>> {
    let n_inputs = prepared.train.inputs.ncols();
    let mut sources = Vec::new();
    if cfg.task == Task::HalfMoon && cfg.eval.n_ood > 0 {
        sources.push(make_ring(
            prepared.raw_input_mean.view(),
            cfg.eval.ood_radius_min,
            cfg.eval.ood_radius_max,
            cfg.eval.n_ood,
            cfg.seed.wrapping_add(OOD_SEED_DELTA),
        ));
    }
    for path in &cfg.eval.ood_paths {
        let m = load_matrix_csv(Path::new(path))?;
        if m.ncols() < n_inputs {
            return Err(Error::Config(format!(
                "OOD file {path} has {} columns; the model takes {n_inputs} inputs",
                m.ncols()
            )));
        }
        sources.push(m.slice(s![.., ..n_inputs]).to_owned());
    }
    if let Some(stats) = &prepared.stats {
        for src in &mut sources {
            apply_input_normalization(src, stats);
        }
    }
    Ok(sources)
}

/// Compute the task's metrics for a trained model. All randomness comes from
/// the prediction stream of the experiment seed, so repeated evaluation of
/// the same checkpoint is byte-identical.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &Model,
    prepared: &Prepared,
) -> Result<MetricsReport> {
    let mut rng = stream_rng(cfg.seed, streams::PREDICT);
    let k_pred = cfg.eval.n_pred_samples;
    let mut metrics = MetricsReport { n_eval: prepared.eval.len(), ..MetricsReport::default() };
    match cfg.task {
        Task::Bandit => {
            return Err(Error::Config("bandit runs produce their own metrics".into()))
        }
        Task::Regression | Task::ToyGap => {
            let preds = regression_predictions(model, &prepared.eval.inputs, k_pred, &mut rng)?;
            let targets = match &prepared.eval.targets {
                Targets::Real(y) => y,
                _ => unreachable!("regression tasks carry real targets"),
            };
            let (nll, rmse) = regression_metrics(&preds, &targets.view())?;
            metrics.nll = Some(nll);
            metrics.rmse = Some(rmse);
            if cfg.task == Task::ToyGap {
                metrics.std_ratio = Some(gap_std_ratio(model, prepared, k_pred, &mut rng)?);
            }
        }
        Task::DiscClass | Task::GenClass | Task::HalfMoon => {
            let probs = classification_probs(model, &prepared.eval.inputs, k_pred, &mut rng)?;
            let labels = class_labels(&prepared.eval.targets);
            let cm = classification_metrics(&probs.view(), labels, cfg.eval.ece_bins)?;
            metrics.accuracy = Some(cm.accuracy);
            metrics.nll = Some(cm.nll);
            metrics.ece = Some(cm.ece);

            let calibration = if cfg.eval.map_calibration {
                Some(fit_calibration(cfg, model, prepared)?)
            } else {
                None
            };
            let sources = ood_sources(cfg, prepared)?;
            if !sources.is_empty() {
                let scores_in = ood_scores(
                    model,
                    &prepared.eval.inputs,
                    Some(&probs),
                    cfg,
                    calibration.as_deref(),
                    &mut rng,
                )?;
                let mut aurocs = Vec::with_capacity(sources.len());
                for src in &sources {
                    let scores_out =
                        ood_scores(model, src, None, cfg, calibration.as_deref(), &mut rng)?;
                    aurocs.push(auroc(&scores_in, &scores_out)?);
                }
                metrics.auroc = Some(aurocs[0]);
                if aurocs.len() > 1 {
                    metrics.auroc_per_dataset = Some(aurocs);
                }
            }
        }
    }
    Ok(metrics)
}

/// Post-hoc per-class feature Gaussians under the head's own noise prior,
/// fitted on training-set mean features. Used only for density OOD scores.
fn fit_calibration(
    cfg: &ExperimentConfig,
    model: &Model,
    prepared: &Prepared,
) -> Result<Vec<CalibratedClass>> {
    let head = match &model.head {
        Head::Generative(h) => h,
        _ => {
            return Err(Error::Config(
                "eval.map_calibration applies to generative-head tasks only".into(),
            ))
        }
    };
    let phi = model.backbone.mean_features(&prepared.train.inputs)?;
    let labels = class_labels(&prepared.train.targets);
    let raw = head.hyper();
    map_covariance_calibration(
        &phi.view(),
        labels,
        head.n_classes(),
        raw.noise_dof,
        raw.noise_scale,
        cfg.head.posterior_layout,
    )
}

/// Ratio of the predictive standard deviation at the input-space origin (the
/// middle of the cubic task's support gap) to the average predictive
/// standard deviation over the training inputs. Well-calibrated epistemic
/// uncertainty makes this markedly larger than one.
fn gap_std_ratio(
    model: &Model,
    prepared: &Prepared,
    k_pred: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let train_preds = regression_predictions(model, &prepared.train.inputs, k_pred, rng)?;
    let mean_train_std = train_preds
        .iter()
        .map(|p| p.covariance[[0, 0]].sqrt())
        .sum::<f64>()
        / train_preds.len() as f64;
    let mut probe = Array2::zeros((1, prepared.train.inputs.ncols()));
    if let Some(stats) = &prepared.stats {
        apply_input_normalization(&mut probe, stats);
    }
    let probe_pred = regression_predictions(model, &probe, k_pred, rng)?;
    Ok(probe_pred[0].covariance[[0, 0]].sqrt() / mean_train_std)
}

/// One named parameter array in a checkpoint.
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// All trainable state, keyed by stable parameter names. A generative head's
/// class-frequency posterior is deliberately absent: it is an exact count
/// statistic of the training labels and is refitted on load.
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    params: BTreeMap<String, CheckpointArray>,
}

/// Write every model parameter to a JSON checkpoint. Values must be finite
/// (JSON cannot round-trip anything else).
pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let mut params = BTreeMap::new();
    for p in model.params() {
        if let Some(&bad) = p.value.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                term: p.name.clone(),
                value: bad,
                context: "checkpoint save".into(),
            });
        }
        let entry = CheckpointArray {
            shape: p.value.shape().to_vec(),
            data: p.value.iter().copied().collect(),
        };
        if params.insert(p.name.clone(), entry).is_some() {
            return Err(Error::Config(format!("duplicate parameter name `{}`", p.name)));
        }
    }
    let text = serde_json::to_string(&CheckpointFile { params }).expect("checkpoints serialize");
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Restore a checkpoint into a freshly built model. Every parameter must
/// match by name and shape, and the file may not carry extras — a mismatch
/// means the config does not describe the checkpointed architecture.
pub fn load_checkpoint(path: &Path, model: &mut Model) -> Result<()> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        detail: e.to_string(),
    })?;
    let mut remaining = file.params;
    for p in model.params_mut() {
        let entry = remaining.remove(&p.name).ok_or_else(|| {
            Error::Config(format!("checkpoint is missing parameter `{}`", p.name))
        })?;
        if entry.shape != p.value.shape() {
            return Err(Error::Config(format!(
                "parameter `{}` has shape {:?} in the checkpoint but {:?} in the model",
                p.name,
                entry.shape,
                p.value.shape()
            )));
        }
        p.value = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&entry.shape), entry.data)
            .map_err(|e| Error::Config(format!("parameter `{}`: {e}", p.name)))?;
        p.zero_grad();
    }
    if let Some(name) = remaining.keys().next() {
        return Err(Error::Config(format!(
            "checkpoint carries parameter `{name}` the model does not have"
        )));
    }
    Ok(())
}

/// A finished run: where it wrote, what it measured, and the trained model.
pub struct RunOutputs {
    pub out_dir: PathBuf,
    pub metrics: MetricsReport,
    pub model: Model,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_resolved_config(out_dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg).expect("configs serialize");
    write_text(&out_dir.join("resolved_config.json"), &text)
}

fn write_metrics(out_dir: &Path, metrics: &MetricsReport) -> Result<()> {
    let text = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    write_text(&out_dir.join("metrics.json"), &text)
}

/// Execute a config end to end and write its artifact directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutputs> {
    cfg.validate()?;
    let out_dir = cfg.resolved_out_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_resolved_config(&out_dir, cfg)?;
    if cfg.task == Task::Bandit {
        return run_bandit_task(cfg, &out_dir);
    }

    let prepared = prepare_data(cfg)?;
    let mut model = build_model(cfg, &prepared)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let mut trainer = Trainer::new(train_cfg, &model)?;
    let records = trainer.run_epochs(&mut model, &prepared.train)?;
    let mut curves = String::new();
    for r in &records {
        curves.push_str(&serde_json::to_string(r).expect("epoch records serialize"));
        curves.push('\n');
    }
    write_text(&out_dir.join("curves.jsonl"), &curves)?;

    let metrics = evaluate_model(cfg, &model, &prepared)?;
    write_metrics(&out_dir, &metrics)?;
    save_checkpoint(&out_dir.join("checkpoint.json"), &model)?;
    Ok(RunOutputs { out_dir, metrics, model })
}

/// The bandit leg of [`run_experiment`]: Thompson sampling on the wheel with
/// replay refits, logged per interaction.
fn run_bandit_task(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutputs> {
    let mut train = cfg.train.clone();
    train.seed = cfg.seed;
    let agent = AgentConfig {
        mlp: cfg.mlp.clone(),
        hyper: cfg.hyper.resolve(N_ACTIONS, cfg.bandit.total_steps)?,
        posterior_layout: cfg.head.posterior_layout,
        train,
        seed: cfg.seed,
    };
    let mut env = WheelEnv::new(cfg.bandit.wheel.clone(), cfg.seed)?;
    let (log, model) = run_bandit(
        &mut env,
        &agent,
        cfg.bandit.total_steps,
        cfg.bandit.update_period,
        cfg.bandit.grad_steps_per_update,
    )?;
    write_text(&out_dir.join("steps.jsonl"), &log.steps_jsonl())?;
    write_text(&out_dir.join("summary.json"), &log.summary_json())?;
    let metrics = MetricsReport {
        cumulative_regret_normalized: Some(log.summary.cumulative_regret_normalized),
        simple_regret: Some(log.summary.simple_regret),
        n_eval: log.summary.total_steps,
        ..MetricsReport::default()
    };
    write_metrics(out_dir, &metrics)?;
    save_checkpoint(&out_dir.join("checkpoint.json"), &model)?;
    Ok(RunOutputs { out_dir: out_dir.to_path_buf(), metrics, model })
}

/// Re-evaluate a finished supervised run from its checkpoint: the data is
/// re-prepared from the same seed (identical split and statistics), the
/// checkpoint restored, the class-frequency posterior refitted, and
/// `metrics.json` rewritten.
pub fn eval_experiment(cfg: &ExperimentConfig) -> Result<RunOutputs> {
    cfg.validate()?;
    if cfg.task == Task::Bandit {
        return Err(Error::Config(
            "bandit runs interact with a live environment and cannot be re-evaluated".into(),
        ));
    }
    let out_dir = cfg.resolved_out_dir();
    let prepared = prepare_data(cfg)?;
    let mut model = build_model(cfg, &prepared)?;
    load_checkpoint(&out_dir.join("checkpoint.json"), &mut model)?;
    model.fit_generative_class_posterior(&prepared.train.targets)?;
    let metrics = evaluate_model(cfg, &model, &prepared)?;
    write_metrics(&out_dir, &metrics)?;
    Ok(RunOutputs { out_dir, metrics, model })
}

/// Generate the config's synthetic dataset and write it (raw, without
/// normalization) to `dataset.csv` in the output directory.
pub fn write_toy_dataset(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let kind = match cfg.task {
        Task::ToyGap => ToyKind::CubicGap,
        Task::HalfMoon => ToyKind::HalfMoon,
        _ => {
            return Err(Error::Config(format!(
                "task `{}` has no synthetic generator",
                cfg.task
            )))
        }
    };
    let (x, t) = make_toy_dataset(kind, &cfg.data.toy, cfg.seed)?;
    let y = targets_matrix(&t);
    let out_dir = cfg.resolved_out_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let path = out_dir.join("dataset.csv");
    write_dataset_csv(&path, &x.view(), &y.view())?;
    Ok(path)
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Run the config once per point of its sweep grid (cartesian product over
/// the non-empty axes; empty axes keep the base value). The base `hyper`
/// must be in the reformulated coordinates, which the grid perturbs. Each
/// point becomes a full run under `sweep_{i:03}/`, and a `sweep.csv` at the
/// root collects the grid coordinates, headline metrics, and — for
/// regression heads — the fitted mean noise precision and posterior scale.
/// Returns the CSV path.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let HyperSpec::Reformulated(base) = cfg.hyper else {
        return Err(Error::Config(
            "sweeps need hyper.reformulated as the base point".into(),
        ));
    };
    if cfg.task == Task::Bandit {
        return Err(Error::Config("sweeps cover the supervised tasks".into()));
    }
    let out_root = cfg.resolved_out_dir();
    fs::create_dir_all(&out_root).map_err(|e| Error::io(out_root.display().to_string(), e))?;
    write_resolved_config(&out_root, cfg)?;

    let axis = |values: &Vec<f64>, base: f64| -> Vec<f64> {
        if values.is_empty() {
            vec![base]
        } else {
            values.clone()
        }
    };
    let npms = axis(&cfg.sweep.noise_precision_modes, base.noise_precision_mode);
    let psms = axis(&cfg.sweep.posterior_scale_modes, base.posterior_scale_mode);
    let nss = axis(&cfg.sweep.noise_strengths, base.noise_strength);
    let kss = axis(&cfg.sweep.kl_strengths, base.kl_strength);

    let mut csv = String::from(
        "run,noise_precision_mode,posterior_scale_mode,noise_strength,kl_strength,\
         nll,rmse,accuracy,ece,auroc,noise_precision_mean,posterior_scale_mean\n",
    );
    let mut i = 0usize;
    for &npm in &npms {
        for &psm in &psms {
            for &ns in &nss {
                for &ks in &kss {
                    let mut sub = cfg.clone();
                    sub.hyper = HyperSpec::Reformulated(ReformulatedHyper {
                        noise_precision_mode: npm,
                        posterior_scale_mode: psm,
                        noise_strength: ns,
                        kl_strength: ks,
                    });
                    sub.sweep = Default::default();
                    sub.out_dir =
                        Some(out_root.join(format!("sweep_{i:03}")).display().to_string());
                    let outputs = run_experiment(&sub)?;
                    let (np_mean, ps_mean) = match &outputs.model.head {
                        Head::Regression(h) => (
                            Some(
                                h.noise_precision_factor().trace_gram()
                                    / h.n_outputs() as f64,
                            ),
                            Some(h.posterior_factor().trace_gram() / h.n_features() as f64),
                        ),
                        _ => (None, None),
                    };
                    let m = &outputs.metrics;
                    csv.push_str(&format!(
                        "{i},{npm},{psm},{ns},{ks},{},{},{},{},{},{},{}\n",
                        csv_cell(m.nll),
                        csv_cell(m.rmse),
                        csv_cell(m.accuracy),
                        csv_cell(m.ece),
                        csv_cell(m.auroc),
                        csv_cell(np_mean),
                        csv_cell(ps_mean),
                    ));
                    i += 1;
                }
            }
        }
    }
    let path = out_root.join("sweep.csv");
    write_text(&path, &csv)?;
    Ok(path)
}
