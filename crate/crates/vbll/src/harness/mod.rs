//! Experiment harness: JSON-configured end-to-end runs.
//!
//! A single [`ExperimentConfig`] names a task, points at data (a CSV file or
//! a synthetic generator), and carries the feature-map, head, training, and
//! evaluation settings. [`run::run_experiment`] executes it and writes a
//! self-describing output directory: the resolved config, a metrics report,
//! a parameter checkpoint, and a per-epoch (or per-interaction) log. Every
//! random choice derives from the one experiment seed, so a config plus a
//! seed is a complete, replayable description of a run.

pub mod data;
pub mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backbone::MlpConfig;
use crate::bandit::WheelConfig;
use crate::error::{Error, Result};
use crate::evalood::DEFAULT_ECE_BINS;
use crate::heads::hyper::HyperSpec;
use crate::psdparam::FactorLayout;
use crate::train::TrainConfig;

pub use data::ToyParams;

/// What the experiment trains and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Gaussian-output regression on a CSV dataset.
    Regression,
    /// Softmax-likelihood classification on a CSV dataset.
    DiscClass,
    /// Class-conditional feature-density classification on a CSV dataset.
    GenClass,
    /// Thompson sampling on the wheel environment.
    Bandit,
    /// Synthetic 1-d cubic regression with a gap in the input support;
    /// reports how much the predictive spread grows inside the gap.
    ToyGap,
    /// Synthetic two-moons classification with a ring of outliers for
    /// density-based OOD scoring.
    HalfMoon,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Task::Regression => "regression",
            Task::DiscClass => "disc-class",
            Task::GenClass => "gen-class",
            Task::Bandit => "bandit",
            Task::ToyGap => "toy-gap",
            Task::HalfMoon => "half-moon",
        };
        f.write_str(name)
    }
}

/// Where the data comes from and how it is prepared.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file with inputs followed by target columns. Ignored by the
    /// synthetic tasks and the bandit.
    pub path: Option<String>,
    /// Trailing target columns in the CSV.
    pub n_targets: usize,
    /// Standardize inputs (and center regression targets) by train-split
    /// statistics.
    pub normalize: bool,
    /// Fraction of rows held out for evaluation (rounded; the train side
    /// always keeps at least one row). Zero evaluates on the training set.
    pub test_fraction: f64,
    /// Synthetic-generator knobs, used by the toy tasks only.
    pub toy: ToyParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            n_targets: 1,
            normalize: true,
            test_fraction: 0.1,
            toy: ToyParams::default(),
        }
    }
}

/// Head architecture knobs shared by the tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Layout of the posterior covariance factor(s).
    pub posterior_layout: FactorLayout,
    /// Layout of the regression noise precision factor.
    pub noise_layout: FactorLayout,
    /// Number of classes; inferred from the labels when absent.
    pub n_classes: Option<usize>,
    /// Dirichlet prior concentration for the generative head.
    pub prior_concentration: f64,
    /// Train the discriminative head's logit-noise scales.
    pub train_noise: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            posterior_layout: FactorLayout::Dense,
            noise_layout: FactorLayout::Dense,
            n_classes: None,
            prior_concentration: 1.0,
            train_noise: true,
        }
    }
}

/// Evaluation and OOD-scoring settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Extra input-only CSV files scored as out-of-distribution sets.
    pub ood_paths: Vec<String>,
    /// Posterior draws per point for discriminative predictive probabilities
    /// and for mixture predictions with a sampled feature map.
    pub n_pred_samples: usize,
    /// Equal-width confidence bins for the calibration error.
    pub ece_bins: usize,
    /// Report feature densities relative to the feature prior, which removes
    /// the bulk volume factor from the OOD score.
    pub normalize_density: bool,
    /// Refit per-class feature Gaussians post hoc (MAP covariance under the
    /// head's noise prior) and score OOD with those instead of the head's
    /// own posterior. Never affects label predictions.
    pub map_calibration: bool,
    /// Ring-outlier count for the two-moons task.
    pub n_ood: usize,
    /// Inner ring radius, in raw input units around the training mean.
    pub ood_radius_min: f64,
    /// Outer ring radius.
    pub ood_radius_max: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ood_paths: Vec::new(),
            n_pred_samples: 10,
            ece_bins: DEFAULT_ECE_BINS,
            normalize_density: true,
            map_calibration: false,
            n_ood: 500,
            ood_radius_min: 3.0,
            ood_radius_max: 4.0,
        }
    }
}

/// Bandit-task runtime settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditRunConfig {
    pub wheel: WheelConfig,
    pub total_steps: usize,
    /// Steps between replay refits.
    pub update_period: usize,
    /// Gradient steps per refit.
    pub grad_steps_per_update: usize,
}

impl Default for BanditRunConfig {
    fn default() -> Self {
        BanditRunConfig {
            wheel: WheelConfig::default(),
            total_steps: 8000,
            update_period: 20,
            grad_steps_per_update: 100,
        }
    }
}

/// Grid axes for hyperparameter sweeps, in the mode/strength coordinates.
/// Empty axes keep the base config's value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub noise_precision_modes: Vec<f64>,
    pub posterior_scale_modes: Vec<f64>,
    pub noise_strengths: Vec<f64>,
    pub kl_strengths: Vec<f64>,
}

impl SweepGrid {
    pub fn n_points(&self) -> usize {
        [
            &self.noise_precision_modes,
            &self.posterior_scale_modes,
            &self.noise_strengths,
            &self.kl_strengths,
        ]
        .iter()
        .map(|axis| axis.len().max(1))
        .product()
    }
}

/// A complete experiment description. `task` and `hyper` are required;
/// everything else has conventional defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub data: DataConfig,
    /// Feature-map architecture. The first width must equal the input
    /// dimension; a single width and no hidden layers is the identity map.
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub head: HeadConfig,
    /// Head prior/regularization knobs, in exactly one of the two coordinate
    /// systems (`raw` or `reformulated`).
    pub hyper: HyperSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub bandit: BanditRunConfig,
    #[serde(default)]
    pub sweep: SweepGrid,
    /// Output directory; defaults to `runs/{task}-seed{seed}`.
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Master seed. Data generation, splitting, initialization, training,
    /// and prediction each derive their own stream from it; `train.seed` is
    /// overridden by this value.
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Output directory after applying the default naming scheme.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match &self.out_dir {
            Some(dir) => PathBuf::from(dir),
            None => PathBuf::from(format!("runs/{}-seed{}", self.task, self.seed)),
        }
    }

    /// Cross-field checks not expressible in the type system.
    pub fn validate(&self) -> Result<()> {
        if self.data.n_targets == 0 {
            return Err(Error::Config("data.n_targets must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::Config(format!(
                "data.test_fraction must be in [0, 1), got {}",
                self.data.test_fraction
            )));
        }
        if self.eval.n_pred_samples == 0 {
            return Err(Error::Config("eval.n_pred_samples must be at least 1".into()));
        }
        if self.eval.ece_bins == 0 {
            return Err(Error::Config("eval.ece_bins must be at least 1".into()));
        }
        if self.eval.ood_radius_min > self.eval.ood_radius_max {
            return Err(Error::Config(format!(
                "eval.ood_radius_min {} exceeds ood_radius_max {}",
                self.eval.ood_radius_min, self.eval.ood_radius_max
            )));
        }
        match self.task {
            Task::Regression | Task::DiscClass | Task::GenClass => {
                if self.data.path.is_none() {
                    return Err(Error::Config(format!(
                        "task `{}` needs data.path",
                        self.task
                    )));
                }
            }
            Task::Bandit | Task::ToyGap | Task::HalfMoon => {}
        }
        Ok(())
    }
}

/// Apply one `key=value` override to a JSON config tree. The key is a
/// dot-separated path; missing intermediate objects are created. The value is
/// parsed as JSON when possible (numbers, booleans, arrays) and falls back to
/// a plain string, so `train.learning_rate=0.01` and `data.path=uci.csv` both
/// read naturally.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::Config(format!("override `{spec}` is not of the form key=value"))
    })?;
    if path.is_empty() {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let map = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override `{spec}`: `{}` is not an object",
                segments[..i].join(".")
            ))
        })?;
        if i + 1 == segments.len() {
            map.insert((*seg).to_string(), value);
            return Ok(());
        }
        node = map
            .entry((*seg).to_string())
            .or_insert_with(|| Value::Object(serde_json::Map::new()));
    }
    unreachable!("loop returns on the last segment")
}

/// Load a JSON experiment config and apply command-line overrides before
/// deserializing, so overrides can touch fields the file omits.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        detail: e.to_string(),
    })?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
