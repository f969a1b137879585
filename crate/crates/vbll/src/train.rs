//! Mini-batch training for a feature map plus Bayesian last layer.
//!
//! Three modes share one loop:
//!
//! * **full** — point (MAP) features and the head train jointly; the
//!   objective gains `log p(theta) / T`.
//! * **post** — the feature map is frozen and only the head trains; the
//!   weight-prior term is dropped (it is constant).
//! * **collapsed** — variational feature weights train jointly with the head
//!   using one reparameterized weight sample per step; the objective gains
//!   `-feature_kl_weight * KL(q(theta) || p(theta)) / T`.
//!
//! Every run is a pure function of the configuration and seed: epoch
//! shuffling, weight sampling, and batch draws come from separate
//! counter-based RNG streams, batches are the first `floor(T / B)` chunks of
//! the epoch permutation (the remainder is dropped), and batch losses are
//! whole-batch array programs with a fixed reduction order.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Mlp;
use crate::error::{Error, Result};
use crate::heads::{Head, Targets, Terms};
use crate::mathcore::tape::{Arr, Gradients, Tape, Var};

/// Distinct RNG stream ids, so that consumers of one stream (say, weight
/// samples) never perturb another (batch order). All are derived from the
/// single run seed.
pub mod streams {
    /// Epoch permutations and replay-batch draws.
    pub const SHUFFLE: u64 = 1;
    /// Variational-weight reparameterization draws.
    pub const WEIGHT_SAMPLE: u64 = 2;
    /// Posterior samples taken at prediction time.
    pub const PREDICT: u64 = 3;
    /// Train/test row assignment.
    pub const SPLIT: u64 = 4;
    /// Synthetic dataset generation.
    pub const DATA: u64 = 5;
    /// Parameter initialization.
    pub const INIT: u64 = 6;
    /// Bandit environment (contexts and rewards).
    pub const ENV: u64 = 10;
    /// Bandit agent (Thompson draws).
    pub const AGENT: u64 = 11;
}

/// Seeded RNG on one of the [`streams`].
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgdm {
        #[serde(default = "defaults::momentum")]
        momentum: f64,
    },
    #[serde(rename = "adamw")]
    AdamW {
        #[serde(default = "defaults::beta1")]
        beta1: f64,
        #[serde(default = "defaults::beta2")]
        beta2: f64,
        #[serde(default = "defaults::adam_eps")]
        eps: f64,
    },
}

/// Serde field defaults for [`Optimizer`], so configs may write
/// `{"sgdm": {}}` or `{"adamw": {}}` and get the conventional settings.
mod defaults {
    pub(super) fn momentum() -> f64 {
        0.9
    }
    pub(super) fn beta1() -> f64 {
        0.9
    }
    pub(super) fn beta2() -> f64 {
        0.999
    }
    pub(super) fn adam_eps() -> f64 {
        1e-8
    }
}

impl Optimizer {
    pub fn sgdm(momentum: f64) -> Self {
        Optimizer::Sgdm { momentum }
    }

    pub fn adamw() -> Self {
        Optimizer::AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Full,
    Post,
    Collapsed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// L2 pull for SGDM (added to gradients), decoupled decay for AdamW.
    pub weight_decay: f64,
    /// Gradients are rescaled when their global norm exceeds this.
    pub grad_clip_max: f64,
    pub seed: u64,
    /// Overrides the learning rate for feature-map parameters. Zero freezes
    /// the feature map outright: its gradients are neither computed nor
    /// counted toward the clipping norm, so the run matches post-training.
    pub backbone_lr: Option<f64>,
    /// Overrides the learning rate for noise-covariance parameters.
    pub noise_lr: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Full,
            epochs: 1,
            batch_size: 32,
            optimizer: Optimizer::sgdm(0.9),
            learning_rate: 1e-3,
            weight_decay: 0.0,
            grad_clip_max: 1.0,
            seed: 0,
            backbone_lr: None,
            noise_lr: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("TrainConfig", "batch_size must be at least 1"));
        }
        if !(self.grad_clip_max > 0.0) {
            return Err(Error::invalid(
                "TrainConfig",
                format!("grad_clip_max must be positive, got {}", self.grad_clip_max),
            ));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::invalid("TrainConfig", "learning_rate must be nonnegative"));
        }
        Ok(())
    }
}

/// Inputs plus aligned targets.
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Targets) -> Result<Self> {
        if inputs.nrows() != targets.len() {
            return Err(Error::shape(
                "Dataset",
                format!("{} input rows vs {} targets", inputs.nrows(), targets.len()),
            ));
        }
        if inputs.nrows() == 0 {
            return Err(Error::invalid("Dataset", "dataset must be nonempty"));
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, idx: &[usize]) -> (Array2<f64>, Targets) {
        (self.inputs.select(Axis(0), idx), self.targets.gather(idx))
    }
}

/// Feature map plus head, trained as one parameter vector (feature-map
/// parameters first).
pub struct Model {
    pub backbone: Mlp,
    pub head: Head,
}

/// Objective nodes for one batch.
pub(crate) struct BuiltObjective {
    pub loss: Var,
    pub objective: Var,
    pub terms: Terms,
    pub backbone_reg: Var,
    pub weight_kl: Option<Var>,
}

/// Which parameters become differentiable leaves when building a batch loss.
#[derive(Clone, Copy, PartialEq)]
enum LeafMask {
    None,
    HeadOnly,
    All,
}

impl Model {
    pub fn new(backbone: Mlp, head: Head) -> Result<Self> {
        if backbone.n_features() != head.n_features() {
            return Err(Error::shape(
                "Model::new",
                format!(
                    "feature map emits {} features but the head expects {}",
                    backbone.n_features(),
                    head.n_features()
                ),
            ));
        }
        Ok(Model { backbone, head })
    }

    pub fn params(&self) -> Vec<&crate::mathcore::param::Parameter> {
        let mut out = self.backbone.params();
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut crate::mathcore::param::Parameter> {
        let mut out = self.backbone.params_mut();
        out.extend(self.head.params_mut());
        out
    }

    pub fn n_backbone_params(&self) -> usize {
        self.backbone.params().len()
    }

    /// Exact conjugate update of a generative head's class-frequency
    /// posterior; a no-op for other heads.
    pub fn fit_generative_class_posterior(&mut self, targets: &Targets) -> Result<()> {
        if let (Head::Generative(h), Targets::Class(y)) = (&mut self.head, targets) {
            h.fit_class_posterior(y)?;
        }
        Ok(())
    }

    /// Training objective of one batch (higher is better), without building
    /// gradients. Variational feature weights draw one sample from `rng`.
    pub fn objective_value<R: rand::Rng>(
        &self,
        inputs: &Array2<f64>,
        targets: &Targets,
        mode: TrainMode,
        rng: &mut R,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let built = self.build_objective(&mut tape, inputs, targets, mode, LeafMask::None, rng)?;
        Ok(tape.scalar_value(built.objective))
    }

    fn build_objective<R: rand::Rng>(
        &self,
        tape: &mut Tape,
        inputs: &Array2<f64>,
        targets: &Targets,
        mode: TrainMode,
        mask: LeafMask,
        rng: &mut R,
    ) -> Result<BuiltObjective> {
        let params = self.params();
        let n_backbone = self.backbone.params().len();
        let mut vars = Vec::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            let leaf = p.trainable
                && match mask {
                    LeafMask::None => false,
                    LeafMask::HeadOnly => i >= n_backbone,
                    LeafMask::All => true,
                };
            let v = if leaf {
                tape.leaf(i, p.value.clone())
            } else {
                tape.constant(p.value.clone())
            };
            vars.push(v);
        }

        let xv = tape.constant2(inputs);
        let (features, backbone_reg, weight_kl) = if mode == TrainMode::Post {
            // Frozen features: the weight-prior term is constant and dropped.
            let f = self.backbone.features(tape, xv, &vars[..n_backbone], rng)?;
            (f.features, tape.scalar(0.0), None)
        } else {
            let f = self.backbone.features(tape, xv, &vars[..n_backbone], rng)?;
            (f.features, f.regularizer, f.weight_kl)
        };

        let terms = self
            .head
            .objective_terms(tape, features, targets, &vars[n_backbone..])?;
        let kl_weight = self.head.kl_weight();
        let train_size = self.head.train_size();
        let objective = terms.objective(tape, kl_weight, train_size);
        let reg_scaled = tape.scale(backbone_reg, 1.0 / train_size as f64);
        let objective = tape.add(objective, reg_scaled);
        let loss = tape.neg(objective);
        Ok(BuiltObjective { loss, objective, terms, backbone_reg, weight_kl })
    }
}

/// Copy a point-estimate last layer into the head's posterior mean — the
/// usual warm start for post-training on a pretrained network.
pub fn init_head_mean_from(head: &mut Head, w: &Array2<f64>) -> Result<()> {
    let target = match head {
        Head::Regression(h) => h.params_mut().swap_remove(0),
        Head::Discriminative(h) => h.params_mut().swap_remove(0),
        Head::Generative(h) => h.params_mut().swap_remove(0),
    };
    if target.value.shape() != w.shape() {
        return Err(Error::shape(
            "init_head_mean_from",
            format!("expected {:?}, got {:?}", target.value.shape(), w.shape()),
        ));
    }
    target.value = w.clone().into_dyn();
    Ok(())
}

/// One epoch's averaged records; `wall_time_s` is informational and must be
/// kept out of anything compared across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub data_avg: f64,
    pub kl: f64,
    pub noise_logprior: f64,
    pub backbone_regularizer: f64,
    pub weight_kl: f64,
    pub wall_time_s: f64,
}

/// Gradient-descent state that persists across calls — the warm-start
/// behavior interactive loops (bandits) rely on.
pub struct Trainer {
    cfg: TrainConfig,
    updater: ParamUpdater,
    shuffle_rng: ChaCha8Rng,
    weight_rng: ChaCha8Rng,
    steps_taken: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: &Model) -> Result<Self> {
        cfg.validate()?;
        match (cfg.mode, model.backbone.is_variational()) {
            (TrainMode::Full, true) => {
                return Err(Error::invalid(
                    "Trainer::new",
                    "full mode expects point feature weights; use collapsed mode",
                ));
            }
            (TrainMode::Collapsed, false) => {
                return Err(Error::invalid(
                    "Trainer::new",
                    "collapsed mode expects variational feature weights",
                ));
            }
            _ => {}
        }
        let n_params = model.params().len();
        Ok(Trainer {
            updater: ParamUpdater::new(cfg.optimizer, cfg.weight_decay, n_params),
            shuffle_rng: stream_rng(cfg.seed, streams::SHUFFLE),
            weight_rng: stream_rng(cfg.seed, streams::WEIGHT_SAMPLE),
            steps_taken: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// Run `cfg.epochs` epochs of shuffled mini-batches.
    pub fn run_epochs(&mut self, model: &mut Model, data: &Dataset) -> Result<Vec<EpochRecord>> {
        model.fit_generative_class_posterior(&data.targets)?;
        let t = data.len();
        let b_eff = self.cfg.batch_size.min(t);
        let n_batches = t / b_eff;
        let mut history = Vec::with_capacity(self.cfg.epochs);
        let mut order: Vec<usize> = (0..t).collect();
        for epoch in 0..self.cfg.epochs {
            let start = Instant::now();
            order.shuffle(&mut self.shuffle_rng);
            let mut sums = [0.0; 6];
            for batch in 0..n_batches {
                let idx = &order[batch * b_eff..(batch + 1) * b_eff];
                let (x, y) = data.batch(idx);
                let step = self.step(model, &x, &y)?;
                for (s, v) in sums.iter_mut().zip(step) {
                    *s += v;
                }
            }
            let scale = 1.0 / n_batches as f64;
            history.push(EpochRecord {
                epoch,
                loss: sums[0] * scale,
                data_avg: sums[1] * scale,
                kl: sums[2] * scale,
                noise_logprior: sums[3] * scale,
                backbone_regularizer: sums[4] * scale,
                weight_kl: sums[5] * scale,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
        Ok(history)
    }

    /// Run `n_steps` gradient steps on batches drawn without replacement from
    /// `data` (fresh draw per step). Returns the mean loss.
    pub fn run_steps(&mut self, model: &mut Model, data: &Dataset, n_steps: usize) -> Result<f64> {
        model.fit_generative_class_posterior(&data.targets)?;
        let t = data.len();
        let b_eff = self.cfg.batch_size.min(t);
        let mut total = 0.0;
        for _ in 0..n_steps {
            let idx = rand::seq::index::sample(&mut self.shuffle_rng, t, b_eff).into_vec();
            let (x, y) = data.batch(&idx);
            total += self.step(model, &x, &y)?[0];
        }
        Ok(if n_steps == 0 { 0.0 } else { total / n_steps as f64 })
    }

    /// One gradient step on the given batch. Returns
    /// `[loss, data_avg, kl, noise_logprior, backbone_regularizer, weight_kl]`.
    fn step(&mut self, model: &mut Model, x: &Array2<f64>, y: &Targets) -> Result<[f64; 6]> {
        let mask = match self.cfg.mode {
            TrainMode::Post => LeafMask::HeadOnly,
            TrainMode::Full | TrainMode::Collapsed => {
                if self.cfg.backbone_lr == Some(0.0) {
                    LeafMask::HeadOnly
                } else {
                    LeafMask::All
                }
            }
        };
        let mut tape = Tape::new();
        let built =
            model.build_objective(&mut tape, x, y, self.cfg.mode, mask, &mut self.weight_rng)?;
        let record = [
            tape.scalar_value(built.loss),
            tape.scalar_value(built.terms.data_avg),
            tape.scalar_value(built.terms.kl),
            tape.scalar_value(built.terms.noise_logprior),
            tape.scalar_value(built.backbone_reg),
            built.weight_kl.map_or(0.0, |v| tape.scalar_value(v)),
        ];
        self.check_finite(&tape, &built)?;
        let grads = tape.backward(built.loss)?;
        self.apply(model, grads);
        self.steps_taken += 1;
        Ok(record)
    }

    /// Reject divergence before it propagates, naming the broken term.
    fn check_finite(&self, tape: &Tape, built: &BuiltObjective) -> Result<()> {
        let mut checks = vec![
            ("data_avg", built.terms.data_avg),
            ("kl", built.terms.kl),
            ("noise_logprior", built.terms.noise_logprior),
            ("backbone_regularizer", built.backbone_reg),
            ("loss", built.loss),
        ];
        if let Some(kl) = built.weight_kl {
            checks.push(("weight_kl", kl));
        }
        for (name, var) in checks {
            let value = tape.scalar_value(var);
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    term: name.to_string(),
                    value,
                    context: format!("training step {}", self.steps_taken),
                });
            }
        }
        Ok(())
    }

    fn apply(&mut self, model: &mut Model, mut grads: Gradients) {
        let n_backbone = model.n_backbone_params();
        let mut params = model.params_mut();
        let mut updates: Vec<(usize, Arr)> = Vec::with_capacity(params.len());
        let mut sq_norm = 0.0;
        for i in 0..params.len() {
            if let Some(g) = grads.take(i) {
                sq_norm += g.iter().map(|v| v * v).sum::<f64>();
                updates.push((i, g));
            }
        }
        let norm = sq_norm.sqrt();
        let clip = if norm > self.cfg.grad_clip_max {
            self.cfg.grad_clip_max / norm
        } else {
            1.0
        };
        self.updater.begin_step();
        for (i, mut g) in updates {
            if clip != 1.0 {
                g.mapv_inplace(|v| v * clip);
            }
            let p = &mut params[i];
            let lr = if i < n_backbone {
                self.cfg.backbone_lr.unwrap_or(self.cfg.learning_rate)
            } else if p.name.starts_with("head.noise") {
                self.cfg.noise_lr.unwrap_or(self.cfg.learning_rate)
            } else {
                self.cfg.learning_rate
            };
            self.updater.update(i, lr, &mut p.value, &g);
        }
    }
}

/// Per-parameter optimizer state; indices follow the model's parameter list.
pub(crate) struct ParamUpdater {
    kind: Optimizer,
    weight_decay: f64,
    velocity: Vec<Option<Arr>>,
    first: Vec<Option<Arr>>,
    second: Vec<Option<Arr>>,
    t: u64,
}

impl ParamUpdater {
    pub(crate) fn new(kind: Optimizer, weight_decay: f64, n_params: usize) -> Self {
        ParamUpdater {
            kind,
            weight_decay,
            velocity: vec![None; n_params],
            first: vec![None; n_params],
            second: vec![None; n_params],
            t: 0,
        }
    }

    pub(crate) fn begin_step(&mut self) {
        if let Optimizer::AdamW { .. } = self.kind {
            self.t += 1;
        }
    }

    pub(crate) fn update(&mut self, idx: usize, lr: f64, value: &mut Arr, grad: &Arr) {
        match self.kind {
            Optimizer::Sgdm { momentum } => {
                // Classic momentum SGD with L2 regularization in the gradient.
                let mut g = grad.clone();
                if self.weight_decay != 0.0 {
                    g.zip_mut_with(value, |gv, pv| *gv += self.weight_decay * pv);
                }
                let v = self.velocity[idx].get_or_insert_with(|| Arr::zeros(grad.raw_dim()));
                v.zip_mut_with(&g, |vv, gv| *vv = momentum * *vv + gv);
                value.zip_mut_with(v, |pv, vv| *pv -= lr * vv);
            }
            Optimizer::AdamW { beta1, beta2, eps } => {
                let m = self.first[idx].get_or_insert_with(|| Arr::zeros(grad.raw_dim()));
                let v = self.second[idx].get_or_insert_with(|| Arr::zeros(grad.raw_dim()));
                m.zip_mut_with(grad, |mv, gv| *mv = beta1 * *mv + (1.0 - beta1) * gv);
                v.zip_mut_with(grad, |vv, gv| *vv = beta2 * *vv + (1.0 - beta2) * gv * gv);
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                let decay = lr * self.weight_decay;
                ndarray::Zip::from(&mut *value)
                    .and(&*m)
                    .and(&*v)
                    .for_each(|pv, &mv, &vv| {
                        let step = lr * (mv / bc1) / ((vv / bc2).sqrt() + eps);
                        *pv -= step + decay * *pv;
                    });
            }
        }
    }
}

/// Joint training of point feature weights and the head.
pub fn train_full(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    run_with_mode(model, data, cfg, TrainMode::Full)
}

/// Head-only training on frozen features.
pub fn train_post(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    run_with_mode(model, data, cfg, TrainMode::Post)
}

/// Joint training with variational feature weights (one sample per step).
pub fn train_collapsed(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    run_with_mode(model, data, cfg, TrainMode::Collapsed)
}

fn run_with_mode(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<Vec<EpochRecord>> {
    let cfg = TrainConfig { mode, ..cfg.clone() };
    Trainer::new(cfg, model)?.run_epochs(model, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::MlpConfig;
    use crate::heads::hyper::RawHyper;
    use crate::heads::regression::{RegressionConfig, RegressionHead};
    use crate::psdparam::FactorLayout;
    use ndarray::{array, Array1};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn raw_hyper() -> RawHyper {
        RawHyper { prior_scale: 1.0, kl_weight: 1.0, noise_dof: 1.0, noise_scale: 1.0 }
    }

    fn line_dataset(t: usize, seed: u64) -> Dataset {
        // y = 2x + eps, eps ~ N(0, 0.1^2), x ~ N(0, 1).
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::<f64>::zeros((t, 1));
        let mut y = Array2::<f64>::zeros((t, 1));
        for i in 0..t {
            let xi: f64 = rng.sample(StandardNormal);
            let noise: f64 = rng.sample(StandardNormal);
            x[[i, 0]] = xi;
            y[[i, 0]] = 2.0 * xi + 0.1 * noise;
        }
        Dataset::new(x, Targets::Real(y)).unwrap()
    }

    fn identity_regression_model(t: usize) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let backbone = Mlp::map(MlpConfig { layer_widths: vec![1], ..Default::default() }, &mut rng)
            .unwrap();
        let head = RegressionHead::new(RegressionConfig {
            n_features: 1,
            n_outputs: 1,
            posterior_layout: FactorLayout::Dense,
            noise_layout: FactorLayout::Diagonal,
            hyper: raw_hyper(),
            train_size: t,
        })
        .unwrap();
        Model::new(backbone, Head::Regression(head)).unwrap()
    }

    fn mlp_regression_model(t: usize, seed: u64, variational: bool) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = MlpConfig {
            layer_widths: vec![1, 4, 3],
            weight_decay: 0.0,
            feature_kl_weight: 0.0,
            ..Default::default()
        };
        let backbone = if variational {
            Mlp::variational(cfg, &mut rng).unwrap()
        } else {
            Mlp::map(cfg, &mut rng).unwrap()
        };
        let head = RegressionHead::new(RegressionConfig {
            n_features: 3,
            n_outputs: 1,
            posterior_layout: FactorLayout::Dense,
            noise_layout: FactorLayout::Diagonal,
            hyper: raw_hyper(),
            train_size: t,
        })
        .unwrap();
        Model::new(backbone, Head::Regression(head)).unwrap()
    }

    fn snapshot(model: &Model) -> Vec<Arr> {
        model.params().iter().map(|p| p.value.clone()).collect()
    }

    #[test]
    fn zero_epochs_leave_parameters_bitwise_unchanged() {
        let data = line_dataset(16, 0);
        let mut model = mlp_regression_model(16, 3, false);
        let before = snapshot(&model);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let history = train_full(&mut model, &data, &cfg).unwrap();
        assert!(history.is_empty());
        for (a, b) in before.iter().zip(snapshot(&model)) {
            assert_eq!(a, &b);
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_loss_history_exactly() {
        let data = line_dataset(24, 1);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e-2,
            seed: 7,
            ..Default::default()
        };
        let run = || {
            let mut model = mlp_regression_model(24, 5, false);
            let hist = train_full(&mut model, &data, &cfg).unwrap();
            (hist.iter().map(|r| r.loss).collect::<Vec<_>>(), snapshot(&model))
        };
        let (l1, p1) = run();
        let (l2, p2) = run();
        assert_eq!(l1, l2);
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn backbone_lr_zero_matches_post_training_bitwise() {
        let data = line_dataset(20, 2);
        let base = TrainConfig {
            epochs: 4,
            batch_size: 5,
            learning_rate: 5e-2,
            seed: 11,
            ..Default::default()
        };

        let mut joint = mlp_regression_model(20, 9, false);
        let backbone_before = snapshot(&joint)[..joint.n_backbone_params()].to_vec();
        let cfg_full = TrainConfig { backbone_lr: Some(0.0), ..base.clone() };
        let hist_full = train_full(&mut joint, &data, &cfg_full).unwrap();

        let mut frozen = mlp_regression_model(20, 9, false);
        let hist_post = train_post(&mut frozen, &data, &base).unwrap();

        // Identical losses, identical head parameters, untouched features.
        let losses_full: Vec<f64> = hist_full.iter().map(|r| r.loss).collect();
        let losses_post: Vec<f64> = hist_post.iter().map(|r| r.loss).collect();
        assert_eq!(losses_full, losses_post);
        let nb = joint.n_backbone_params();
        for (a, b) in snapshot(&joint)[nb..].iter().zip(&snapshot(&frozen)[nb..]) {
            assert_eq!(a, b);
        }
        for (a, b) in snapshot(&joint)[..nb].iter().zip(&backbone_before) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn collapsed_with_tiny_frozen_std_matches_full_map_trajectory_bitwise() {
        let data = line_dataset(20, 3);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 5,
            learning_rate: 3e-2,
            seed: 13,
            ..Default::default()
        };

        let mut map_model = mlp_regression_model(20, 17, false);
        let hist_map = train_full(&mut map_model, &data, &cfg).unwrap();

        let mut var_model = mlp_regression_model(20, 17, true);
        for p in var_model.backbone.params_mut() {
            if p.name.contains("log_std") {
                p.value.fill(-800.0);
            }
        }
        let hist_var = train_collapsed(&mut var_model, &data, &cfg).unwrap();

        let map_losses: Vec<f64> = hist_map.iter().map(|r| r.loss).collect();
        let var_losses: Vec<f64> = hist_var.iter().map(|r| r.loss).collect();
        assert_eq!(map_losses, var_losses);

        // Weight means track the MAP weights exactly; head parameters agree.
        let map_params = snapshot(&map_model);
        let nb_map = map_model.n_backbone_params();
        let mean_values: Vec<Arr> = var_model
            .backbone
            .params()
            .iter()
            .filter(|p| p.name.contains("_mean"))
            .map(|p| p.value.clone())
            .collect();
        for (a, b) in map_params[..nb_map].iter().zip(&mean_values) {
            assert_eq!(a, b);
        }
        let nb_var = var_model.n_backbone_params();
        for (a, b) in map_params[nb_map..].iter().zip(&snapshot(&var_model)[nb_var..]) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn minibatch_objectives_average_to_the_full_data_objective() {
        let t = 12;
        let data = line_dataset(t, 4);
        let model = identity_regression_model(t);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = model
            .objective_value(&data.inputs, &data.targets, TrainMode::Full, &mut rng)
            .unwrap();
        let b = 4;
        let mut acc = 0.0;
        for batch in 0..t / b {
            let idx: Vec<usize> = (batch * b..(batch + 1) * b).collect();
            let (x, y) = data.batch(&idx);
            acc += model.objective_value(&x, &y, TrainMode::Full, &mut rng).unwrap();
        }
        let avg = acc / (t / b) as f64;
        assert!((avg - full).abs() < 1e-10, "batch average {avg} vs full {full}");
    }

    #[test]
    fn regularizer_contribution_scales_inversely_with_train_size() {
        let data = line_dataset(8, 5);
        let make = |train_size: usize| {
            let mut model = identity_regression_model(train_size);
            // Move the posterior off the prior so KL > 0.
            for p in model.params_mut() {
                if p.name == "head.w_mean" {
                    p.value.fill(0.7);
                }
            }
            model
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let small = make(10);
        let large = make(1000);
        let data_only = |m: &Model, rng: &mut ChaCha8Rng| {
            let mut tape = Tape::new();
            let built = m
                .build_objective(&mut tape, &data.inputs, &data.targets, TrainMode::Full, LeafMask::None, rng)
                .unwrap();
            (
                tape.scalar_value(built.objective),
                tape.scalar_value(built.terms.data_avg),
            )
        };
        let (obj_s, data_s) = data_only(&small, &mut rng);
        let (obj_l, data_l) = data_only(&large, &mut rng);
        assert!((data_s - data_l).abs() < 1e-15);
        let reg_s = obj_s - data_s;
        let reg_l = obj_l - data_l;
        assert!((reg_s * 10.0 - reg_l * 1000.0).abs() < 1e-9);
        assert!(reg_l.abs() < reg_s.abs());
    }

    #[test]
    fn line_fit_recovers_slope_and_conjugate_predictive_variance() {
        let t = 1000;
        let data = line_dataset(t, 6);
        let mut model = identity_regression_model(t);
        let cfg = TrainConfig {
            mode: TrainMode::Post,
            epochs: 60,
            batch_size: 125,
            optimizer: Optimizer::adamw(),
            learning_rate: 3e-2,
            grad_clip_max: 10.0,
            seed: 1,
            ..Default::default()
        };
        train_post(&mut model, &data, &cfg).unwrap();

        let Head::Regression(head) = &model.head else { unreachable!() };
        let w = head.weight_mean();
        assert!(
            (w[[0, 0]] - 2.0).abs() < 0.1,
            "recovered slope {} should be 2.0 ± 0.1",
            w[[0, 0]]
        );

        // Conjugate posterior with the learned noise level: the optimum of
        // the bound is exactly that posterior, so the trained covariance
        // should land close to it.
        let sigma2 = head.noise_covariance()[[0, 0]];
        let phi = data.inputs.clone();
        let y = match &data.targets {
            Targets::Real(m) => m.clone(),
            _ => unreachable!(),
        };
        let exact = vbll_oracles::exact_blr_posterior(
            &phi.view(),
            &y.view(),
            &Array2::zeros((1, 1)).view(),
            1.0,
            sigma2,
        );
        let x_star = array![[1.5]];
        let (mean, s_quad) = head.predict(x_star.row(0));
        let var = s_quad + sigma2;
        let exact_var = x_star[[0, 0]] * exact.s_cov[[0, 0]] * x_star[[0, 0]] + sigma2;
        assert!((mean[0] - 1.5 * exact.w_mean[[0, 0]]).abs() < 0.05);
        assert!(
            (var - exact_var).abs() / exact_var < 0.2,
            "predictive variance {var} vs conjugate {exact_var}"
        );
    }

    #[test]
    fn warm_started_post_training_starts_at_a_higher_objective() {
        let t = 40;
        let data = line_dataset(t, 7);
        let cfg = TrainConfig {
            mode: TrainMode::Post,
            epochs: 1,
            batch_size: 10,
            learning_rate: 1e-3,
            seed: 3,
            ..Default::default()
        };
        let first_epoch_objective = |warm: bool| {
            let mut model = identity_regression_model(t);
            if warm {
                init_head_mean_from(&mut model.head, &array![[2.0]]).unwrap();
            }
            let hist = train_post(&mut model, &data, &cfg).unwrap();
            -hist[0].loss
        };
        assert!(first_epoch_objective(true) > first_epoch_objective(false));
    }

    #[test]
    fn collapsed_keeps_both_kl_terms_nonnegative() {
        let data = line_dataset(20, 8);
        let mut model = mlp_regression_model(20, 21, true);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 5,
            learning_rate: 1e-2,
            seed: 19,
            ..Default::default()
        };
        let hist = train_collapsed(&mut model, &data, &cfg).unwrap();
        for rec in hist {
            assert!(rec.kl >= 0.0, "head KL {}", rec.kl);
            assert!(rec.weight_kl >= 0.0, "weight KL {}", rec.weight_kl);
        }
    }

    #[test]
    fn optimizer_updates_match_their_definitions() {
        // Momentum 0 → plain gradient step.
        let mut up = ParamUpdater::new(Optimizer::sgdm(0.0), 0.0, 1);
        let mut p = array![1.0, -2.0].into_dyn();
        let g = array![0.5, 0.25].into_dyn();
        up.begin_step();
        up.update(0, 0.1, &mut p, &g);
        assert_eq!(p, array![0.95, -2.025].into_dyn());

        // AdamW with zero gradient and nonzero decay shrinks by lr·decay·p.
        let mut up = ParamUpdater::new(Optimizer::adamw(), 0.1, 1);
        let mut p = array![2.0].into_dyn();
        let g = array![0.0].into_dyn();
        up.begin_step();
        up.update(0, 0.5, &mut p, &g);
        assert!((p[[0]] - 2.0 * (1.0 - 0.5 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn gradient_clipping_rescales_to_the_maximum_norm() {
        // A single-parameter model with an enormous loss surface: the first
        // update must move by exactly lr * clip_max in gradient direction.
        let t = 4;
        let mut model = identity_regression_model(t);
        // Huge targets make the raw gradient norm far exceed the clip.
        let x = array![[1.0], [1.0], [1.0], [1.0]];
        let y = array![[1e6], [1e6], [1e6], [1e6]];
        let data = Dataset::new(x, Targets::Real(y)).unwrap();
        let cfg = TrainConfig {
            mode: TrainMode::Post,
            epochs: 1,
            batch_size: 4,
            optimizer: Optimizer::sgdm(0.0),
            learning_rate: 1.0,
            grad_clip_max: 1.0,
            seed: 0,
            ..Default::default()
        };
        let before = snapshot(&model);
        train_post(&mut model, &data, &cfg).unwrap();
        let after = snapshot(&model);
        let mut sq = 0.0;
        for (a, b) in before.iter().zip(&after) {
            sq += a
                .iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        // One step at lr 1 with clipped gradient norm 1 moves distance 1.
        assert!((sq.sqrt() - 1.0).abs() < 1e-12, "step length {}", sq.sqrt());
    }

    #[test]
    fn non_finite_loss_reports_the_diverging_term() {
        let t = 4;
        let mut model = identity_regression_model(t);
        for p in model.params_mut() {
            if p.name == "head.noise_log_diag" {
                p.value.fill(800.0); // precision exp(1600) overflows
            }
        }
        let data = line_dataset(t, 9);
        let cfg = TrainConfig {
            mode: TrainMode::Post,
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        let err = train_post(&mut model, &data, &cfg).unwrap_err();
        match err {
            Error::NonFinite { term, .. } => {
                assert!(!term.is_empty());
            }
            other => panic!("expected a non-finite diagnostic, got {other}"),
        }
    }

    #[test]
    fn mode_and_backbone_kind_must_agree() {
        let var_model = mlp_regression_model(8, 1, true);
        let cfg = TrainConfig { mode: TrainMode::Full, ..Default::default() };
        assert!(Trainer::new(cfg, &var_model).is_err());

        let map_model = mlp_regression_model(8, 1, false);
        let cfg = TrainConfig { mode: TrainMode::Collapsed, ..Default::default() };
        assert!(Trainer::new(cfg, &map_model).is_err());
    }

    #[test]
    fn run_steps_trains_and_is_deterministic() {
        let data = line_dataset(30, 10);
        let cfg = TrainConfig {
            mode: TrainMode::Post,
            batch_size: 8,
            learning_rate: 1e-2,
            seed: 23,
            ..Default::default()
        };
        let run = || {
            let mut model = identity_regression_model(30);
            let mut trainer = Trainer::new(cfg.clone(), &model).unwrap();
            let loss = trainer.run_steps(&mut model, &data, 25).unwrap();
            (loss, snapshot(&model))
        };
        let (l1, p1) = run();
        let (l2, p2) = run();
        assert_eq!(l1, l2);
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a, b);
        }
        assert_eq!(
            Trainer::new(cfg.clone(), &identity_regression_model(30)).unwrap().steps_taken(),
            0
        );
    }

    #[test]
    fn collapsed_objective_stays_below_the_hierarchical_log_marginal() {
        // Tiny instance: marginalize both the feature weights and the last
        // layer by brute force and check the bound direction.
        let t = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = Array2::from_shape_simple_fn((t, 1), || rng.sample::<f64, _>(StandardNormal));
        let y_vec: Vec<f64> = x.column(0).iter().map(|v| 1.5 * v).collect();
        let y = Array2::from_shape_vec((t, 1), y_vec).unwrap();
        let data = Dataset::new(x.clone(), Targets::Real(y.clone())).unwrap();

        let mut rng_init = ChaCha8Rng::seed_from_u64(33);
        let backbone = Mlp::variational(
            MlpConfig {
                layer_widths: vec![1, 2],
                weight_prior_std: Some(1.0),
                feature_kl_weight: 1.0,
                ..Default::default()
            },
            &mut rng_init,
        )
        .unwrap();
        let head = RegressionHead::new(RegressionConfig {
            n_features: 2,
            n_outputs: 1,
            posterior_layout: FactorLayout::Dense,
            noise_layout: FactorLayout::Diagonal,
            hyper: raw_hyper(),
            train_size: t,
        })
        .unwrap();
        let mut model = Model::new(backbone, Head::Regression(head)).unwrap();
        let cfg = TrainConfig {
            mode: TrainMode::Collapsed,
            epochs: 10,
            batch_size: t,
            learning_rate: 1e-2,
            seed: 37,
            ..Default::default()
        };
        train_collapsed(&mut model, &data, &cfg).unwrap();

        // Bound value at fixed noise: T * E_q[data_avg] - KL_head - KL_feat,
        // with the expectation over weight draws estimated by averaging.
        let t_f = t as f64;
        let n_draws = 4000;
        let mut rng_eval = ChaCha8Rng::seed_from_u64(41);
        let mut data_terms = Vec::with_capacity(n_draws);
        let mut kl_head = 0.0;
        let mut kl_feat = 0.0;
        for _ in 0..n_draws {
            let mut tape = Tape::new();
            let built = model
                .build_objective(
                    &mut tape,
                    &data.inputs,
                    &data.targets,
                    TrainMode::Collapsed,
                    LeafMask::None,
                    &mut rng_eval,
                )
                .unwrap();
            data_terms.push(tape.scalar_value(built.terms.data_avg) * t_f);
            kl_head = tape.scalar_value(built.terms.kl);
            kl_feat = tape.scalar_value(built.weight_kl.unwrap());
        }
        let mean_data = data_terms.iter().sum::<f64>() / n_draws as f64;
        let var_data = data_terms.iter().map(|d| (d - mean_data).powi(2)).sum::<f64>()
            / (n_draws as f64 - 1.0);
        let se_data = (var_data / n_draws as f64).sqrt();
        let bound = mean_data - kl_head - kl_feat;

        // Monte-Carlo hierarchical marginal at the trained noise level.
        let Head::Regression(head) = &model.head else { unreachable!() };
        let sigma2 = head.noise_covariance()[[0, 0]];
        let n_mc = 200_000;
        let mut rng_mc = ChaCha8Rng::seed_from_u64(43);
        let mut log_terms = Vec::with_capacity(n_mc);
        for _ in 0..n_mc {
            // theta draw: layer 1 of widths [1, 2] plus bias, prior std 1.
            let w0 = Array2::from_shape_simple_fn((2, 1), || {
                rng_mc.sample::<f64, _>(StandardNormal)
            });
            let b0 = Array1::from_shape_simple_fn(2, || rng_mc.sample::<f64, _>(StandardNormal));
            // last-layer draw: prior N(0, prior_scale = 1).
            let w = Array1::from_shape_simple_fn(2, || rng_mc.sample::<f64, _>(StandardNormal));
            let mut ll = 0.0;
            for i in 0..t {
                let pre = &w0.column(0) * x[[i, 0]] + &b0;
                let feat = pre.mapv(|v| if v >= 0.0 { v } else { 0.01 * v });
                let mean = feat.dot(&w);
                let r = y[[i, 0]] - mean;
                ll += -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln()
                    - 0.5 * r * r / sigma2;
            }
            log_terms.push(ll);
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = log_terms.iter().map(|l| (l - max).exp()).sum();
        let log_marginal = max + (sum_exp / n_mc as f64).ln();
        // Jackknife-free rough standard error on the log-mean-exp scale.
        let weights: Vec<f64> = log_terms.iter().map(|l| (l - max).exp()).collect();
        let mean_w = sum_exp / n_mc as f64;
        let var_w =
            weights.iter().map(|w| (w - mean_w).powi(2)).sum::<f64>() / (n_mc as f64 - 1.0);
        let se_log = (var_w / n_mc as f64).sqrt() / mean_w;

        assert!(
            bound <= log_marginal + 3.0 * (se_data + se_log),
            "bound {bound} should not exceed log-marginal {log_marginal} (± {})",
            3.0 * (se_data + se_log)
        );
    }
}
