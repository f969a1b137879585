//! Wheel bandit environment and a Thompson-sampling agent built from a
//! regression head over learned features.
//!
//! Contexts are uniform on the unit disk. There are five actions: action 1
//! pays an intermediate reward everywhere, and each of the other four pays a
//! high reward only when the context lies in its own quadrant of the outer
//! annulus `delta < ‖x‖ ≤ 1`, and a low reward otherwise. The inner disk
//! therefore has no high-reward action, and shrinking `delta` grows the
//! high-reward regions. This is the benchmark of Riquelme et al. (2018),
//! "Deep Bayesian Bandits Showdown"; their reward parameters (low 1.0,
//! intermediate 1.2, high 50.0, noise std 0.01) are the defaults here.
//!
//! The agent interleaves environment phases with replay refits: every
//! `update_period` steps it retrains feature map and head jointly on the
//! full accumulated buffer, then keeps choosing actions by sampling one
//! weight matrix from the head posterior and playing its argmax — Thompson
//! sampling with exact posterior draws, no ensembling or dropout.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backbone::{Mlp, MlpConfig};
use crate::error::{Error, Result};
use crate::heads::{Head, RawHyper, RegressionConfig, RegressionHead, Targets};
use crate::psdparam::FactorLayout;
use crate::train::{
    stream_rng, streams, Dataset, Model, Optimizer, TrainConfig, TrainMode, Trainer,
};

/// Number of arms.
pub const N_ACTIONS: usize = 5;
/// Contexts are points in the plane.
pub const CONTEXT_DIM: usize = 2;
/// Inner disk plus the four annulus quadrants.
pub const N_REGIONS: usize = 5;

/// Arm owning each quadrant, by quadrant index (++, -+, --, +-). Action 1 is
/// the constant intermediate arm and owns no quadrant.
const QUADRANT_ACTIONS: [usize; 4] = [0, 2, 3, 4];

/// Reward layout of the wheel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WheelConfig {
    /// Radius of the inner low-reward disk, in (0, 1].
    pub delta: f64,
    /// Mean reward of a wrong arm.
    pub low_mean: f64,
    /// Mean reward of action 1, paid everywhere.
    pub intermediate_mean: f64,
    /// Mean reward of the owning arm in an outer quadrant.
    pub high_mean: f64,
    /// Reward noise standard deviation.
    pub reward_std: f64,
}

impl Default for WheelConfig {
    fn default() -> Self {
        WheelConfig {
            delta: 0.5,
            low_mean: 1.0,
            intermediate_mean: 1.2,
            high_mean: 50.0,
            reward_std: 0.01,
        }
    }
}

impl WheelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid(
                "WheelConfig",
                format!("delta must lie in (0, 1], got {}", self.delta),
            ));
        }
        if !(self.reward_std >= 0.0) {
            return Err(Error::invalid(
                "WheelConfig",
                format!("reward_std must be nonnegative, got {}", self.reward_std),
            ));
        }
        for (name, v) in [
            ("low_mean", self.low_mean),
            ("intermediate_mean", self.intermediate_mean),
            ("high_mean", self.high_mean),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(
                    "WheelConfig",
                    format!("{name} must be finite, got {v}"),
                ));
            }
        }
        Ok(())
    }

    /// Mean reward of every action at `context`.
    pub fn action_means(&self, context: ArrayView1<'_, f64>) -> [f64; N_ACTIONS] {
        let mut means = [self.low_mean; N_ACTIONS];
        means[1] = self.intermediate_mean;
        if norm(context) > self.delta {
            means[QUADRANT_ACTIONS[quadrant(context)]] = self.high_mean;
        }
        means
    }

    /// Action with the highest mean reward at `context`; lowest index wins
    /// ties.
    pub fn oracle_action(&self, context: ArrayView1<'_, f64>) -> usize {
        argmax_lowest(self.action_means(context))
    }

    /// Region of `context`: 0 for the inner disk, `1 + quadrant` outside it.
    pub fn region_index(&self, context: ArrayView1<'_, f64>) -> usize {
        if norm(context) <= self.delta {
            0
        } else {
            1 + quadrant(context)
        }
    }

    /// Expected per-step regret of an agent that picks actions uniformly at
    /// random, in closed form: the inner disk has probability `delta^2`
    /// under the uniform-disk context distribution, and within each region
    /// the gap is `max(means) - mean(means)`.
    pub fn random_regret_per_step(&self) -> f64 {
        let mut inner = [self.low_mean; N_ACTIONS];
        inner[1] = self.intermediate_mean;
        let mut outer = inner;
        outer[QUADRANT_ACTIONS[0]] = self.high_mean;
        let p_inner = self.delta * self.delta;
        p_inner * oracle_minus_average(inner) + (1.0 - p_inner) * oracle_minus_average(outer)
    }
}

fn oracle_minus_average(means: [f64; N_ACTIONS]) -> f64 {
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let avg: f64 = means.iter().sum::<f64>() / N_ACTIONS as f64;
    best - avg
}

fn norm(x: ArrayView1<'_, f64>) -> f64 {
    x.dot(&x).sqrt()
}

/// Quadrant of `x` by coordinate signs, counterclockwise from (+, +). Axis
/// points go to the adjacent quadrant whose closure contains them, so the
/// four sets partition the plane.
fn quadrant(x: ArrayView1<'_, f64>) -> usize {
    match (x[0] >= 0.0, x[1] >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => 3,
    }
}

fn argmax_lowest(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// The wheel environment: holds the current context and the reward stream.
pub struct WheelEnv {
    cfg: WheelConfig,
    rng: ChaCha8Rng,
    context: Array1<f64>,
}

impl WheelEnv {
    pub fn new(cfg: WheelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, streams::ENV);
        let context = sample_disk(&mut rng);
        Ok(WheelEnv { cfg, rng, context })
    }

    pub fn config(&self) -> &WheelConfig {
        &self.cfg
    }

    /// Context the next action will be evaluated against.
    pub fn context(&self) -> ArrayView1<'_, f64> {
        self.context.view()
    }

    /// Play `action` on the current context: returns its noisy reward and
    /// advances to a fresh uniform-disk context, which is also returned.
    pub fn step(&mut self, action: usize) -> Result<(f64, Array1<f64>)> {
        if action >= N_ACTIONS {
            return Err(Error::invalid(
                "WheelEnv::step",
                format!("action {action} out of range for {N_ACTIONS} arms"),
            ));
        }
        let mean = self.cfg.action_means(self.context.view())[action];
        let z: f64 = self.rng.sample(StandardNormal);
        let reward = mean + self.cfg.reward_std * z;
        self.context = sample_disk(&mut self.rng);
        Ok((reward, self.context.clone()))
    }
}

/// Uniform point on the unit disk: radius `sqrt(U)`, angle `2 pi U'`.
fn sample_disk<R: Rng + ?Sized>(rng: &mut R) -> Array1<f64> {
    let r = rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    ndarray::array![r * theta.cos(), r * theta.sin()]
}

/// One posterior-sampled action: draw a weight matrix from the head
/// posterior, score the (deterministic) features of `context` under it, and
/// play the argmax row; lowest index wins exact ties.
pub fn thompson_action<R: Rng + ?Sized>(
    head: &RegressionHead,
    backbone: &Mlp,
    context: ArrayView1<'_, f64>,
    rng: &mut R,
) -> Result<usize> {
    let x = context.to_owned().insert_axis(Axis(0));
    let phi = backbone.mean_features(&x)?;
    let weights = head.sample_weight_rows(rng);
    let scores = weights.dot(&phi.row(0));
    Ok(argmax_lowest(scores.iter().copied()))
}

/// Everything that defines the learning agent. Defaults follow the wheel
/// benchmark: a (2, 100, 100) feature map, a five-output regression head
/// with every prior knob at 1, batch size 512, learning rate 3e-3, and
/// gradient clipping at norm 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Feature map over contexts; the first width must be 2. Trained as a
    /// point estimate.
    pub mlp: MlpConfig,
    /// Head prior/regularization knobs.
    pub hyper: RawHyper,
    /// Layout of the head's posterior covariance factor.
    pub posterior_layout: FactorLayout,
    /// Optimization settings for replay refits. `mode` and `epochs` are
    /// ignored: refits always run a fixed number of joint gradient steps.
    pub train: TrainConfig,
    /// Seeds feature-map initialization, posterior draws, and the refit
    /// batch stream (each on its own substream).
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            mlp: MlpConfig {
                layer_widths: vec![CONTEXT_DIM, 100, 100],
                ..MlpConfig::default()
            },
            hyper: RawHyper::default(),
            posterior_layout: FactorLayout::Dense,
            train: TrainConfig {
                mode: TrainMode::Full,
                batch_size: 512,
                optimizer: Optimizer::adamw(),
                learning_rate: 3e-3,
                weight_decay: 0.0,
                grad_clip_max: 1.0,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }
}

/// One environment interaction.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub context: [f64; 2],
    pub action: usize,
    pub reward: f64,
    /// Mean reward of the best action at this context.
    pub oracle_mean: f64,
    /// Mean reward of the action actually taken.
    pub chosen_mean: f64,
    /// `oracle_mean - chosen_mean`; never negative.
    pub regret: f64,
    pub cumulative_regret: f64,
}

/// End-of-run aggregates. Regret is measured on means, not realized noise,
/// and normalized to the closed-form expected regret of a uniform-random
/// agent, in percent.
#[derive(Debug, Clone, Serialize)]
pub struct BanditSummary {
    pub total_steps: usize,
    pub delta: f64,
    pub cumulative_regret: f64,
    pub cumulative_regret_normalized: f64,
    /// Mean per-step regret over the final 500 steps, same normalization.
    pub simple_regret: f64,
    pub random_regret_per_step: f64,
    /// Rows are regions (inner disk, then annulus quadrants counterclockwise
    /// from (+, +)); columns are actions.
    pub action_histogram: [[usize; N_ACTIONS]; N_REGIONS],
}

/// Full trace of a bandit run.
#[derive(Debug, Clone, Serialize)]
pub struct BanditLog {
    pub steps: Vec<StepRecord>,
    pub summary: BanditSummary,
}

impl BanditLog {
    /// Step records as JSON lines, one object per step.
    pub fn steps_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step records serialize"));
            out.push('\n');
        }
        out
    }

    /// Summary as a pretty-printed JSON object.
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// The number of trailing timesteps the simple regret averages over.
const SIMPLE_REGRET_WINDOW: usize = 500;

/// Run Thompson sampling on the wheel for `total_steps` interactions,
/// refitting on the full replay buffer every `update_period` steps with
/// `grad_steps_per_update` gradient steps (warm optimizer state throughout).
/// Returns the trace and the trained agent model.
pub fn run_bandit(
    env: &mut WheelEnv,
    cfg: &AgentConfig,
    total_steps: usize,
    update_period: usize,
    grad_steps_per_update: usize,
) -> Result<(BanditLog, Model)> {
    if update_period == 0 {
        return Err(Error::invalid("run_bandit", "update_period must be positive"));
    }
    if total_steps < update_period {
        return Err(Error::invalid(
            "run_bandit",
            format!("total_steps {total_steps} is below update_period {update_period}"),
        ));
    }
    if cfg.mlp.layer_widths.first() != Some(&CONTEXT_DIM) {
        return Err(Error::shape(
            "run_bandit",
            format!(
                "feature map must take {CONTEXT_DIM} inputs, widths are {:?}",
                cfg.mlp.layer_widths
            ),
        ));
    }
    let random_regret = {
        let wheel = env.config();
        wheel.random_regret_per_step()
    };
    if !(random_regret > 0.0) {
        return Err(Error::invalid(
            "run_bandit",
            "reward means admit no regret gap; normalization is undefined",
        ));
    }

    let mut agent_rng = stream_rng(cfg.seed, streams::AGENT);
    let backbone = Mlp::map(cfg.mlp.clone(), &mut agent_rng)?;
    let head = RegressionHead::new(RegressionConfig {
        n_features: backbone.n_features(),
        n_outputs: N_ACTIONS,
        posterior_layout: cfg.posterior_layout,
        // Rewards arrive one action at a time, so the per-arm noise must
        // factorize.
        noise_layout: FactorLayout::Diagonal,
        hyper: cfg.hyper,
        train_size: 1,
    })?;
    let mut model = Model::new(backbone, Head::Regression(head))?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.mode = TrainMode::Full;
    train_cfg.seed = cfg.seed;
    let mut trainer = Trainer::new(train_cfg, &model)?;

    let mut contexts: Vec<f64> = Vec::with_capacity(total_steps * CONTEXT_DIM);
    let mut actions: Vec<usize> = Vec::with_capacity(total_steps);
    let mut rewards: Vec<f64> = Vec::with_capacity(total_steps);
    let mut steps: Vec<StepRecord> = Vec::with_capacity(total_steps);
    let mut histogram = [[0usize; N_ACTIONS]; N_REGIONS];
    let mut cumulative = 0.0;

    for t in 0..total_steps {
        let context = env.context().to_owned();
        let action = {
            let Head::Regression(head) = &model.head else {
                unreachable!("the agent head is regression by construction")
            };
            thompson_action(head, &model.backbone, context.view(), &mut agent_rng)?
        };
        let means = env.config().action_means(context.view());
        let oracle_mean = means[argmax_lowest(means)];
        let regret = oracle_mean - means[action];
        let region = env.config().region_index(context.view());
        let (reward, _next) = env.step(action)?;

        cumulative += regret;
        histogram[region][action] += 1;
        steps.push(StepRecord {
            step: t,
            context: [context[0], context[1]],
            action,
            reward,
            oracle_mean,
            chosen_mean: means[action],
            regret,
            cumulative_regret: cumulative,
        });
        contexts.extend_from_slice(&[context[0], context[1]]);
        actions.push(action);
        rewards.push(reward);

        if (t + 1) % update_period == 0 {
            let n = actions.len();
            let inputs = Array2::from_shape_vec((n, CONTEXT_DIM), contexts.clone())
                .expect("buffer length is rows * context dim");
            let data = Dataset::new(
                inputs,
                Targets::MaskedReal {
                    rewards: Array1::from_vec(rewards.clone()),
                    actions: actions.clone(),
                },
            )?;
            model.head.set_train_size(n)?;
            trainer.run_steps(&mut model, &data, grad_steps_per_update)?;
        }
    }

    let window = SIMPLE_REGRET_WINDOW.min(total_steps);
    let tail_mean = steps[total_steps - window..]
        .iter()
        .map(|s| s.regret)
        .sum::<f64>()
        / window as f64;
    let summary = BanditSummary {
        total_steps,
        delta: env.config().delta,
        cumulative_regret: cumulative,
        cumulative_regret_normalized: 100.0 * cumulative
            / (total_steps as f64 * random_regret),
        simple_regret: 100.0 * tail_mean / random_regret,
        random_regret_per_step: random_regret,
        action_histogram: histogram,
    };
    Ok((BanditLog { steps, summary }, model))
}
