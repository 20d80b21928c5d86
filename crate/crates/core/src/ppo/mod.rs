//! PPO actor-critic training with action forging.
//!
//! Forging acts on the actor's output layer in two ways. A group-lasso
//! penalty `L = Σ_j ‖(W_{·j}, b_j)‖₂` pushes whole action neurons to zero,
//! and a piecewise-linear wavelet over the action percentages, scaled by a
//! sigmoid schedule in the pass counter, is added to the logits to favour
//! the no-change action.

mod policy;
mod rollout;
mod train;
mod update;

pub use policy::{count_actions, ActionCounts, ActorPolicy};
pub use rollout::{collect_rollouts, Episode, RolloutBuffer};
pub use train::{
    load_trainer_state, policy_from_checkpoint, save_trainer_state, train, PassLog, StopReason, TrainOutcome, TrainSpec,
    TrainerState, PASS_LOG_HEADER,
};
pub use update::{actor_update, approx_kl, critic_update, ActorStats, CriticStats};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::env::ActionSpace;
use crate::error::{Error, Result};
use crate::nn::{Layer, LrSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub target_kl: f64,
    pub entropy_coef: f64,
    pub actor_iters: usize,
    pub critic_iters: usize,
    /// Patient episodes collected per pass.
    pub patients_per_pass: usize,
    pub warmup_patients: u64,
    /// Passes without PTTR improvement, after warmup, before stopping.
    pub patience: u32,
    pub max_passes: u32,
    pub actor_lr: LrSchedule,
    pub critic_lr: LrSchedule,
    pub hidden_layers: Vec<usize>,
    /// Half-width of the uniform init of the actor and critic output layers.
    pub output_init_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_ratio: 0.2,
            gamma: 0.5,
            gae_lambda: 0.97,
            target_kl: 0.02,
            entropy_coef: 0.0,
            actor_iters: 20,
            critic_iters: 80,
            patients_per_pass: 500,
            warmup_patients: 20_000,
            patience: 10,
            max_passes: 400,
            actor_lr: LrSchedule {
                initial: 1e-4,
                decay: 0.8,
                step_size: 1000,
                staircase: true,
            },
            critic_lr: LrSchedule {
                initial: 1e-5,
                decay: 0.8,
                step_size: 1000,
                staircase: true,
            },
            hidden_layers: vec![256, 256, 128, 64],
            output_init_scale: 0.01,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("discount must lie in (0, 1]"));
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return Err(Error::config("gae_lambda must lie in (0, 1]"));
        }
        if !(self.clip_ratio > 0.0) {
            return Err(Error::config("clip_ratio must be positive"));
        }
        if !(self.target_kl > 0.0) {
            return Err(Error::config("target_kl must be positive"));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(Error::config("entropy_coef must be >= 0"));
        }
        if self.patients_per_pass == 0 {
            return Err(Error::config("patients_per_pass must be positive"));
        }
        if self.max_passes == 0 {
            return Err(Error::config("max_passes must be positive"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if !(self.output_init_scale >= 0.0) {
            return Err(Error::config("output_init_scale must be >= 0"));
        }
        self.actor_lr.validate()?;
        self.critic_lr.validate()
    }
}

/// Piecewise-linear wavelet: `u` at zero change, `(-d/r)|x| + d` elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wavelet {
    pub u: f64,
    pub d: f64,
    pub r: f64,
}

impl Default for Wavelet {
    fn default() -> Self {
        Self {
            u: 0.2,
            d: -0.1,
            r: 1.0,
        }
    }
}

/// Sigmoid `1 / (1 + exp(-c1 (δ - c2)))` over the pass counter δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub c1: f64,
    pub c2: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { c1: 1e-3, c2: 50.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgingConfig {
    /// Weight of the group-lasso action regularizer; 0 disables it.
    pub regularizer_coef: f64,
    /// Adds the scheduled wavelet to the logits.
    pub action_focus: bool,
    pub wavelet: Wavelet,
    pub schedule: Schedule,
    /// Output neurons with norm below this count as eliminated.
    pub elimination_threshold: f64,
}

impl Default for ForgingConfig {
    fn default() -> Self {
        Self {
            regularizer_coef: 0.0,
            action_focus: false,
            wavelet: Wavelet::default(),
            schedule: Schedule::default(),
            elimination_threshold: 1e-3,
        }
    }
}

impl ForgingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.regularizer_coef >= 0.0 && self.regularizer_coef.is_finite()) {
            return Err(Error::config("regularizer_coef must be finite and >= 0"));
        }
        if !(self.wavelet.r > 0.0) {
            return Err(Error::config("wavelet r must be positive"));
        }
        if !(self.elimination_threshold >= 0.0) {
            return Err(Error::config("elimination_threshold must be >= 0"));
        }
        Ok(())
    }

    /// Per-action logit offsets at pass `delta`; zeros without action focus.
    pub fn logit_offsets(&self, space: &ActionSpace, delta: f64) -> Vec<f64> {
        if !self.action_focus {
            return vec![0.0; space.len()];
        }
        let h = schedule_h(delta, &self.schedule);
        space
            .percent_changes
            .iter()
            .map(|&x| h * wavelet_value(x, &self.wavelet))
            .collect()
    }
}

pub fn wavelet_value(x: f64, w: &Wavelet) -> f64 {
    if x == 0.0 {
        w.u
    } else {
        (-w.d / w.r) * x.abs() + w.d
    }
}

pub fn schedule_h(delta: f64, s: &Schedule) -> f64 {
    1.0 / (1.0 + (-s.c1 * (delta - s.c2)).exp())
}

/// Logits used for both sampling and argmax: raw actor output plus offsets.
pub fn policy_logits(
    actor: &crate::nn::DenseNet,
    features: &[f64],
    offsets: &[f64],
) -> Result<Vec<f64>> {
    let mut logits = actor.forward(features)?;
    if offsets.len() != logits.len() {
        return Err(Error::Dimension {
            expected: logits.len(),
            got: offsets.len(),
        });
    }
    for (l, o) in logits.iter_mut().zip(offsets) {
        *l += o;
    }
    Ok(logits)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|l| l - lse);
    }
    out
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Group-lasso penalty over the output neurons of `layer`.
pub fn action_regularizer(layer: &Layer) -> f64 {
    (0..layer.output_dim()).map(|j| layer.unit_norm(j)).sum()
}

/// Subgradient of [`action_regularizer`]; zero for neurons of zero norm.
pub fn regularizer_gradient(layer: &Layer) -> (Array2<f64>, Array1<f64>) {
    let mut gw = Array2::zeros(layer.weights.raw_dim());
    let mut gb = Array1::zeros(layer.bias.raw_dim());
    for j in 0..layer.output_dim() {
        let norm = layer.unit_norm(j);
        if norm > 0.0 {
            gw.column_mut(j).assign(&(&layer.weights.column(j) / norm));
            gb[j] = layer.bias[j] / norm;
        }
    }
    (gw, gb)
}

/// Output neurons whose norm reaches `threshold`.
pub fn available_actions(layer: &Layer, threshold: f64) -> usize {
    (0..layer.output_dim())
        .filter(|&j| layer.unit_norm(j) >= threshold)
        .count()
}

/// Generalized advantage estimates for one episode. `values[t]` estimates
/// the state before reward `t`; the value after the last reward is 0.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::Dimension {
            expected: rewards.len(),
            got: values.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}
