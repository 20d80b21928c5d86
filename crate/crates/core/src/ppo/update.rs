use ndarray::{Array2, Axis};

use super::{action_regularizer, log_softmax_rows, regularizer_gradient, ForgingConfig, PpoConfig, RolloutBuffer};
use crate::error::{Error, Result};
use crate::nn::{Adam, DenseNet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorStats {
    /// Optimizer steps taken.
    pub iterations: usize,
    /// Sample KL(old‖new) at the final parameters.
    pub kl: f64,
    pub stopped_early: bool,
    /// Surrogate loss before the first step.
    pub surrogate: f64,
    /// Regularizer value after the update.
    pub regularizer: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStats {
    pub loss_before: f64,
    pub loss_after: f64,
    pub lr: f64,
}

/// Log-probabilities of every action under `actor` for the buffer's
/// observations, with the buffer's forging offsets applied.
fn log_probs(actor: &DenseNet, buffer: &RolloutBuffer, logits: &Array2<f64>) -> Result<Array2<f64>> {
    if buffer.logit_offsets.len() != actor.output_dim() {
        return Err(Error::Dimension {
            expected: actor.output_dim(),
            got: buffer.logit_offsets.len(),
        });
    }
    let offsets = ndarray::ArrayView1::from(&buffer.logit_offsets[..]);
    Ok(log_softmax_rows(&(logits + &offsets)))
}

/// Sample estimate `mean(log π_old(a) - log π_new(a))` over the buffer.
pub fn approx_kl(actor: &DenseNet, buffer: &RolloutBuffer) -> Result<f64> {
    let logits = actor.forward_batch(buffer.observations.view())?;
    let lp = log_probs(actor, buffer, &logits)?;
    let n = buffer.len() as f64;
    Ok(buffer
        .actions
        .iter()
        .enumerate()
        .map(|(i, &a)| buffer.log_probs[i] - lp[[i, a]])
        .sum::<f64>()
        / n)
}

/// Clipped-surrogate policy update with KL early stopping and the action
/// regularizer. `step` is the actor's global optimizer step counter.
pub fn actor_update(
    actor: &mut DenseNet,
    opt: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    forging: &ForgingConfig,
    step: &mut u64,
) -> Result<ActorStats> {
    let n = buffer.len();
    if n == 0 {
        return Err(Error::domain("empty rollout buffer"));
    }
    let nf = n as f64;
    let eps = cfg.clip_ratio;
    let lr = cfg.actor_lr.lr_at(*step);
    let mut iterations = 0;
    let mut kl = 0.0;
    let mut stopped_early = false;
    let mut surrogate = f64::NAN;
    for it in 0..=cfg.actor_iters {
        let cache = actor.forward_cached(buffer.observations.view())?;
        let lp = log_probs(actor, buffer, cache.output())?;
        let mut upstream = Array2::<f64>::zeros(lp.raw_dim());
        let mut loss = 0.0;
        kl = 0.0;
        for i in 0..n {
            let a = buffer.actions[i];
            let adv = buffer.advantages[i];
            let new = lp[[i, a]];
            kl += buffer.log_probs[i] - new;
            let ratio = (new - buffer.log_probs[i]).exp();
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
            loss -= (ratio * adv).min(clipped * adv) / nf;
            // d(-min(...))/d log π(a): nonzero only where the unclipped
            // branch is the active one.
            let active = (adv > 0.0 && ratio < 1.0 + eps) || (adv < 0.0 && ratio > 1.0 - eps);
            let g = if active { -adv * ratio / nf } else { 0.0 };
            let probs = lp.row(i).mapv(f64::exp);
            let mut row = upstream.row_mut(i);
            if g != 0.0 {
                row.scaled_add(-g, &probs);
                row[a] += g;
            }
            if cfg.entropy_coef > 0.0 {
                // loss -= c·H/n; dH/dz_j = -π_j (log π_j + H).
                let h: f64 = -probs.iter().zip(lp.row(i)).map(|(p, l)| p * l).sum::<f64>();
                loss -= cfg.entropy_coef * h / nf;
                for j in 0..probs.len() {
                    row[j] += cfg.entropy_coef * probs[j] * (lp[[i, j]] + h) / nf;
                }
            }
        }
        kl /= nf;
        if !loss.is_finite() || !kl.is_finite() {
            return Err(Error::NonFinite("actor loss".into()));
        }
        if it == 0 {
            surrogate = loss;
        }
        if it == cfg.actor_iters {
            break;
        }
        if kl > cfg.target_kl {
            stopped_early = true;
            break;
        }
        let mut grads = actor.backward(&cache, upstream.view())?;
        if forging.regularizer_coef > 0.0 {
            let (gw, gb) = regularizer_gradient(actor.output_layer());
            let last = grads.weights.len() - 1;
            grads.weights[last].scaled_add(forging.regularizer_coef, &gw);
            grads.biases[last].scaled_add(forging.regularizer_coef, &gb);
        }
        opt.step(actor, &grads, cfg.actor_lr.lr_at(*step))?;
        *step += 1;
        iterations += 1;
    }
    Ok(ActorStats {
        iterations,
        kl,
        stopped_early,
        surrogate,
        regularizer: action_regularizer(actor.output_layer()),
        lr,
    })
}

/// Mean-squared-error regression of the critic onto the buffer's returns.
pub fn critic_update(
    critic: &mut DenseNet,
    opt: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    step: &mut u64,
) -> Result<CriticStats> {
    let n = buffer.len();
    if n == 0 {
        return Err(Error::domain("empty rollout buffer"));
    }
    let nf = n as f64;
    let targets = ndarray::ArrayView1::from(&buffer.returns[..]).insert_axis(Axis(1));
    let lr = cfg.critic_lr.lr_at(*step);
    let mut loss_before = f64::NAN;
    for it in 0..cfg.critic_iters {
        let cache = critic.forward_cached(buffer.observations.view())?;
        let diff = cache.output() - &targets;
        let loss = diff.mapv(|d| d * d).sum() / nf;
        if !loss.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        if it == 0 {
            loss_before = loss;
        }
        let upstream = diff * (2.0 / nf);
        let grads = critic.backward(&cache, upstream.view())?;
        opt.step(critic, &grads, cfg.critic_lr.lr_at(*step))?;
        *step += 1;
    }
    let out = critic.forward_batch(buffer.observations.view())?;
    let loss_after = (&out - &targets).mapv(|d| d * d).sum() / nf;
    if loss_before.is_nan() {
        loss_before = loss_after;
    }
    Ok(CriticStats {
        loss_before,
        loss_after,
        lr,
    })
}
