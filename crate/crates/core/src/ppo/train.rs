use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{
    actor_update, available_actions, collect_rollouts, critic_update, schedule_h, ActorPolicy,
    ForgingConfig, PpoConfig, RolloutBuffer,
};
use crate::cohort::{generate_cohort_with_ids, CohortConfig};
use crate::env::{EnvConfig, FEATURE_DIM, FEATURE_MAP};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint, Adam, Checkpoint, DenseNet, Gradients};
use crate::pkpd::InrSimulator;
use crate::rng;

/// Substream tag separating training rollouts from evaluation rollouts.
const TRAIN_STREAM: u64 = 1;

pub struct TrainSpec<'a> {
    pub env: &'a EnvConfig,
    pub ppo: &'a PpoConfig,
    pub forging: &'a ForgingConfig,
    /// Template for the per-pass training cohorts; size and seed are set
    /// from `ppo.patients_per_pass` and `seed`.
    pub cohort: &'a CohortConfig,
    pub seed: u64,
}

impl TrainSpec<'_> {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        self.forging.validate()?;
        self.pass_cohort().validate()
    }

    fn pass_cohort(&self) -> CohortConfig {
        CohortConfig {
            size: self.ppo.patients_per_pass,
            seed: self.seed,
            ..self.cohort.clone()
        }
    }
}

/// Everything needed to continue training where it stopped.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub actor: DenseNet,
    pub critic: DenseNet,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub actor_steps: u64,
    pub critic_steps: u64,
    pub passes: u32,
    pub patients: u64,
    pub best_pttr: f64,
    pub best_pass: Option<u32>,
    /// Actor and critic that produced the best pass's rollouts.
    pub best_actor: DenseNet,
    pub best_critic: DenseNet,
    pub since_improvement: u32,
}

impl TrainerState {
    pub fn new(spec: &TrainSpec<'_>) -> Result<Self> {
        spec.validate()?;
        let mut init = rng::substream(spec.seed, rng::INIT, &[]);
        let actions = spec.env.action_space.len();
        let h = &spec.ppo.hidden_layers;
        let scale = spec.ppo.output_init_scale;
        let actor = DenseNet::new(FEATURE_DIM, h, actions, scale, &mut init)?;
        let critic = DenseNet::new(FEATURE_DIM, h, 1, scale, &mut init)?;
        Ok(Self {
            actor_opt: Adam::new(&actor),
            critic_opt: Adam::new(&critic),
            best_actor: actor.clone(),
            best_critic: critic.clone(),
            actor,
            critic,
            actor_steps: 0,
            critic_steps: 0,
            passes: 0,
            patients: 0,
            best_pttr: f64::NEG_INFINITY,
            best_pass: None,
            since_improvement: 0,
        })
    }

    /// Forging offsets in force when the best pass was collected.
    pub fn best_offsets(&self, spec: &TrainSpec<'_>) -> Vec<f64> {
        let delta = self.best_pass.unwrap_or(0) as f64;
        spec.forging.logit_offsets(&spec.env.action_space, delta)
    }

    pub fn best_policy(&self, spec: &TrainSpec<'_>, name: &str) -> Result<ActorPolicy> {
        ActorPolicy::new(
            name,
            self.best_actor.clone(),
            spec.env.action_space.clone(),
            self.best_offsets(spec),
            spec.forging.elimination_threshold,
        )
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct PassLog {
    pub pass: u32,
    /// Patients consumed after this pass.
    pub patients: u64,
    pub mean_reward: f64,
    pub pttr: f64,
    pub kl: f64,
    pub actor_iters: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub critic_loss: f64,
    pub schedule: f64,
    pub regularizer: f64,
    pub available_actions: usize,
    /// Distinct actions sampled during the pass.
    pub used_actions: usize,
    pub improved: bool,
}

pub const PASS_LOG_HEADER: &str = "pass,patients,mean_reward,pttr,kl,actor_iters,actor_lr,critic_lr,critic_loss,schedule_h,regularizer,available_actions,used_actions,improved";

impl PassLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.pass,
            self.patients,
            self.mean_reward,
            self.pttr,
            self.kl,
            self.actor_iters,
            self.actor_lr,
            self.critic_lr,
            self.critic_loss,
            self.schedule,
            self.regularizer,
            self.available_actions,
            self.used_actions,
            self.improved as u8
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// No PTTR improvement for `patience` passes after warmup.
    Patience,
    MaxPasses,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainerState,
    pub log: Vec<PassLog>,
    pub stop: StopReason,
}

/// Runs PPO passes until the stopping rule fires. Each pass draws a fresh
/// training cohort, rolls out the stochastic actor, then updates actor and
/// critic. `on_pass` sees each log line as soon as the pass ends.
pub fn train<S: InrSimulator>(
    sim: &S,
    spec: &TrainSpec<'_>,
    resume: Option<TrainerState>,
    on_pass: &mut dyn FnMut(&PassLog) -> Result<()>,
) -> Result<TrainOutcome> {
    spec.validate()?;
    let mut state = match resume {
        Some(s) => s,
        None => TrainerState::new(spec)?,
    };
    let ppo = spec.ppo;
    let ppp = ppo.patients_per_pass as u64;
    let cohort_cfg = spec.pass_cohort();
    let mut log = Vec::new();
    let stop = loop {
        if state.patients >= ppo.warmup_patients && state.since_improvement >= ppo.patience {
            break StopReason::Patience;
        }
        if state.passes >= ppo.max_passes {
            break StopReason::MaxPasses;
        }
        let pass = state.passes;
        let tag = |e: Error| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("pass {pass}: {m}")),
            e => e,
        };
        let patients = generate_cohort_with_ids(&cohort_cfg, pass as u64 * ppp, &[pass as u64])?;
        let delta = pass as f64;
        let offsets = spec.forging.logit_offsets(&spec.env.action_space, delta);
        let (episodes, trajectories) = collect_rollouts(
            sim,
            spec.env,
            &state.actor,
            &state.critic,
            &offsets,
            &patients,
            spec.seed,
            &[TRAIN_STREAM, pass as u64],
        )
        .map_err(tag)?;
        let n = trajectories.len() as f64;
        let pttr = trajectories.iter().map(|t| t.pttr).sum::<f64>() / n;
        let mean_reward = trajectories.iter().map(|t| t.total_reward()).sum::<f64>() / n;
        let used: BTreeSet<usize> = episodes.iter().flat_map(|e| e.actions.iter().copied()).collect();
        let improved = pttr > state.best_pttr;
        if improved {
            state.best_pttr = pttr;
            state.best_pass = Some(pass);
            state.best_actor = state.actor.clone();
            state.best_critic = state.critic.clone();
        }
        let mut buffer = RolloutBuffer::from_episodes(&episodes, offsets, ppo.gamma, ppo.gae_lambda)?;
        buffer.normalize_advantages();
        let a = actor_update(
            &mut state.actor,
            &mut state.actor_opt,
            &buffer,
            ppo,
            spec.forging,
            &mut state.actor_steps,
        )
        .map_err(tag)?;
        let c = critic_update(
            &mut state.critic,
            &mut state.critic_opt,
            &buffer,
            ppo,
            &mut state.critic_steps,
        )
        .map_err(tag)?;
        state.passes += 1;
        state.patients += ppp;
        if improved {
            state.since_improvement = 0;
        } else if state.patients > ppo.warmup_patients {
            state.since_improvement += 1;
        }
        let line = PassLog {
            pass,
            patients: state.patients,
            mean_reward,
            pttr,
            kl: a.kl,
            actor_iters: a.iterations,
            actor_lr: a.lr,
            critic_lr: c.lr,
            critic_loss: c.loss_before,
            schedule: if spec.forging.action_focus {
                schedule_h(delta, &spec.forging.schedule)
            } else {
                0.0
            },
            regularizer: a.regularizer,
            available_actions: available_actions(
                state.actor.output_layer(),
                spec.forging.elimination_threshold,
            ),
            used_actions: used.len(),
            improved,
        };
        on_pass(&line)?;
        log.push(line);
    };
    Ok(TrainOutcome { state, log, stop })
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn split(text: &str) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("{v:?}: {e}"))))
        .collect()
}

/// Writes the trainer state, including optimizer moments, plus the best
/// actor's logit offsets and caller metadata.
pub fn save_trainer_state(
    path: &Path,
    state: &TrainerState,
    spec: &TrainSpec<'_>,
    extra: &BTreeMap<String, String>,
) -> Result<()> {
    let mut meta = extra.clone();
    let mut put = |k: &str, v: String| {
        meta.insert(k.to_string(), v);
    };
    put("actor_steps", state.actor_steps.to_string());
    put("critic_steps", state.critic_steps.to_string());
    put("actor_adam_t", state.actor_opt.t.to_string());
    put("critic_adam_t", state.critic_opt.t.to_string());
    put("passes", state.passes.to_string());
    put("patients", state.patients.to_string());
    put("best_pttr", state.best_pttr.to_string());
    put(
        "best_pass",
        state.best_pass.map(|p| p.to_string()).unwrap_or_default(),
    );
    put("since_improvement", state.since_improvement.to_string());
    put("logit_offsets", join(&state.best_offsets(spec)));
    put("action_percents", join(&spec.env.action_space.percent_changes));
    put("action_duration", spec.env.action_space.duration.to_string());
    put(
        "elimination_threshold",
        spec.forging.elimination_threshold.to_string(),
    );
    let am = state.actor_opt.m.to_net(&state.actor)?;
    let av = state.actor_opt.v.to_net(&state.actor)?;
    let cm = state.critic_opt.m.to_net(&state.critic)?;
    let cv = state.critic_opt.v.to_net(&state.critic)?;
    save_checkpoint(
        path,
        FEATURE_MAP,
        &meta,
        &[
            ("best_actor", &state.best_actor),
            ("best_critic", &state.best_critic),
            ("actor", &state.actor),
            ("critic", &state.critic),
            ("actor_adam_m", &am),
            ("actor_adam_v", &av),
            ("critic_adam_m", &cm),
            ("critic_adam_v", &cv),
        ],
    )
}

fn meta_parse<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    ck.meta(key)
        .ok_or_else(|| Error::Parse(format!("checkpoint metadata lacks {key:?}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad checkpoint metadata {key:?}")))
}

pub fn load_trainer_state(path: &Path) -> Result<(TrainerState, Checkpoint)> {
    let ck = load_checkpoint(path)?;
    let net = |n: &str| ck.network(n).cloned();
    let adam = |m: &str, v: &str, t: &str| -> Result<Adam> {
        let template = net(m)?;
        let mut opt = Adam::new(&template);
        opt.m = Gradients::from_net(&template);
        opt.v = Gradients::from_net(&net(v)?);
        opt.t = meta_parse(&ck, t)?;
        Ok(opt)
    };
    let best_pass = match ck.meta("best_pass") {
        Some("") | None => None,
        Some(_) => Some(meta_parse(&ck, "best_pass")?),
    };
    let state = TrainerState {
        actor: net("actor")?,
        critic: net("critic")?,
        actor_opt: adam("actor_adam_m", "actor_adam_v", "actor_adam_t")?,
        critic_opt: adam("critic_adam_m", "critic_adam_v", "critic_adam_t")?,
        actor_steps: meta_parse(&ck, "actor_steps")?,
        critic_steps: meta_parse(&ck, "critic_steps")?,
        passes: meta_parse(&ck, "passes")?,
        patients: meta_parse(&ck, "patients")?,
        best_pttr: meta_parse(&ck, "best_pttr")?,
        best_pass,
        best_actor: net("best_actor")?,
        best_critic: net("best_critic")?,
        since_improvement: meta_parse(&ck, "since_improvement")?,
    };
    Ok((state, ck))
}

/// The deterministic policy stored in a trainer checkpoint.
pub fn policy_from_checkpoint(ck: &Checkpoint, name: &str) -> Result<ActorPolicy> {
    let space = crate::env::ActionSpace::new(
        split(ck.meta("action_percents").unwrap_or(""))?,
        meta_parse(ck, "action_duration")?,
    )?;
    ActorPolicy::new(
        name,
        ck.network("best_actor")?.clone(),
        space,
        split(ck.meta("logit_offsets").unwrap_or(""))?,
        meta_parse(ck, "elimination_threshold")?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LrSchedule;
    use crate::pkpd::{ConstantInrEngine, PkPdEngine};

    fn tiny(ppp: usize, warmup: u64, patience: u32, max: u32) -> PpoConfig {
        PpoConfig {
            patients_per_pass: ppp,
            warmup_patients: warmup,
            patience,
            max_passes: max,
            hidden_layers: vec![16, 16],
            actor_iters: 3,
            critic_iters: 3,
            ..PpoConfig::default()
        }
    }

    fn cohort() -> CohortConfig {
        CohortConfig {
            size: 1,
            seed: 0,
            rebalance_cyp2c9: true,
            ..CohortConfig::default()
        }
    }

    #[test]
    fn frozen_actor_stops_after_warmup_plus_patience() {
        let mut ppo = tiny(20, 200, 4, 100);
        ppo.actor_lr = LrSchedule::constant(0.0);
        ppo.critic_lr = LrSchedule::constant(0.0);
        let env = EnvConfig::default();
        let forging = ForgingConfig::default();
        let c = cohort();
        let spec = TrainSpec {
            env: &env,
            ppo: &ppo,
            forging: &forging,
            cohort: &c,
            seed: 4,
        };
        let out = train(&ConstantInrEngine { inr: 2.5 }, &spec, None, &mut |_| Ok(())).unwrap();
        assert_eq!(out.stop, StopReason::Patience);
        assert_eq!(out.log.len(), 200 / 20 + 4);
        assert_eq!(out.state.best_pass, Some(0));
        assert!(out.log.iter().all(|l| l.pttr == 1.0));
    }

    #[test]
    fn log_is_monotone_and_run_reproducible() {
        let ppo = tiny(50, 0, 100, 3);
        let env = EnvConfig::default();
        let forging = ForgingConfig {
            regularizer_coef: 0.1,
            action_focus: true,
            ..ForgingConfig::default()
        };
        let c = cohort();
        let spec = TrainSpec {
            env: &env,
            ppo: &ppo,
            forging: &forging,
            cohort: &c,
            seed: 11,
        };
        let sim = PkPdEngine::default();
        let mut seen = Vec::new();
        let a = train(&sim, &spec, None, &mut |l| {
            seen.push(l.pass);
            Ok(())
        })
        .unwrap();
        assert_eq!(a.stop, StopReason::MaxPasses);
        assert_eq!(seen, vec![0, 1, 2]);
        assert!(a.log.windows(2).all(|w| w[1].patients > w[0].patients));
        assert!(a.log.iter().all(|l| l.regularizer > 0.0 && l.actor_lr > 0.0));
        let b = train(&sim, &spec, None, &mut |_| Ok(())).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.state.actor, b.state.actor);
        assert_eq!(a.state.best_actor, b.state.best_actor);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let env = EnvConfig::default();
        let forging = ForgingConfig::default();
        let c = cohort();
        let full = tiny(10, 0, 100, 4);
        let spec = TrainSpec {
            env: &env,
            ppo: &full,
            forging: &forging,
            cohort: &c,
            seed: 2,
        };
        let sim = PkPdEngine::default();
        let straight = train(&sim, &spec, None, &mut |_| Ok(())).unwrap();

        let half = tiny(10, 0, 100, 2);
        let spec_half = TrainSpec { ppo: &half, ..spec };
        let first = train(&sim, &spec_half, None, &mut |_| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        save_trainer_state(&path, &first.state, &spec_half, &BTreeMap::new()).unwrap();
        let (restored, ck) = load_trainer_state(&path).unwrap();
        assert_eq!(restored.actor_steps, first.state.actor_steps);
        assert_eq!(restored.passes, 2);
        let spec_full = TrainSpec { ppo: &full, ..spec_half };
        let rest = train(&sim, &spec_full, Some(restored), &mut |_| Ok(())).unwrap();
        assert_eq!(rest.log, straight.log[2..].to_vec());
        assert_eq!(rest.state.actor, straight.state.actor);
        assert_eq!(rest.state.actor_steps, straight.state.actor_steps);

        let pol = policy_from_checkpoint(&ck, "ppo").unwrap();
        assert_eq!(pol.actor, first.state.best_actor);
        assert_eq!(pol.logit_offsets, first.state.best_offsets(&spec_half));
    }
}
