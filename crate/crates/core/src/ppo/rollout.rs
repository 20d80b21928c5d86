use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rayon::prelude::*;

use super::{compute_gae, log_softmax_rows};
use crate::cohort::Patient;
use crate::env::{DosingEnv, EnvConfig, Trajectory, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::nn::DenseNet;
use crate::pkpd::InrSimulator;
use crate::protocols::iwpc_initial_dose;
use crate::rng::{self, RandomStream};

/// One patient's decisions as seen by the learner.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Episode {
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
}

/// Decisions from one pass, flattened in patient order.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub observations: Array2<f64>,
    pub actions: Vec<usize>,
    /// Forging offsets the actions were sampled under.
    pub logit_offsets: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Index of each episode's first decision.
    pub episode_starts: Vec<usize>,
}

impl RolloutBuffer {
    /// Flattens episodes and computes per-episode advantages and returns.
    pub fn from_episodes(
        episodes: &[Episode],
        logit_offsets: Vec<f64>,
        gamma: f64,
        lambda: f64,
    ) -> Result<Self> {
        let n: usize = episodes.iter().map(|e| e.actions.len()).sum();
        let mut obs = Vec::with_capacity(n * FEATURE_DIM);
        let mut buf = Self {
            observations: Array2::zeros((0, FEATURE_DIM)),
            actions: Vec::with_capacity(n),
            logit_offsets,
            log_probs: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            advantages: Vec::with_capacity(n),
            returns: Vec::with_capacity(n),
            episode_starts: Vec::with_capacity(episodes.len()),
        };
        for e in episodes {
            buf.episode_starts.push(buf.actions.len());
            let (adv, ret) = compute_gae(&e.rewards, &e.values, gamma, lambda)?;
            for f in &e.features {
                obs.extend_from_slice(f);
            }
            buf.actions.extend_from_slice(&e.actions);
            buf.log_probs.extend_from_slice(&e.log_probs);
            buf.rewards.extend_from_slice(&e.rewards);
            buf.values.extend_from_slice(&e.values);
            buf.advantages.extend(adv);
            buf.returns.extend(ret);
        }
        buf.observations = Array2::from_shape_vec((n, FEATURE_DIM), obs)
            .map_err(|e| Error::Parse(e.to_string()))?;
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Rescales advantages to mean 0 and standard deviation 1.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len() as f64;
        if n == 0.0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-8);
        for a in &mut self.advantages {
            *a = (*a - mean) / sd;
        }
    }
}

/// Rolls out the stochastic actor on every patient. All trials share the
/// decision calendar, so they advance in lockstep and each decision point is
/// one batched forward pass. Patients are simulated in parallel; results are
/// kept in input order, so output does not depend on the thread count.
///
/// `stream` keys the measurement and action-sampling substreams.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts<S: InrSimulator>(
    sim: &S,
    env_cfg: &EnvConfig,
    actor: &DenseNet,
    critic: &DenseNet,
    logit_offsets: &[f64],
    patients: &[Patient],
    seed: u64,
    stream: &[u64],
) -> Result<(Vec<Episode>, Vec<Trajectory>)> {
    if actor.output_dim() != env_cfg.action_space.len() || logit_offsets.len() != actor.output_dim() {
        return Err(Error::Dimension {
            expected: env_cfg.action_space.len(),
            got: actor.output_dim(),
        });
    }
    let key = |p: &Patient| {
        let mut k = stream.to_vec();
        k.push(p.id);
        k
    };
    let mut envs: Vec<DosingEnv<'_, S>> = patients
        .par_iter()
        .map(|p| {
            DosingEnv::new(
                sim,
                env_cfg,
                p,
                rng::substream(seed, rng::MEASUREMENT, &key(p)),
                iwpc_initial_dose(p),
            )
        })
        .collect::<Result<_>>()?;
    let mut policy_rngs: Vec<RandomStream> = patients
        .iter()
        .map(|p| rng::substream(seed, rng::POLICY, &key(p)))
        .collect();
    let mut episodes = vec![Episode::default(); patients.len()];
    let offsets = ArrayView1::from(logit_offsets);
    while envs.iter().any(|e| !e.is_done()) {
        if envs.iter().any(|e| e.is_done()) {
            return Err(Error::domain("trials fell out of lockstep"));
        }
        let feats: Vec<[f64; FEATURE_DIM]> = envs.iter().map(|e| e.observation().features()).collect();
        let x = Array2::from_shape_fn((feats.len(), FEATURE_DIM), |(i, j)| feats[i][j]);
        let logits = actor.forward_batch(x.view())?;
        let values = critic.forward_batch(x.view())?;
        let lp = log_softmax_rows(&(&logits + &offsets));
        let mut actions = Vec::with_capacity(envs.len());
        for (i, rng) in policy_rngs.iter_mut().enumerate() {
            let u: f64 = rng.random();
            let a = sample_index(lp.row(i), u);
            let ep = &mut episodes[i];
            ep.features.push(feats[i]);
            ep.actions.push(a);
            ep.log_probs.push(lp[[i, a]]);
            ep.values.push(values[[i, 0]]);
            actions.push(a);
        }
        let rewards: Vec<f64> = envs
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(env, &a)| env.step(a).map(|s| s.reward))
            .collect::<Result<_>>()?;
        for (ep, r) in episodes.iter_mut().zip(rewards) {
            ep.rewards.push(r);
        }
    }
    let trajectories = envs.into_iter().map(|e| e.into_trajectory()).collect();
    Ok((episodes, trajectories))
}

/// Inverse-CDF draw from log-probabilities with a uniform `u ∈ [0, 1)`.
fn sample_index(log_probs: ArrayView1<f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (j, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return j;
        }
    }
    log_probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortConfig};
    use crate::env::ActionSpace;
    use crate::pkpd::{ConstantInrEngine, PkPdEngine};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nets(seed: u64) -> (DenseNet, DenseNet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            DenseNet::new(FEATURE_DIM, &[8, 8], 21, 0.01, &mut rng).unwrap(),
            DenseNet::new(FEATURE_DIM, &[8, 8], 1, 0.01, &mut rng).unwrap(),
        )
    }

    fn cohort(n: usize) -> Vec<Patient> {
        generate_cohort(&CohortConfig {
            size: n,
            seed: 3,
            ..CohortConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn thirteen_decisions_per_patient() {
        let (a, c) = nets(1);
        let ps = cohort(6);
        let (eps, trajs) = collect_rollouts(
            &PkPdEngine::default(),
            &EnvConfig::default(),
            &a,
            &c,
            &[0.0; 21],
            &ps,
            9,
            &[0],
        )
        .unwrap();
        assert!(eps.iter().all(|e| e.actions.len() == 13 && e.rewards.len() == 13));
        assert!(trajs.iter().all(|t| t.daily_true_inr.len() == 90));
        let buf = RolloutBuffer::from_episodes(&eps, vec![0.0; 21], 0.5, 0.97).unwrap();
        assert_eq!(buf.len(), 78);
        assert_eq!(buf.episode_starts, vec![0, 13, 26, 39, 52, 65]);
        for (t, e) in trajs.iter().zip(&eps) {
            let recorded: Vec<usize> = t.records.iter().map(|r| r.action.unwrap()).collect();
            assert_eq!(recorded, e.actions);
        }
    }

    #[test]
    fn rollouts_are_reproducible_and_stream_dependent() {
        let (a, c) = nets(2);
        let ps = cohort(4);
        let sim = PkPdEngine::default();
        let env = EnvConfig::default();
        let run = |s: u64| collect_rollouts(&sim, &env, &a, &c, &[0.0; 21], &ps, 5, &[s]).unwrap().0;
        assert_eq!(run(0), run(0));
        assert_ne!(run(0), run(1));
    }

    #[test]
    fn strongly_preferred_action_dominates_sampling() {
        let (a, c) = nets(3);
        let space = ActionSpace::default();
        let mut offsets = vec![0.0; 21];
        offsets[space.zero_index()] = 50.0;
        let (eps, _) = collect_rollouts(
            &ConstantInrEngine { inr: 2.5 },
            &EnvConfig::default(),
            &a,
            &c,
            &offsets,
            &cohort(5),
            1,
            &[],
        )
        .unwrap();
        assert!(eps.iter().flat_map(|e| &e.actions).all(|&x| x == space.zero_index()));
    }

    #[test]
    fn normalized_advantages_are_standard() {
        let eps = vec![
            Episode {
                features: vec![[0.0; FEATURE_DIM]; 3],
                actions: vec![0, 1, 2],
                log_probs: vec![-1.0; 3],
                values: vec![0.0, -1.0, 0.5],
                rewards: vec![-3.0, -1.0, -2.0],
            };
            2
        ];
        let mut buf = RolloutBuffer::from_episodes(&eps, vec![0.0; 3], 0.5, 0.97).unwrap();
        buf.normalize_advantages();
        let n = buf.len() as f64;
        let mean: f64 = buf.advantages.iter().sum::<f64>() / n;
        let var: f64 = buf.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_cdf_sampling() {
        let lp = ndarray::array![0.25f64.ln(), 0.5f64.ln(), 0.25f64.ln()];
        assert_eq!(sample_index(lp.view(), 0.0), 0);
        assert_eq!(sample_index(lp.view(), 0.3), 1);
        assert_eq!(sample_index(lp.view(), 0.9), 2);
        assert_eq!(sample_index(lp.view(), 0.999_999_999_999), 2);
    }
}
