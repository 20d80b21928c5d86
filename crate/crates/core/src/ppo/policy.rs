use std::collections::BTreeSet;

use super::{argmax, available_actions, policy_logits};
use crate::cohort::Patient;
use crate::env::{next_dose, ActionSpace, Observation, Trajectory};
use crate::error::{Error, Result};
use crate::nn::DenseNet;
use crate::protocols::{DoseDecision, DosingPolicy};

/// Deterministic test-time policy: argmax over the forged logits.
#[derive(Debug, Clone)]
pub struct ActorPolicy {
    pub name: String,
    pub actor: DenseNet,
    pub action_space: ActionSpace,
    pub logit_offsets: Vec<f64>,
    pub elimination_threshold: f64,
}

impl ActorPolicy {
    pub fn new(
        name: impl Into<String>,
        actor: DenseNet,
        action_space: ActionSpace,
        logit_offsets: Vec<f64>,
        elimination_threshold: f64,
    ) -> Result<Self> {
        action_space.validate()?;
        if actor.output_dim() != action_space.len() {
            return Err(Error::Dimension {
                expected: action_space.len(),
                got: actor.output_dim(),
            });
        }
        if logit_offsets.len() != action_space.len() {
            return Err(Error::Dimension {
                expected: action_space.len(),
                got: logit_offsets.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            actor,
            action_space,
            logit_offsets,
            elimination_threshold,
        })
    }

    pub fn action(&self, obs: &Observation) -> Result<usize> {
        let logits = policy_logits(&self.actor, &obs.features(), &self.logit_offsets)?;
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("actor logits".into()));
        }
        Ok(argmax(&logits))
    }

    pub fn available_actions(&self) -> usize {
        available_actions(self.actor.output_layer(), self.elimination_threshold)
    }
}

impl DosingPolicy for ActorPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn decide(&self, obs: &Observation, _patient: &Patient, _day: u32) -> Result<DoseDecision> {
        let a = self.action(obs)?;
        let percent = self.action_space.percent(a)?;
        Ok(DoseDecision {
            dose: next_dose(obs.dose_previous, percent),
            duration: self.action_space.duration,
            first_day_dose: None,
            percent_change: Some(percent),
            action: Some(a),
        })
    }

    fn possible_actions(&self) -> Option<usize> {
        Some(self.available_actions())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionCounts {
    /// Output neurons with norm at or above the elimination threshold.
    pub available: usize,
    /// Distinct percent changes chosen over the trajectories.
    pub used: usize,
    /// Share of decisions that kept the dose unchanged.
    pub pct_no_change: f64,
}

pub fn count_actions(actor: &DenseNet, threshold: f64, trajectories: &[Trajectory]) -> ActionCounts {
    let mut used = BTreeSet::new();
    let mut decisions = 0usize;
    let mut no_change = 0usize;
    for t in trajectories {
        for r in &t.records {
            if let Some(p) = r.percent_change {
                used.insert(p.to_bits());
                decisions += 1;
                if p == 0.0 {
                    no_change += 1;
                }
            }
        }
    }
    ActionCounts {
        available: available_actions(actor.output_layer(), threshold),
        used: used.len(),
        pct_no_change: if decisions == 0 {
            0.0
        } else {
            no_change as f64 / decisions as f64
        },
    }
}
