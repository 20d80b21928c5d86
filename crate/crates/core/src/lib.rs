//! Explainable reinforcement-learning pipeline for warfarin maintenance
//! dosing.
//!
//! Virtual patients ([`cohort`]) respond to warfarin through a PK/PD model
//! ([`pkpd`]). A maintenance-dosing MDP ([`env`]) is solved with PPO
//! ([`ppo`]) whose actor output layer is shaped by action forging: a group
//! sparsity penalty on output neurons and a scheduled logit bonus for the
//! no-change action. The trained actor is distilled into an INR interval
//! table ([`distill`]) and benchmarked against table protocols
//! ([`protocols`]) by time in therapeutic range ([`eval`]).

// Validation is written as `!(x > 0.0)` so that NaN fails it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod config;
pub mod distill;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pkpd;
pub mod ppo;
pub mod protocols;
pub mod rng;

pub use cohort::{Patient, SensitivityClass};
pub use env::{ActionSpace, EnvConfig, Observation, RewardConfig, Trajectory};
pub use error::{Error, Result};
pub use nn::DenseNet;
pub use pkpd::{InrSimulator, PkPdEngine, PkPdParams};
pub use protocols::{DoseDecision, DosingPolicy, ProtocolTable};
