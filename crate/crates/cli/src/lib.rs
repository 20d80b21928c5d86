//! `wxrl`: generate cohorts, train, evaluate, distill and compare.
//!
//! Every command reads one experiment config. Flags override config values
//! before the config hash is computed, so the hash written into each
//! artifact describes exactly what produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use warfarin_xrl::cohort::SensitivityMap;
use warfarin_xrl::config::ExperimentConfig;
use warfarin_xrl::{Error, PkPdEngine, PkPdParams, Result};

pub mod commands;

#[derive(Debug, Parser)]
#[command(name = "wxrl", version, about = "Explainable RL warfarin dosing experiments")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism. Results do
    /// not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a virtual patient cohort as CSV.
    Generate(commands::generate::GenerateArgs),
    /// Train a PPO dosing policy.
    Train(commands::train::TrainArgs),
    /// Evaluate a protocol or trained policy on a cohort.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Distill a policy into an INR interval dosing table.
    Distill(commands::distill::DistillArgs),
    /// Tabulate several evaluation reports side by side.
    Compare(commands::compare::CompareArgs),
}

/// Options shared by every command that reads a config.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads must be positive"));
        }
        // Only the first call in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Generate(a) => commands::generate::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Evaluate(a) => commands::evaluate::run(&a),
        Command::Distill(a) => commands::distill::run(&a),
        Command::Compare(a) => commands::compare::run(&a),
    }
}

/// A resolved config with its model data and hash.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub params: PkPdParams,
    pub sim: PkPdEngine,
    pub classes: SensitivityMap,
}

impl Context {
    /// Loads the config and applies the seed override; `adjust` applies
    /// command-specific overrides before validation and hashing.
    pub fn load(args: &ConfigArgs, adjust: impl FnOnce(&mut ExperimentConfig)) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&args.config)?;
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        adjust(&mut cfg);
        cfg.validate()?;
        Self::new(cfg)
    }

    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let read = |p: &Path| {
            std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))
        };
        let params_text = cfg.model.pkpd_params.as_deref().map(read).transpose()?;
        let map_text = cfg.model.sensitivity_map.as_deref().map(read).transpose()?;
        let params = match &params_text {
            Some(t) => PkPdParams::parse(t)?,
            None => PkPdParams::default(),
        };
        let classes = match &map_text {
            Some(t) => SensitivityMap::parse(t)?,
            None => SensitivityMap::default(),
        };
        let data: Vec<&str> = params_text.iter().chain(&map_text).map(String::as_str).collect();
        let hash = cfg.hash(&data)?;
        Ok(Self {
            sim: PkPdEngine::new(params.clone()),
            cfg,
            hash,
            params,
            classes,
        })
    }

    /// Provenance entries every artifact carries.
    pub fn provenance(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("config_hash".to_string(), self.hash.clone()),
            ("seed".to_string(), self.cfg.seed.to_string()),
        ])
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::config(format!("cannot create {}: {e}", dir.display())))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(path, contents)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub(crate) fn meta_lines(meta: &BTreeMap<String, String>) -> String {
    meta.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}
