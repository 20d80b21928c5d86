use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use warfarin_xrl::cohort::CohortConfig;
use warfarin_xrl::ppo::{
    load_trainer_state, save_trainer_state, train, StopReason, TrainSpec, PASS_LOG_HEADER,
};
use warfarin_xrl::{Error, Result};

use crate::{create_dir, meta_lines, write_file, ConfigArgs, Context};

pub const CHECKPOINT_FILE: &str = "checkpoint.wxrl";
pub const LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "train_summary.json";

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory for the checkpoint, training log and summary.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from a trainer checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub patience: Option<u32>,
    #[arg(long)]
    pub max_passes: Option<u32>,
    #[arg(long)]
    pub patients_per_pass: Option<usize>,
    /// Output-layer group sparsity coefficient.
    #[arg(long)]
    pub regularizer: Option<f64>,
    /// Enable the scheduled no-change logit bonus.
    #[arg(long)]
    pub action_focus: bool,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let ctx = Context::load(&args.config, |cfg| {
        if let Some(p) = cfg.ppo.as_mut() {
            if let Some(v) = args.warmup {
                p.warmup_patients = v;
            }
            if let Some(v) = args.patience {
                p.patience = v;
            }
            if let Some(v) = args.max_passes {
                p.max_passes = v;
            }
            if let Some(v) = args.patients_per_pass {
                p.patients_per_pass = v;
            }
        }
        if let Some(f) = cfg.forging.as_mut() {
            if let Some(v) = args.regularizer {
                f.regularizer_coef = v;
            }
            if args.action_focus {
                f.action_focus = true;
            }
        }
    })?;
    let cfg = &ctx.cfg;
    let ppo = cfg.ppo()?;
    let forging = cfg.forging()?;
    let template = CohortConfig {
        size: 1,
        seed: cfg.seed,
        rebalance_cyp2c9: cfg.training_cohort.rebalance_cyp2c9,
        min_variant_prob: cfg.training_cohort.min_variant_prob,
        iiv: ctx.params.iiv(),
    };
    let spec = TrainSpec {
        env: &cfg.env,
        ppo,
        forging,
        cohort: &template,
        seed: cfg.seed,
    };
    let resume = match &args.resume {
        Some(p) => {
            let (state, _) = load_trainer_state(p)?;
            eprintln!("resuming after pass {} ({} actor steps)", state.passes, state.actor_steps);
            Some(state)
        }
        None => None,
    };

    create_dir(&args.out_dir)?;
    let log_path = args.out_dir.join(LOG_FILE);
    let append = args.resume.is_some() && log_path.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)?;
    if !append {
        writeln!(log, "{}{PASS_LOG_HEADER}", meta_lines(&ctx.provenance()))?;
    }
    let outcome = train(&ctx.sim, &spec, resume, &mut |l| {
        writeln!(log, "{}", l.csv_row())?;
        log.flush()?;
        eprintln!(
            "pass {:>4}  patients {:>7}  pttr {:.4}  reward {:>9.3}  kl {:.4}  actions {}/{}{}",
            l.pass,
            l.patients,
            l.pttr,
            l.mean_reward,
            l.kl,
            l.used_actions,
            l.available_actions,
            if l.improved { "  *" } else { "" }
        );
        Ok(())
    })?;

    let mut meta = ctx.provenance();
    meta.insert("config".into(), cfg.canonical()?);
    let ck_path = args.out_dir.join(CHECKPOINT_FILE);
    save_trainer_state(&ck_path, &outcome.state, &spec, &meta)?;

    let s = &outcome.state;
    let summary = serde_json::json!({
        "config_hash": ctx.hash,
        "seed": cfg.seed,
        "passes": s.passes,
        "patients": s.patients,
        "best_pass": s.best_pass,
        "best_pttr": s.best_pttr,
        "stop": match outcome.stop {
            StopReason::Patience => "patience",
            StopReason::MaxPasses => "max_passes",
        },
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?;
    write_file(&args.out_dir.join(SUMMARY_FILE), text + "\n")?;
    eprintln!(
        "stopped ({:?}) after {} passes; best pass {:?} with training PTTR {:.4}; checkpoint {}",
        outcome.stop,
        s.passes,
        s.best_pass,
        s.best_pttr,
        ck_path.display()
    );
    Ok(())
}
