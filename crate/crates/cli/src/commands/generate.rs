use std::path::PathBuf;

use clap::Args;
use warfarin_xrl::cohort::{generate_cohort, write_cohort_csv};
use warfarin_xrl::Result;

use crate::{write_file, ConfigArgs, Context};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output CSV.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub cohort_seed: Option<u64>,
    /// Give every CYP2C9 variant at least the minimum variant probability.
    #[arg(long)]
    pub rebalance: bool,
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let ctx = Context::load(&args.config, |cfg| {
        if let Some(n) = args.size {
            cfg.cohort.size = n;
        }
        if args.cohort_seed.is_some() {
            cfg.cohort.seed = args.cohort_seed;
        }
        if args.rebalance {
            cfg.cohort.rebalance_cyp2c9 = true;
        }
    })?;
    let cohort_cfg = ctx.cfg.cohort.resolve(ctx.cfg.seed, ctx.params.iiv());
    let patients = generate_cohort(&cohort_cfg)?;
    let mut owned = ctx.provenance();
    owned.insert("cohort_seed".into(), cohort_cfg.seed.to_string());
    owned.insert("cohort_size".into(), cohort_cfg.size.to_string());
    owned.insert("rebalance_cyp2c9".into(), cohort_cfg.rebalance_cyp2c9.to_string());
    let meta: Vec<(&str, String)> = owned.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    let mut buf = Vec::new();
    write_cohort_csv(&mut buf, &patients, &meta)?;
    write_file(&args.out, buf)?;
    eprintln!("wrote {} patients to {}", patients.len(), args.out.display());
    Ok(())
}
