use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::Args;
use sha2::{Digest, Sha256};
use warfarin_xrl::cohort::{generate_cohort, read_cohort_csv, Patient};
use warfarin_xrl::eval::{evaluate, write_plot_data, EvaluationReport};
use warfarin_xrl::nn::load_checkpoint;
use warfarin_xrl::ppo::policy_from_checkpoint;
use warfarin_xrl::protocols::{builtin, ProtocolTable, TableProtocol};
use warfarin_xrl::{DosingPolicy, Error, Result};

use crate::{create_dir, write_file, ConfigArgs, Context};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// `aurora`, `intermountain`, `iwpc+fixed`, a trainer checkpoint, or a
    /// dosing table file.
    #[arg(long)]
    pub policy: String,
    /// Label used in reports and file names; defaults to the policy name.
    #[arg(long)]
    pub name: Option<String>,
    /// Cohort CSV from `generate`; otherwise the cohort is generated from
    /// the config.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    #[arg(long)]
    pub cohort_size: Option<usize>,
    #[arg(long)]
    pub cohort_seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Resolves a policy argument: builtin name, checkpoint or table file.
pub fn load_policy(spec: &str, name: Option<&str>) -> Result<Box<dyn DosingPolicy>> {
    if let Ok(p) = builtin(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::config(format!(
            "policy '{spec}' is neither a builtin protocol nor an existing file"
        )));
    }
    let label = name.map(str::to_string).unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| spec.to_string())
    });
    if is_checkpoint(path)? {
        let ck = load_checkpoint(path)?;
        Ok(Box::new(policy_from_checkpoint(&ck, &label)?))
    } else {
        Ok(Box::new(TableProtocol::plain(label, ProtocolTable::load(path)?)))
    }
}

/// Location-independent description of a policy argument: the builtin name,
/// or the file name with a digest of its contents.
pub fn policy_id(spec: &str) -> Result<String> {
    if builtin(spec).is_ok() {
        return Ok(spec.to_string());
    }
    let path = Path::new(spec);
    let bytes = std::fs::read(path)?;
    let digest: String = Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect();
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(format!("{name}@sha256:{digest}"))
}

fn is_checkpoint(path: &Path) -> Result<bool> {
    let mut magic = [0u8; 8];
    let mut f = std::fs::File::open(path)?;
    Ok(f.read_exact(&mut magic).is_ok() && &magic == b"WXRLCKPT")
}

/// The evaluation cohort and its description for report metadata.
pub fn load_cohort(
    ctx: &Context,
    file: Option<&Path>,
) -> Result<(Vec<Patient>, BTreeMap<String, String>)> {
    let mut meta = BTreeMap::new();
    let patients = match file {
        Some(path) => {
            let f = std::fs::File::open(path)
                .map_err(|e| Error::config(format!("cannot open cohort {}: {e}", path.display())))?;
            let cf = read_cohort_csv(std::io::BufReader::new(f))?;
            for k in ["cohort_seed", "rebalance_cyp2c9"] {
                if let Some(v) = cf.meta(k) {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
            meta.insert("cohort_size".into(), cf.patients.len().to_string());
            meta.insert("cohort_file_config_hash".into(), cf.meta("config_hash").unwrap_or("").into());
            cf.patients
        }
        None => {
            let c = ctx.cfg.cohort.resolve(ctx.cfg.seed, ctx.params.iiv());
            meta.insert("cohort_seed".into(), c.seed.to_string());
            meta.insert("cohort_size".into(), c.size.to_string());
            meta.insert("rebalance_cyp2c9".into(), c.rebalance_cyp2c9.to_string());
            generate_cohort(&c)?
        }
    };
    Ok((patients, meta))
}

/// Evaluates and writes `<label>.json`, `.summary.csv`, `.patients.csv`,
/// `.md` and `.trajectories.csv` into `out_dir`. Returns the report.
pub fn evaluate_to_dir(
    ctx: &Context,
    policy: &dyn DosingPolicy,
    cohort: &[Patient],
    cohort_meta: BTreeMap<String, String>,
    out_dir: &Path,
) -> Result<EvaluationReport> {
    let mut meta = ctx.provenance();
    meta.extend(cohort_meta);
    meta.insert("eval_seed".into(), ctx.cfg.eval_seed().to_string());
    let (report, trajectories) = evaluate(
        &ctx.sim,
        &ctx.cfg.env,
        policy,
        cohort,
        &ctx.classes,
        ctx.cfg.eval_seed(),
        meta.clone(),
    )?;
    create_dir(out_dir)?;
    let stem = file_stem(&report.protocol);
    write_file(&out_dir.join(format!("{stem}.json")), report.to_json()? + "\n")?;
    let mut buf = Vec::new();
    report.write_summary_csv(&mut buf)?;
    write_file(&out_dir.join(format!("{stem}.summary.csv")), &buf)?;
    buf.clear();
    report.write_patients_csv(&mut buf)?;
    write_file(&out_dir.join(format!("{stem}.patients.csv")), &buf)?;
    write_file(&out_dir.join(format!("{stem}.md")), report.to_markdown())?;
    buf.clear();
    write_plot_data(&mut buf, &trajectories, ctx.cfg.evaluation.plot_patients, &meta)?;
    write_file(&out_dir.join(format!("{stem}.trajectories.csv")), &buf)?;
    Ok(report)
}

/// Protocol names such as `iwpc+fixed` are used as file names.
pub fn file_stem(protocol: &str) -> String {
    protocol
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.+".contains(c) { c } else { '_' })
        .collect()
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let ctx = Context::load(&args.config, |cfg| {
        if let Some(n) = args.cohort_size {
            cfg.cohort.size = n;
        }
        if args.cohort_seed.is_some() {
            cfg.cohort.seed = args.cohort_seed;
        }
    })?;
    let policy = load_policy(&args.policy, args.name.as_deref())?;
    let policy: Box<dyn DosingPolicy> = match &args.name {
        Some(n) => Box::new(Renamed { name: n.clone(), inner: policy }),
        None => policy,
    };
    let (cohort, mut cohort_meta) = load_cohort(&ctx, args.cohort.as_deref())?;
    cohort_meta.insert("policy".into(), policy_id(&args.policy)?);
    let report = evaluate_to_dir(&ctx, policy.as_ref(), &cohort, cohort_meta, &args.out_dir)?;
    print!("{}", report.to_markdown());
    Ok(())
}

/// Relabels a policy without changing its behavior.
struct Renamed {
    name: String,
    inner: Box<dyn DosingPolicy>,
}

impl DosingPolicy for Renamed {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn initial(&self, patient: &warfarin_xrl::Patient) -> warfarin_xrl::DoseDecision {
        self.inner.initial(patient)
    }

    fn decide(
        &self,
        obs: &warfarin_xrl::Observation,
        patient: &warfarin_xrl::Patient,
        day: u32,
    ) -> Result<warfarin_xrl::DoseDecision> {
        self.inner.decide(obs, patient, day)
    }

    fn possible_actions(&self) -> Option<usize> {
        self.inner.possible_actions()
    }
}
