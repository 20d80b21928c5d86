use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;
use warfarin_xrl::eval::{check_same_cohort, compare, EvaluationReport};
use warfarin_xrl::{Error, Result};

use crate::write_file;

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Report JSON files written by `evaluate`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Markdown output.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Compare reports even when their cohorts or noise seeds differ.
    #[arg(long)]
    pub force: bool,
}

pub fn run(args: &CompareArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read report {}: {e}", p.display())))?;
            EvaluationReport::from_json(&text)
        })
        .collect::<Result<Vec<_>>>()?;
    if !args.force {
        check_same_cohort(&reports)?;
    }
    let table = compare(&reports)?;
    let mut md = table.to_markdown();
    md.push('\n');
    for r in &reports {
        let get = |k: &str| r.metadata.get(k).map(String::as_str).unwrap_or("");
        let _ = writeln!(
            md,
            "<!-- {}: config_hash={} seed={} -->",
            r.protocol,
            get("config_hash"),
            get("seed")
        );
    }
    write_file(&args.out, &md)?;
    if let Some(p) = &args.csv {
        let mut buf = Vec::new();
        for r in &reports {
            let get = |k: &str| r.metadata.get(k).cloned().unwrap_or_default();
            writeln!(buf, "# {}: config_hash={} seed={}", r.protocol, get("config_hash"), get("seed"))?;
        }
        table.write_csv(&mut buf)?;
        write_file(p, buf)?;
    }
    print!("{md}");
    Ok(())
}
