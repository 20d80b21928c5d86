use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use warfarin_xrl::cohort::{generate_cohort, CohortConfig};
use warfarin_xrl::distill::{
    collect_dataset, fit_tree, protocol_card, table_tree_agreement, tree_to_table, DecisionTree,
};
use warfarin_xrl::{Error, ProtocolTable, Result};

use super::evaluate::{load_policy, policy_id};
use crate::{create_dir, meta_lines, write_file, ConfigArgs, Context};

pub const DATASET_FILE: &str = "dataset.csv";
pub const TREE_FILE: &str = "tree.json";
pub const TABLE_FILE: &str = "table.csv";
pub const CARD_FILE: &str = "card.md";
pub const EQUIVALENCE_FILE: &str = "equivalence.txt";

/// Grid size for the tree/table agreement check.
pub const EQUIVALENCE_POINTS: usize = 10_000;
/// INR span covered by the agreement grid.
const GRID_RANGE: (f64, f64) = (0.0, 8.0);

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Teacher policy: trainer checkpoint, builtin name or table file.
    #[arg(long)]
    pub teacher: String,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Evenly spaced grid plus every split threshold and its neighbours.
pub fn equivalence_points(tree: &DecisionTree) -> Vec<f64> {
    let (lo, hi) = GRID_RANGE;
    let mut pts: Vec<f64> = (0..EQUIVALENCE_POINTS)
        .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / EQUIVALENCE_POINTS as f64)
        .collect();
    for t in tree.thresholds() {
        pts.extend([t, t - 1e-9, t + 1e-9]);
    }
    pts
}

pub struct Distilled {
    pub tree: DecisionTree,
    pub table: ProtocolTable,
    pub agreement: f64,
    pub dataset_rows: usize,
}

pub fn distill_to_dir(ctx: &Context, teacher_spec: &str, out_dir: &Path) -> Result<Distilled> {
    let cfg = &ctx.cfg;
    let teacher = load_policy(teacher_spec, Some("teacher"))?;
    let cohort = generate_cohort(&CohortConfig {
        size: cfg.distill.cohort_size,
        seed: cfg.distill_seed(),
        ..cfg.cohort.resolve(cfg.seed, ctx.params.iiv())
    })?;
    let data = collect_dataset(&ctx.sim, &cfg.env, teacher.as_ref(), &cohort, cfg.distill_seed())?;
    let tree = fit_tree(&data, &cfg.distill.tree())?;
    let table = tree_to_table(&tree)?;
    let points = equivalence_points(&tree);
    let agreement = table_tree_agreement(&table, &tree, &points);

    let mut meta = ctx.provenance();
    meta.insert("teacher".into(), policy_id(teacher_spec)?);
    meta.insert("distill_cohort_seed".into(), cfg.distill_seed().to_string());
    meta.insert("distill_cohort_size".into(), cfg.distill.cohort_size.to_string());
    create_dir(out_dir)?;

    let mut buf = meta_lines(&meta).into_bytes();
    data.write_csv(&mut buf)?;
    write_file(&out_dir.join(DATASET_FILE), buf)?;

    let tree_json = serde_json::json!({ "metadata": meta, "tree": tree });
    let text = serde_json::to_string_pretty(&tree_json).map_err(|e| Error::Parse(e.to_string()))?;
    write_file(&out_dir.join(TREE_FILE), text + "\n")?;

    let header: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    write_file(&out_dir.join(TABLE_FILE), table.to_file_string(&header))?;

    let mut card = protocol_card(&table, "Distilled dosing protocol");
    card.push('\n');
    for (k, v) in &meta {
        let _ = writeln!(card, "<!-- {k}={v} -->");
    }
    write_file(&out_dir.join(CARD_FILE), card)?;

    let mut eq = meta_lines(&meta);
    let _ = writeln!(eq, "points={}", points.len());
    let _ = writeln!(eq, "grid={}..{}", GRID_RANGE.0, GRID_RANGE.1);
    let _ = writeln!(eq, "agreement={agreement}");
    let _ = writeln!(eq, "result={}", if agreement == 1.0 { "pass" } else { "fail" });
    write_file(&out_dir.join(EQUIVALENCE_FILE), eq)?;

    Ok(Distilled {
        tree,
        table,
        agreement,
        dataset_rows: data.len(),
    })
}

pub fn run(args: &DistillArgs) -> Result<()> {
    let ctx = Context::load(&args.config, |cfg| {
        if let Some(v) = args.max_depth {
            cfg.distill.max_depth = v;
        }
        if let Some(v) = args.min_leaf {
            cfg.distill.min_leaf = v;
        }
    })?;
    let d = distill_to_dir(&ctx, &args.teacher, &args.out_dir)?;
    print!("{}", protocol_card(&d.table, "Distilled dosing protocol"));
    eprintln!(
        "{} decisions, tree with {} leaves, table with {} rows, tree/table agreement {}",
        d.dataset_rows,
        d.tree.leaves(),
        d.table.rows().len(),
        d.agreement
    );
    if d.agreement < 1.0 {
        return Err(Error::domain(format!(
            "distilled table disagrees with the tree on {:.4}% of points",
            100.0 * (1.0 - d.agreement)
        )));
    }
    Ok(())
}
