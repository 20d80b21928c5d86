//! Distillation of a trained actor into an INR interval table.
//!
//! Teacher rollouts give (measured INR, chosen percent change) pairs at
//! every maintenance decision. A one-feature CART tree is fitted to them and
//! its leaves, read left to right, become table rows; neighbouring rows with
//! the same action are merged.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cohort::Patient;
use crate::env::{simulate_protocol, EnvConfig};
use crate::error::{Error, Result};
use crate::pkpd::InrSimulator;
use crate::protocols::{DosingPolicy, OneTimeAction, ProtocolRow, ProtocolTable};
use crate::rng;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistillDataset {
    /// (measured INR at the decision, percent change chosen).
    pub rows: Vec<(f64, f64)>,
}

impl DistillDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["inr", "percent_change"])?;
        for (x, y) in &self.rows {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the teacher on every patient and records each maintenance decision.
/// Measurement streams are keyed by `seed` and patient id.
pub fn collect_dataset<S: InrSimulator, P: DosingPolicy + ?Sized>(
    sim: &S,
    env: &EnvConfig,
    teacher: &P,
    cohort: &[Patient],
    seed: u64,
) -> Result<DistillDataset> {
    if cohort.is_empty() {
        return Err(Error::domain("distillation cohort is empty"));
    }
    let per_patient: Vec<Vec<(f64, f64)>> = cohort
        .par_iter()
        .map(|p| {
            let t = simulate_protocol(sim, env, p, teacher, rng::substream(seed, rng::MEASUREMENT, &[p.id]))?;
            t.records
                .iter()
                .map(|r| {
                    r.percent_change
                        .map(|pc| (r.observation.inr_current, pc))
                        .ok_or_else(|| Error::domain("teacher decision without a percent change"))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(DistillDataset {
        rows: per_patient.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_leaf: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Leaf {
        label: f64,
        /// (label, count) sorted by label.
        counts: Vec<(f64, usize)>,
    },
    Split {
        feature: usize,
        /// Inputs `<= threshold` go left.
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecisionTree {
    pub root: Node,
}

impl DecisionTree {
    pub fn predict(&self, x: f64) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { label, .. } => return *label,
                Node::Split {
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x <= *threshold { left } else { right },
            }
        }
    }

    pub fn leaves(&self) -> usize {
        fn count(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => count(left) + count(right),
            }
        }
        count(&self.root)
    }

    pub fn depth(&self) -> usize {
        fn depth(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + depth(left).max(depth(right)),
            }
        }
        depth(&self.root)
    }

    /// Split thresholds in increasing order.
    pub fn thresholds(&self) -> Vec<f64> {
        fn walk(n: &Node, out: &mut Vec<f64>) {
            if let Node::Split {
                threshold,
                left,
                right,
                ..
            } = n
            {
                walk(left, out);
                out.push(*threshold);
                walk(right, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }
}

/// Gini impurity of a class histogram.
pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// CART on the INR feature with Gini impurity. Candidate thresholds are the
/// midpoints between consecutive distinct sorted values; among equally good
/// splits the smallest threshold wins. Nodes split only when the weighted
/// impurity strictly decreases and both children keep `min_leaf` rows.
pub fn fit_tree(data: &DistillDataset, params: &TreeParams) -> Result<DecisionTree> {
    if data.is_empty() {
        return Err(Error::domain("cannot fit a tree to an empty dataset"));
    }
    if params.min_leaf == 0 {
        return Err(Error::config("min_leaf must be positive"));
    }
    if data.rows.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("distillation data".into()));
    }
    let mut labels: Vec<f64> = data.rows.iter().map(|r| r.1).collect();
    labels.sort_by(f64::total_cmp);
    labels.dedup();
    let mut rows: Vec<(f64, usize)> = data
        .rows
        .iter()
        .map(|&(x, y)| (x, labels.partition_point(|&l| l < y)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(DecisionTree {
        root: grow(&rows, &labels, params, 0),
    })
}

fn histogram(rows: &[(f64, usize)], k: usize) -> Vec<usize> {
    let mut h = vec![0; k];
    for &(_, c) in rows {
        h[c] += 1;
    }
    h
}

fn leaf(rows: &[(f64, usize)], labels: &[f64]) -> Node {
    let h = histogram(rows, labels.len());
    // Most frequent label; ties go to the smaller label.
    let mut best = 0;
    for (i, &c) in h.iter().enumerate() {
        if c > h[best] {
            best = i;
        }
    }
    Node::Leaf {
        label: labels[best],
        counts: labels
            .iter()
            .zip(&h)
            .filter(|(_, &c)| c > 0)
            .map(|(&l, &c)| (l, c))
            .collect(),
    }
}

fn grow(rows: &[(f64, usize)], labels: &[f64], params: &TreeParams, depth: usize) -> Node {
    let k = labels.len();
    let total = histogram(rows, k);
    let parent = gini(&total);
    let n = rows.len();
    if depth >= params.max_depth || parent == 0.0 || n < 2 * params.min_leaf {
        return leaf(rows, labels);
    }
    let mut left = vec![0usize; k];
    let mut best: Option<(f64, usize, f64)> = None;
    for i in 0..n - 1 {
        left[rows[i].1] += 1;
        let nl = i + 1;
        if rows[i].0 == rows[i + 1].0 || nl < params.min_leaf || n - nl < params.min_leaf {
            continue;
        }
        let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
        let score = (nl as f64 * gini(&left) + (n - nl) as f64 * gini(&right)) / n as f64;
        if best.is_none_or(|(s, _, _)| score < s) {
            best = Some((score, nl, 0.5 * (rows[i].0 + rows[i + 1].0)));
        }
    }
    match best {
        Some((score, nl, threshold)) if score < parent => Node::Split {
            feature: 0,
            threshold,
            left: Box::new(grow(&rows[..nl], labels, params, depth + 1)),
            right: Box::new(grow(&rows[nl..], labels, params, depth + 1)),
        },
        _ => leaf(rows, labels),
    }
}

/// Reads the leaves left to right as `(low, high]` INR intervals and merges
/// neighbours with equal actions. Rows carry no one-time actions.
pub fn tree_to_table(tree: &DecisionTree) -> Result<ProtocolTable> {
    fn walk(n: &Node, low: f64, high: f64, out: &mut Vec<ProtocolRow>) -> Result<()> {
        match n {
            Node::Leaf { label, .. } => {
                match out.last_mut() {
                    Some(prev) if prev.percent_change == *label => prev.inr_high = high,
                    _ => out.push(ProtocolRow {
                        inr_low: low,
                        inr_high: high,
                        percent_change: *label,
                        one_time_action: OneTimeAction::None,
                    }),
                }
                Ok(())
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature != 0 {
                    return Err(Error::Unsupported(format!(
                        "tree splits on feature {feature}; only INR trees convert to tables"
                    )));
                }
                walk(left, low, threshold.clamp(low, high), out)?;
                walk(right, threshold.clamp(low, high), high, out)
            }
        }
    }
    let mut rows = Vec::new();
    walk(&tree.root, 0.0, f64::INFINITY, &mut rows)?;
    rows.retain(|r| r.inr_high > r.inr_low);
    ProtocolTable::new(rows)
}

fn percent_label(p: f64) -> String {
    let v = (p * 1000.0).round() / 10.0;
    if v > 0.0 {
        format!("+{v}%")
    } else {
        format!("{v}%")
    }
}

/// Markdown card: one row per INR range with the dose change.
pub fn protocol_card(table: &ProtocolTable, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {title}\n");
    let _ = writeln!(s, "| INR Range | Dose Change |");
    let _ = writeln!(s, "|:--|--:|");
    let n = table.rows().len();
    for (i, r) in table.rows().iter().enumerate() {
        let range = if n == 1 {
            "any INR".to_string()
        } else if i == 0 {
            format!("INR ≤ {:.2}", r.inr_high)
        } else if i == n - 1 {
            format!("{:.2} < INR", r.inr_low)
        } else {
            format!("{:.2} < INR ≤ {:.2}", r.inr_low, r.inr_high)
        };
        let _ = writeln!(s, "| {range} | {} |", percent_label(r.percent_change));
    }
    s
}

/// Share of points where table and tree agree.
pub fn table_tree_agreement(table: &ProtocolTable, tree: &DecisionTree, points: &[f64]) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    let hits = points
        .iter()
        .filter(|&&x| table.lookup(x).percent_change == tree.predict(x))
        .count();
    hits as f64 / points.len() as f64
}
