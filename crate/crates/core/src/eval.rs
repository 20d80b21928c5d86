//! Benchmarking of dosing policies by percent time in therapeutic range.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Patient, SensitivityClass, SensitivityMap};
use crate::env::{simulate_protocol, EnvConfig, Trajectory};
use crate::error::{Error, Result};
use crate::pkpd::InrSimulator;
use crate::protocols::DosingPolicy;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientResult {
    pub patient_id: u64,
    pub class: SensitivityClass,
    pub pttr: f64,
    pub decisions: usize,
    pub no_change_decisions: usize,
}

/// Mean and spread of per-patient PTTR (fractions) over one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation of per-patient PTTR.
    pub sd: f64,
    // Empty groups report mean and sd 0 and print as n/a.
}

impl GroupStats {
    fn of(group: &str, values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                group: group.to_string(),
                n: 0,
                mean: 0.0,
                sd: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            group: group.to_string(),
            n,
            mean,
            sd: var.sqrt(),
        }
    }
}

pub const ALL_GROUP: &str = "all";

pub const SD_FOOTER: &str = "SD is the standard deviation of per-patient PTTR across the group, \
in fraction units; the same value in percentage points is shown in brackets.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub protocol: String,
    /// Provenance: config hash, seeds, cohort description.
    pub metadata: BTreeMap<String, String>,
    /// normal, sensitive, highly sensitive, then all.
    pub groups: Vec<GroupStats>,
    pub possible_actions: Option<usize>,
    pub distinct_actions_used: usize,
    pub pct_no_change: f64,
    pub patients: Vec<PatientResult>,
}

impl EvaluationReport {
    pub fn group(&self, name: &str) -> Option<&GroupStats> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn overall(&self) -> &GroupStats {
        self.group(ALL_GROUP).expect("report always has the all group")
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("report: {e}")))
    }

    fn write_meta<W: Write>(&self, out: &mut W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}={v}")?;
        }
        Ok(())
    }

    /// Group summary as CSV with `# key=value` provenance lines.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        self.write_meta(&mut out)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["protocol", "group", "n", "mean_pttr", "sd_pttr"])?;
        for g in &self.groups {
            w.write_record([
                self.protocol.clone(),
                g.group.clone(),
                g.n.to_string(),
                g.mean.to_string(),
                g.sd.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_patients_csv<W: Write>(&self, mut out: W) -> Result<()> {
        self.write_meta(&mut out)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["patient_id", "class", "pttr", "decisions", "no_change_decisions"])?;
        for p in &self.patients {
            w.write_record([
                p.patient_id.to_string(),
                p.class.label().to_string(),
                p.pttr.to_string(),
                p.decisions.to_string(),
                p.no_change_decisions.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# PTTR: {}\n", self.protocol);
        let _ = writeln!(s, "| sensitivity | n | PTTR |");
        let _ = writeln!(s, "|:--|--:|--:|");
        for g in &self.groups {
            let _ = writeln!(s, "| {} | {} | {} |", g.group, g.n, format_cell(g));
        }
        let _ = writeln!(s);
        let possible = self
            .possible_actions
            .map(|p| p.to_string())
            .unwrap_or_else(|| "n/a".into());
        let _ = writeln!(s, "- possible actions: {possible}");
        let _ = writeln!(s, "- distinct actions used: {}", self.distinct_actions_used);
        let _ = writeln!(
            s,
            "- no-change decisions: {:.1}%",
            100.0 * self.pct_no_change
        );
        let _ = writeln!(s, "\n{SD_FOOTER}\n");
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "<!-- {k}={v} -->");
        }
        s
    }
}

/// `84.5% (0.09) [9.0 pp]`.
fn format_cell(g: &GroupStats) -> String {
    if g.n == 0 {
        return "n/a".into();
    }
    format!("{:.1}% ({:.2}) [{:.1} pp]", 100.0 * g.mean, g.sd, 100.0 * g.sd)
}

/// Runs `policy` on every patient. Measurement noise for patient `i` comes
/// from the substream keyed by `seed` and `i`, so two policies evaluated with
/// the same seed see the same noise.
pub fn evaluate<S: InrSimulator, P: DosingPolicy + ?Sized>(
    sim: &S,
    env: &EnvConfig,
    policy: &P,
    cohort: &[Patient],
    classes: &SensitivityMap,
    seed: u64,
    metadata: BTreeMap<String, String>,
) -> Result<(EvaluationReport, Vec<Trajectory>)> {
    if cohort.is_empty() {
        return Err(Error::domain("evaluation cohort is empty"));
    }
    let trajectories: Vec<Trajectory> = cohort
        .par_iter()
        .map(|p| simulate_protocol(sim, env, p, policy, rng::substream(seed, rng::MEASUREMENT, &[p.id])))
        .collect::<Result<_>>()?;
    let mut used = BTreeSet::new();
    let mut decisions = 0usize;
    let mut no_change = 0usize;
    let mut patients = Vec::with_capacity(cohort.len());
    for (p, t) in cohort.iter().zip(&trajectories) {
        let mut nc = 0;
        for r in &t.records {
            // A decision is its percent change together with any one-time
            // first-day override; absolute-dose recomputations are one kind.
            let one_time = r.first_day_dose.map(|d| d == 0.0);
            let key = (r.percent_change.map(f64::to_bits), one_time);
            if r.percent_change == Some(0.0) && one_time.is_none() {
                nc += 1;
            }
            used.insert(key);
        }
        decisions += t.records.len();
        no_change += nc;
        patients.push(PatientResult {
            patient_id: p.id,
            class: classes.classify(p.cyp2c9, p.vkorc1),
            pttr: t.pttr,
            decisions: t.records.len(),
            no_change_decisions: nc,
        });
    }
    let mut groups: Vec<GroupStats> = SensitivityClass::ALL
        .iter()
        .map(|c| {
            let v: Vec<f64> = patients.iter().filter(|r| r.class == *c).map(|r| r.pttr).collect();
            GroupStats::of(c.label(), &v)
        })
        .collect();
    let all: Vec<f64> = patients.iter().map(|r| r.pttr).collect();
    groups.push(GroupStats::of(ALL_GROUP, &all));
    let report = EvaluationReport {
        protocol: policy.name(),
        metadata,
        groups,
        possible_actions: policy.possible_actions(),
        distinct_actions_used: used.len(),
        pct_no_change: if decisions == 0 {
            0.0
        } else {
            no_change as f64 / decisions as f64
        },
        patients,
    };
    Ok((report, trajectories))
}

/// `patient_id,day,dose_mg,true_inr,measured_inr` for the first `limit`
/// trajectories, for external plotting.
pub fn write_plot_data<W: Write>(
    mut out: W,
    trajectories: &[Trajectory],
    limit: usize,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    for (k, v) in metadata {
        writeln!(out, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "day", "dose_mg", "true_inr", "measured_inr"])?;
    for t in trajectories.iter().take(limit) {
        for (i, ((d, ti), m)) in t
            .daily_dose
            .iter()
            .zip(&t.daily_true_inr)
            .zip(&t.daily_measured_inr)
            .enumerate()
        {
            w.write_record([
                t.patient_id.to_string(),
                (i + 1).to_string(),
                d.to_string(),
                ti.to_string(),
                m.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const ROW_LABELS: [&str; 4] = ["normal", "sensitive", "highly sensitive", ALL_GROUP];

/// Protocols side by side: one column per report.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub protocols: Vec<String>,
    /// (row label, one cell per protocol).
    pub rows: Vec<(String, Vec<Option<GroupStats>>)>,
    pub possible_actions: Vec<Option<usize>>,
}

pub fn compare(reports: &[EvaluationReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::domain("nothing to compare"));
    }
    Ok(ComparisonTable {
        protocols: reports.iter().map(|r| r.protocol.clone()).collect(),
        rows: ROW_LABELS
            .iter()
            .map(|&label| {
                (
                    label.to_string(),
                    reports.iter().map(|r| r.group(label).cloned()).collect(),
                )
            })
            .collect(),
        possible_actions: reports.iter().map(|r| r.possible_actions).collect(),
    })
}

/// Metadata keys that must agree for reports to be comparable.
pub const COHORT_KEYS: [&str; 3] = ["cohort_seed", "cohort_size", "eval_seed"];

/// Fails when reports were produced on different cohorts or noise streams.
pub fn check_same_cohort(reports: &[EvaluationReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        return Ok(());
    };
    for r in &reports[1..] {
        for k in COHORT_KEYS {
            if first.metadata.get(k) != r.metadata.get(k) {
                return Err(Error::config(format!(
                    "reports {:?} and {:?} differ in {k}: {:?} vs {:?}",
                    first.protocol,
                    r.protocol,
                    first.metadata.get(k),
                    r.metadata.get(k)
                )));
            }
        }
    }
    Ok(())
}

impl ComparisonTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| sensitivity | {} |", self.protocols.join(" | "));
        let _ = writeln!(s, "|:--|{}", "--:|".repeat(self.protocols.len()));
        for (label, cells) in &self.rows {
            let cells: Vec<String> = cells
                .iter()
                .map(|c| c.as_ref().map(format_cell).unwrap_or_else(|| "n/a".into()))
                .collect();
            let _ = writeln!(s, "| {label} | {} |", cells.join(" | "));
        }
        let pa: Vec<String> = self
            .possible_actions
            .iter()
            .map(|p| p.map(|v| v.to_string()).unwrap_or_else(|| "n/a".into()))
            .collect();
        let _ = writeln!(s, "| Possible Actions | {} |", pa.join(" | "));
        let _ = writeln!(s, "\n{SD_FOOTER}");
        s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "protocol", "n", "mean_pttr", "sd_pttr"])?;
        for (label, cells) in &self.rows {
            for (proto, cell) in self.protocols.iter().zip(cells) {
                let (n, m, sd) = cell
                    .as_ref()
                    .map(|g| (g.n.to_string(), g.mean.to_string(), g.sd.to_string()))
                    .unwrap_or_default();
                w.write_record([label.as_str(), proto, &n, &m, &sd])?;
            }
        }
        for (proto, pa) in self.protocols.iter().zip(&self.possible_actions) {
            let pa = pa.map(|v| v.to_string()).unwrap_or_default();
            w.write_record(["Possible Actions", proto, "", &pa, ""])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortConfig};
    use crate::pkpd::{ConstantInrEngine, PkPdEngine};
    use crate::protocols::{DosingPolicy, FixedDose, ProtocolTable, TableProtocol};

    fn cohort(n: usize, seed: u64) -> Vec<Patient> {
        generate_cohort(&CohortConfig {
            size: n,
            seed,
            ..CohortConfig::default()
        })
        .unwrap()
    }

    fn meta(seed: u64) -> BTreeMap<String, String> {
        [("cohort_seed", seed.to_string()), ("cohort_size", "40".into()), ("eval_seed", "1".into())]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    #[test]
    fn in_range_engine_gives_full_pttr() {
        let ps = cohort(30, 1);
        let (r, _) = evaluate(
            &ConstantInrEngine { inr: 2.4 },
            &EnvConfig::default(),
            &TableProtocol::aurora(),
            &ps,
            &SensitivityMap::default(),
            1,
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(r.overall().mean, 1.0);
        assert_eq!(r.overall().sd, 0.0);
    }

    #[test]
    fn class_means_recombine_to_overall() {
        let ps = cohort(200, 2);
        let (r, _) = evaluate(
            &PkPdEngine::default(),
            &EnvConfig::default(),
            &TableProtocol::aurora(),
            &ps,
            &SensitivityMap::default(),
            3,
            BTreeMap::new(),
        )
        .unwrap();
        let labels: Vec<&str> = r.groups.iter().map(|g| g.group.as_str()).collect();
        assert_eq!(labels, ROW_LABELS);
        let classes = &r.groups[..3];
        let n: usize = classes.iter().map(|g| g.n).sum();
        assert_eq!(n, 200);
        let weighted: f64 = classes
            .iter()
            .filter(|g| g.n > 0)
            .map(|g| g.n as f64 * g.mean)
            .sum::<f64>()
            / n as f64;
        assert!((weighted - r.overall().mean).abs() < 1e-12);
        assert!(r.groups.iter().filter(|g| g.n > 0).all(|g| (0.0..=1.0).contains(&g.mean) && g.sd >= 0.0));
        assert_eq!(r.possible_actions, Some(8));
        assert_eq!(TableProtocol::intermountain().possible_actions(), Some(11));
    }

    #[test]
    fn evaluation_is_reproducible() {
        let ps = cohort(25, 3);
        let run = || {
            evaluate(
                &PkPdEngine::default(),
                &EnvConfig::default(),
                &TableProtocol::intermountain(),
                &ps,
                &SensitivityMap::default(),
                9,
                meta(3),
            )
            .unwrap()
            .0
            .to_json()
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn comparison_rows_and_guard() {
        let ps = cohort(40, 4);
        let sim = PkPdEngine::default();
        let env = EnvConfig::default();
        let map = SensitivityMap::default();
        let table = ProtocolTable::parse("0,2.27,0.6\n2.27,2.94,0\n2.94,inf,-0.5\n").unwrap();
        let distilled = TableProtocol::plain("distilled", table);
        let (a, _) = evaluate(&sim, &env, &distilled, &ps, &map, 1, meta(4)).unwrap();
        let single = compare(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.protocols.len(), 1);
        assert_eq!(single.possible_actions, vec![Some(3)]);
        let labels: Vec<&str> = single.rows.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(labels, ["normal", "sensitive", "highly sensitive", "all"]);
        let (b, _) = evaluate(&sim, &env, &FixedDose { dose: 5.0 }, &ps, &map, 1, meta(4)).unwrap();
        assert!(check_same_cohort(&[a.clone(), b.clone()]).is_ok());
        let md = compare(&[a.clone(), b]).unwrap().to_markdown();
        assert!(md.contains("| Possible Actions | 3 |"));
        assert!(md.contains("percentage points"));
        let (c, _) = evaluate(&sim, &env, &distilled, &ps, &map, 1, meta(5)).unwrap();
        assert!(check_same_cohort(&[a, c]).is_err());
        assert!(compare(&[]).is_err());
    }

    #[test]
    fn json_round_trip_and_outputs() {
        let ps = cohort(10, 5);
        let (r, trajs) = evaluate(
            &PkPdEngine::default(),
            &EnvConfig::default(),
            &TableProtocol::aurora(),
            &ps,
            &SensitivityMap::default(),
            1,
            meta(5),
        )
        .unwrap();
        assert_eq!(EvaluationReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        let mut csv = Vec::new();
        r.write_summary_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("# cohort_seed=5\n"));
        assert_eq!(text.lines().filter(|l| l.starts_with("aurora")).count(), 4);
        let mut plot = Vec::new();
        write_plot_data(&mut plot, &trajs, 3, &BTreeMap::new()).unwrap();
        assert_eq!(String::from_utf8(plot).unwrap().lines().count(), 1 + 3 * 90);
        assert!(r.to_markdown().contains("| all | 10 |"));
        assert!(evaluate(
            &PkPdEngine::default(),
            &EnvConfig::default(),
            &TableProtocol::aurora(),
            &[],
            &SensitivityMap::default(),
            1,
            BTreeMap::new()
        )
        .is_err());
    }
}
