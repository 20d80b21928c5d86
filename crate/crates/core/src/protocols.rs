//! Initial, adjustment and table-based maintenance dosing protocols.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cyp2c9, Patient, Race, Vkorc1};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::pkpd::MAX_DAILY_DOSE;

pub const INITIATION_DAYS: u32 = 4;
pub const MAINTENANCE_INTERVAL: u32 = 7;
pub const MAX_DURATION: u32 = 56;

/// Dose for the coming interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseDecision {
    /// Daily dose, mg.
    pub dose: f64,
    /// Days until the next decision.
    pub duration: u32,
    /// Dose given on the first day only (held or extra dose).
    pub first_day_dose: Option<f64>,
    /// Relative change applied to the previous dose, when the decision is one.
    pub percent_change: Option<f64>,
    /// Index into the discrete action space, for learned policies.
    pub action: Option<usize>,
}

impl DoseDecision {
    pub fn absolute(dose: f64, duration: u32) -> Self {
        Self {
            dose: clip_dose(dose),
            duration,
            first_day_dose: None,
            percent_change: None,
            action: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |d: f64| (0.0..=MAX_DAILY_DOSE).contains(&d);
        if !in_range(self.dose) || !self.first_day_dose.is_none_or(in_range) {
            return Err(Error::domain(format!("dose {} mg out of range", self.dose)));
        }
        if !(1..=MAX_DURATION).contains(&self.duration) {
            return Err(Error::domain(format!(
                "duration {} outside 1..={MAX_DURATION}",
                self.duration
            )));
        }
        Ok(())
    }
}

pub fn clip_dose(dose: f64) -> f64 {
    if dose.is_nan() {
        return 0.0;
    }
    dose.clamp(0.0, MAX_DAILY_DOSE)
}

/// Any mapping from what is known at a decision point to a dose.
pub trait DosingPolicy: Send + Sync {
    fn name(&self) -> String;

    /// Initiation dose for days 1-4. Defaults to the IWPC algorithm.
    fn initial(&self, patient: &Patient) -> DoseDecision {
        iwpc_initial_dose(patient)
    }

    /// Maintenance decision at `day` (the first one is day 5).
    fn decide(&self, obs: &Observation, patient: &Patient, day: u32) -> Result<DoseDecision>;

    /// Number of distinct decisions the protocol can make, when meaningful.
    fn possible_actions(&self) -> Option<usize> {
        None
    }
}

/// IWPC pharmacogenetic coefficients for the square root of the weekly dose.
pub mod iwpc {
    pub const INTERCEPT: f64 = 5.6044;
    pub const AGE_DECADES: f64 = -0.2614;
    pub const HEIGHT_CM: f64 = 0.0087;
    pub const WEIGHT_KG: f64 = 0.0128;
    pub const VKORC1_AG: f64 = -0.8677;
    pub const VKORC1_AA: f64 = -1.6974;
    pub const CYP2C9_12: f64 = -0.5211;
    pub const CYP2C9_13: f64 = -0.9357;
    pub const CYP2C9_22: f64 = -1.0616;
    pub const CYP2C9_23: f64 = -1.9206;
    pub const CYP2C9_33: f64 = -2.3312;
    pub const ASIAN: f64 = -0.1092;
    pub const BLACK: f64 = -0.2760;
    pub const MIXED_OR_MISSING_RACE: f64 = -0.1032;
    pub const ENZYME_INDUCER: f64 = 1.1816;
    pub const AMIODARONE: f64 = -0.5503;
}

/// Lenzini dose-revision coefficients for ln(weekly dose) at day 4-5.
pub mod lenzini {
    pub const INTERCEPT: f64 = 3.10894;
    pub const AGE: f64 = -0.00767;
    pub const LN_INR: f64 = -0.51611;
    pub const VKORC1_A_ALLELE: f64 = -0.23032;
    pub const CYP2C9_2_ALLELE: f64 = -0.14745;
    pub const CYP2C9_3_ALLELE: f64 = -0.3077;
    pub const BSA: f64 = 0.24597;
    pub const TARGET_INR: f64 = 0.26729;
    pub const AFRICAN_ORIGIN: f64 = -0.09644;
    pub const AMIODARONE: f64 = -0.1035;
    pub const FLUVASTATIN: f64 = -0.19275;
    pub const DOSE_DAY2: f64 = 0.0169;
    pub const DOSE_DAY3: f64 = 0.02018;
    pub const DOSE_DAY4: f64 = 0.01065;
    pub const TARGET: f64 = 2.5;
}

/// Weekly-dose square root predicted by the IWPC pharmacogenetic model.
pub fn iwpc_sqrt_weekly_dose(p: &Patient) -> f64 {
    use iwpc::*;
    let decades = (p.age / 10.0).floor();
    let vk = match p.vkorc1 {
        Vkorc1::GG => 0.0,
        Vkorc1::GA => VKORC1_AG,
        Vkorc1::AA => VKORC1_AA,
    };
    let cyp = match p.cyp2c9 {
        Cyp2c9::S11 => 0.0,
        Cyp2c9::S12 => CYP2C9_12,
        Cyp2c9::S13 => CYP2C9_13,
        Cyp2c9::S22 => CYP2C9_22,
        Cyp2c9::S23 => CYP2C9_23,
        Cyp2c9::S33 => CYP2C9_33,
    };
    let race = match p.race {
        Race::White => 0.0,
        Race::Asian => ASIAN,
        Race::Black => BLACK,
        Race::AmericanIndianAlaskan | Race::PacificIslander => MIXED_OR_MISSING_RACE,
    };
    let amio = if p.amiodarone { AMIODARONE } else { 0.0 };
    INTERCEPT + AGE_DECADES * decades + HEIGHT_CM * p.height_cm() + WEIGHT_KG * p.weight_kg()
        + vk
        + cyp
        + race
        + amio
}

/// IWPC initiation dose for the first four days.
pub fn iwpc_initial_dose(p: &Patient) -> DoseDecision {
    let root = iwpc_sqrt_weekly_dose(p).max(0.0);
    DoseDecision::absolute(root * root / 7.0, INITIATION_DAYS)
}

/// Lenzini one-time dose revision on day 5 from the day-4 INR and the
/// initiation doses.
pub fn lenzini_adjust(obs: &Observation, p: &Patient) -> DoseDecision {
    use lenzini::*;
    let (c2, c3) = p.cyp2c9.allele_counts();
    let dose = obs.dose_previous;
    let ln_weekly = INTERCEPT
        + AGE * p.age
        + LN_INR * obs.inr_current.max(1e-6).ln()
        + VKORC1_A_ALLELE * p.vkorc1.a_alleles() as f64
        + CYP2C9_2_ALLELE * c2 as f64
        + CYP2C9_3_ALLELE * c3 as f64
        + BSA * p.body_surface_area()
        + TARGET_INR * TARGET
        + if p.race == Race::Black { AFRICAN_ORIGIN } else { 0.0 }
        + if p.amiodarone { AMIODARONE } else { 0.0 }
        + if p.fluvastatin { FLUVASTATIN } else { 0.0 }
        + (DOSE_DAY2 + DOSE_DAY3 + DOSE_DAY4) * dose;
    DoseDecision::absolute(ln_weekly.exp() / 7.0, MAINTENANCE_INTERVAL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneTimeAction {
    None,
    SkipDose,
    ExtraDose,
}

impl fmt::Display for OneTimeAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OneTimeAction::None => "none",
            OneTimeAction::SkipDose => "skip_dose",
            OneTimeAction::ExtraDose => "extra_dose",
        })
    }
}

impl FromStr for OneTimeAction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "" => Ok(OneTimeAction::None),
            "skip_dose" => Ok(OneTimeAction::SkipDose),
            "extra_dose" => Ok(OneTimeAction::ExtraDose),
            other => Err(Error::Parse(format!("unknown one-time action '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRow {
    /// Exclusive lower INR bound.
    pub inr_low: f64,
    /// Inclusive upper INR bound.
    pub inr_high: f64,
    pub percent_change: f64,
    pub one_time_action: OneTimeAction,
}

/// INR intervals partitioning (0, ∞), each mapped to a dose change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTable {
    rows: Vec<ProtocolRow>,
}

impl ProtocolTable {
    pub fn new(rows: Vec<ProtocolRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::config("protocol table has no rows"));
        }
        if rows[0].inr_low != 0.0 {
            return Err(Error::config("protocol table must start at INR 0"));
        }
        if rows.last().unwrap().inr_high != f64::INFINITY {
            return Err(Error::config("protocol table must end at INR inf"));
        }
        for (i, r) in rows.iter().enumerate() {
            if !(r.inr_low < r.inr_high) {
                return Err(Error::config(format!(
                    "row {}: empty interval ({}, {}]",
                    i + 1,
                    r.inr_low,
                    r.inr_high
                )));
            }
            if !r.percent_change.is_finite() || r.percent_change < -1.0 {
                return Err(Error::config(format!(
                    "row {}: invalid percent change {}",
                    i + 1,
                    r.percent_change
                )));
            }
            if i > 0 {
                let prev = rows[i - 1].inr_high;
                if prev < r.inr_low {
                    return Err(Error::config(format!(
                        "gap between {prev} and {} in protocol table",
                        r.inr_low
                    )));
                }
                if prev > r.inr_low {
                    return Err(Error::config(format!(
                        "rows overlap at {} in protocol table",
                        r.inr_low
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ProtocolRow] {
        &self.rows
    }

    /// The row whose interval (low, high] contains `inr`.
    pub fn lookup(&self, inr: f64) -> &ProtocolRow {
        let idx = self.rows.partition_point(|r| r.inr_high < inr);
        &self.rows[idx.min(self.rows.len() - 1)]
    }

    /// Count of distinct (percent change, one-time action) decisions.
    pub fn distinct_decisions(&self) -> usize {
        let mut seen: Vec<(f64, OneTimeAction)> = Vec::new();
        for r in &self.rows {
            if !seen
                .iter()
                .any(|(p, a)| *p == r.percent_change && *a == r.one_time_action)
            {
                seen.push((r.percent_change, r.one_time_action));
            }
        }
        seen.len()
    }

    pub fn max_routine_change(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.percent_change.abs())
            .fold(0.0, f64::max)
    }

    /// Parses `low,high,percent_change,one_time_action` rows. `#` starts a
    /// comment; `inf` denotes the open upper end.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 && f.len() != 3 {
                return Err(Error::Parse(format!(
                    "protocol line {}: expected 4 fields",
                    lineno + 1
                )));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("protocol line {}: {e}", lineno + 1)))
            };
            rows.push(ProtocolRow {
                inr_low: num(f[0])?,
                inr_high: num(f[1])?,
                percent_change: num(f[2])?,
                one_time_action: f.get(3).copied().unwrap_or("none").parse()?,
            });
        }
        Self::new(rows)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_string(&self, header: &[String]) -> String {
        let mut out = String::new();
        for h in header {
            out.push_str("# ");
            out.push_str(h);
            out.push('\n');
        }
        out.push_str("# low (exclusive), high (inclusive), percent change, one-time action\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.inr_low, r.inr_high, r.percent_change, r.one_time_action
            ));
        }
        out
    }

    pub fn aurora() -> Self {
        Self::parse(include_str!("../data/aurora.csv")).expect("bundled Aurora table is valid")
    }

    pub fn intermountain() -> Self {
        Self::parse(include_str!("../data/intermountain.csv"))
            .expect("bundled Intermountain table is valid")
    }
}

/// Applies a protocol table to an observation: percent change of the
/// previous dose, fixed 7-day interval, optional one-day hold or extra dose.
pub fn table_decide(table: &ProtocolTable, obs: &Observation) -> DoseDecision {
    let row = table.lookup(obs.inr_current);
    let dose = clip_dose(obs.dose_previous * (1.0 + row.percent_change));
    let first_day_dose = match row.one_time_action {
        OneTimeAction::None => None,
        OneTimeAction::SkipDose => Some(0.0),
        OneTimeAction::ExtraDose => Some(clip_dose(2.0 * dose)),
    };
    DoseDecision {
        dose,
        duration: MAINTENANCE_INTERVAL,
        first_day_dose,
        percent_change: Some(row.percent_change),
        action: None,
    }
}

/// IWPC initiation, optional Lenzini revision at the first maintenance
/// visit, then a maintenance table.
#[derive(Debug, Clone)]
pub struct TableProtocol {
    pub name: String,
    pub table: ProtocolTable,
    pub lenzini_first: bool,
}

impl TableProtocol {
    pub fn aurora() -> Self {
        Self {
            name: "aurora".into(),
            table: ProtocolTable::aurora(),
            lenzini_first: true,
        }
    }

    pub fn intermountain() -> Self {
        Self {
            name: "intermountain".into(),
            table: ProtocolTable::intermountain(),
            lenzini_first: true,
        }
    }

    /// A maintenance table used from the first decision onward.
    pub fn plain(name: impl Into<String>, table: ProtocolTable) -> Self {
        Self {
            name: name.into(),
            table,
            lenzini_first: false,
        }
    }
}

impl DosingPolicy for TableProtocol {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn decide(&self, obs: &Observation, patient: &Patient, day: u32) -> Result<DoseDecision> {
        if self.lenzini_first && day == INITIATION_DAYS + 1 {
            Ok(lenzini_adjust(obs, patient))
        } else {
            Ok(table_decide(&self.table, obs))
        }
    }

    /// One decision per INR range.
    fn possible_actions(&self) -> Option<usize> {
        Some(self.table.rows().len())
    }
}

/// IWPC initiation dose held fixed for the whole trial.
#[derive(Debug, Clone, Copy, Default)]
pub struct IwpcFixed;

impl DosingPolicy for IwpcFixed {
    fn name(&self) -> String {
        "iwpc+fixed".into()
    }

    fn decide(&self, obs: &Observation, _patient: &Patient, _day: u32) -> Result<DoseDecision> {
        Ok(DoseDecision {
            percent_change: Some(0.0),
            ..DoseDecision::absolute(obs.dose_previous, MAINTENANCE_INTERVAL)
        })
    }

    fn possible_actions(&self) -> Option<usize> {
        Some(1)
    }
}

/// A fixed daily dose from day 1, never changed.
#[derive(Debug, Clone, Copy)]
pub struct FixedDose {
    pub dose: f64,
}

impl DosingPolicy for FixedDose {
    fn name(&self) -> String {
        format!("fixed-{}mg", self.dose)
    }

    fn initial(&self, _patient: &Patient) -> DoseDecision {
        DoseDecision::absolute(self.dose, INITIATION_DAYS)
    }

    fn decide(&self, _obs: &Observation, _patient: &Patient, _day: u32) -> Result<DoseDecision> {
        Ok(DoseDecision {
            percent_change: Some(0.0),
            ..DoseDecision::absolute(self.dose, MAINTENANCE_INTERVAL)
        })
    }
}

/// Builtin baseline protocols by CLI name.
pub fn builtin(name: &str) -> Result<Box<dyn DosingPolicy>> {
    match name {
        "aurora" => Ok(Box::new(TableProtocol::aurora())),
        "intermountain" => Ok(Box::new(TableProtocol::intermountain())),
        "iwpc+fixed" | "iwpc-fixed" => Ok(Box::new(IwpcFixed)),
        other => Err(Error::config(format!("unknown builtin protocol '{other}'"))),
    }
}
