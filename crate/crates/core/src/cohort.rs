//! Virtual patient generation.
//!
//! Covariates are drawn independently from the published marginal
//! distributions of the virtual-patient population. Continuous covariates are
//! normal draws clipped to their plausible ranges; categoricals are drawn from
//! the listed prevalences.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pkpd::{IivSpec, PhysiologyEffects};
use crate::rng::{self, RandomStream};

pub const AGE_MEAN: f64 = 67.3;
pub const AGE_SD: f64 = 14.43;
pub const AGE_RANGE: (f64, f64) = (18.0, 100.0);
pub const WEIGHT_MEAN_LB: f64 = 199.24;
pub const WEIGHT_SD_LB: f64 = 54.71;
pub const WEIGHT_RANGE_LB: (f64, f64) = (70.0, 500.0);
pub const HEIGHT_MEAN_IN: f64 = 66.78;
pub const HEIGHT_SD_IN: f64 = 4.31;
pub const HEIGHT_RANGE_IN: (f64, f64) = (45.0, 85.0);

pub const P_FEMALE: f64 = 0.5314;
pub const P_TOBACCO: f64 = 0.0966;
pub const P_AMIODARONE: f64 = 0.1154;
pub const P_FLUVASTATIN: f64 = 0.0003;

/// White, Black, Asian, American Indian/Alaskan, Pacific Islander (percent).
pub const RACE_PERCENT: [f64; 5] = [95.18, 4.25, 0.39, 0.18, 0.0001];
/// *1/*1, *1/*2, *1/*3, *2/*2, *2/*3, *3/*3. The last entry is an assumed 2e-4.
pub const CYP2C9_PROB: [f64; 6] = [0.6739, 0.1486, 0.0925, 0.0651, 0.0197, 0.0002];
/// G/G, G/A, A/A.
pub const VKORC1_PROB: [f64; 3] = [0.3837, 0.4418, 0.1745];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    Asian,
    AmericanIndianAlaskan,
    PacificIslander,
}

impl Race {
    pub const ALL: [Race; 5] = [
        Race::White,
        Race::Black,
        Race::Asian,
        Race::AmericanIndianAlaskan,
        Race::PacificIslander,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cyp2c9 {
    #[serde(rename = "*1/*1")]
    S11,
    #[serde(rename = "*1/*2")]
    S12,
    #[serde(rename = "*1/*3")]
    S13,
    #[serde(rename = "*2/*2")]
    S22,
    #[serde(rename = "*2/*3")]
    S23,
    #[serde(rename = "*3/*3")]
    S33,
}

impl Cyp2c9 {
    pub const ALL: [Cyp2c9; 6] = [
        Cyp2c9::S11,
        Cyp2c9::S12,
        Cyp2c9::S13,
        Cyp2c9::S22,
        Cyp2c9::S23,
        Cyp2c9::S33,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Number of *2 and *3 alleles.
    pub fn allele_counts(self) -> (u32, u32) {
        match self {
            Cyp2c9::S11 => (0, 0),
            Cyp2c9::S12 => (1, 0),
            Cyp2c9::S13 => (0, 1),
            Cyp2c9::S22 => (2, 0),
            Cyp2c9::S23 => (1, 1),
            Cyp2c9::S33 => (0, 2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cyp2c9::S11 => "*1/*1",
            Cyp2c9::S12 => "*1/*2",
            Cyp2c9::S13 => "*1/*3",
            Cyp2c9::S22 => "*2/*2",
            Cyp2c9::S23 => "*2/*3",
            Cyp2c9::S33 => "*3/*3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Vkorc1 {
    #[serde(rename = "G/G")]
    GG,
    #[serde(rename = "G/A")]
    GA,
    #[serde(rename = "A/A")]
    AA,
}

impl Vkorc1 {
    pub const ALL: [Vkorc1; 3] = [Vkorc1::GG, Vkorc1::GA, Vkorc1::AA];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn a_alleles(self) -> u32 {
        self as u32
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Vkorc1::GG => "G/G",
            Vkorc1::GA => "G/A",
            Vkorc1::AA => "A/A",
        }
    }
}

macro_rules! impl_str_enum {
    ($ty:ty, $($s:literal => $v:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($s => Ok($v),)+
                    other => Err(Error::Parse(format!(
                        "unknown {} value '{}'", stringify!($ty), other
                    ))),
                }
            }
        }
    };
}

impl_str_enum!(Cyp2c9,
    "*1/*1" => Cyp2c9::S11, "*1/*2" => Cyp2c9::S12, "*1/*3" => Cyp2c9::S13,
    "*2/*2" => Cyp2c9::S22, "*2/*3" => Cyp2c9::S23, "*3/*3" => Cyp2c9::S33);
impl_str_enum!(Vkorc1, "G/G" => Vkorc1::GG, "G/A" => Vkorc1::GA, "A/G" => Vkorc1::GA, "A/A" => Vkorc1::AA);
impl_str_enum!(Sex, "female" => Sex::Female, "male" => Sex::Male);
impl_str_enum!(Race,
    "white" => Race::White, "black" => Race::Black, "asian" => Race::Asian,
    "american_indian_alaskan" => Race::AmericanIndianAlaskan,
    "pacific_islander" => Race::PacificIslander);

impl fmt::Display for Cyp2c9 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Vkorc1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Female => "female",
            Sex::Male => "male",
        })
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Race::White => "white",
            Race::Black => "black",
            Race::Asian => "asian",
            Race::AmericanIndianAlaskan => "american_indian_alaskan",
            Race::PacificIslander => "pacific_islander",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: u64,
    /// Years.
    pub age: f64,
    /// Pounds.
    pub weight: f64,
    /// Inches.
    pub height: f64,
    pub sex: Sex,
    pub race: Race,
    pub tobacco: bool,
    pub amiodarone: bool,
    pub fluvastatin: bool,
    pub cyp2c9: Cyp2c9,
    pub vkorc1: Vkorc1,
    pub physiology: PhysiologyEffects,
}

impl Patient {
    pub fn weight_kg(&self) -> f64 {
        self.weight * 0.453_592_37
    }

    pub fn height_cm(&self) -> f64 {
        self.height * 2.54
    }

    /// Mosteller body surface area, m².
    pub fn body_surface_area(&self) -> f64 {
        (self.height_cm() * self.weight_kg() / 3600.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityClass {
    Normal,
    Sensitive,
    HighlySensitive,
}

impl SensitivityClass {
    pub const ALL: [SensitivityClass; 3] = [
        SensitivityClass::Normal,
        SensitivityClass::Sensitive,
        SensitivityClass::HighlySensitive,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SensitivityClass::Normal => "normal",
            SensitivityClass::Sensitive => "sensitive",
            SensitivityClass::HighlySensitive => "highly sensitive",
        }
    }
}

impl_str_enum!(SensitivityClass,
    "normal" => SensitivityClass::Normal,
    "sensitive" => SensitivityClass::Sensitive,
    "highly_sensitive" => SensitivityClass::HighlySensitive,
    "highly sensitive" => SensitivityClass::HighlySensitive);

/// Genotype pair → sensitivity class lookup, loaded from a data file.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    classes: [[SensitivityClass; 3]; 6],
}

const DEFAULT_SENSITIVITY: &str = include_str!("../data/sensitivity.csv");

impl Default for SensitivityMap {
    fn default() -> Self {
        Self::parse(DEFAULT_SENSITIVITY).expect("bundled sensitivity table is valid")
    }
}

impl SensitivityMap {
    /// Parses `cyp2c9,vkorc1,class` rows; `#` starts a comment. Every one of
    /// the 18 genotype pairs must appear exactly once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: HashMap<(Cyp2c9, Vkorc1), SensitivityClass> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with("cyp2c9") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!(
                    "sensitivity table line {}: expected 3 fields",
                    lineno + 1
                )));
            }
            let key = (fields[0].parse()?, fields[1].parse()?);
            if seen.insert(key, fields[2].parse()?).is_some() {
                return Err(Error::config(format!(
                    "sensitivity table: duplicate row for {} {}",
                    key.0, key.1
                )));
            }
        }
        let mut classes = [[SensitivityClass::Sensitive; 3]; 6];
        for c in Cyp2c9::ALL {
            for v in Vkorc1::ALL {
                classes[c.index()][v.index()] = *seen.get(&(c, v)).ok_or_else(|| {
                    Error::config(format!("sensitivity table: missing row for {c} {v}"))
                })?;
            }
        }
        Ok(Self { classes })
    }

    pub fn classify(&self, cyp2c9: Cyp2c9, vkorc1: Vkorc1) -> SensitivityClass {
        self.classes[cyp2c9.index()][vkorc1.index()]
    }
}

/// Sensitivity class of a patient under the bundled genotype table.
pub fn classify_sensitivity(p: &Patient) -> SensitivityClass {
    thread_local! {
        static MAP: SensitivityMap = SensitivityMap::default();
    }
    MAP.with(|m| m.classify(p.cyp2c9, p.vkorc1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub rebalance_cyp2c9: bool,
    #[serde(default = "default_min_variant_prob")]
    pub min_variant_prob: f64,
    #[serde(default)]
    pub iiv: IivSpec,
}

fn default_min_variant_prob() -> f64 {
    0.1
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            size: 2000,
            seed: 0,
            rebalance_cyp2c9: false,
            min_variant_prob: default_min_variant_prob(),
            iiv: IivSpec::default(),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::config("cohort size must be positive"));
        }
        if self.rebalance_cyp2c9 {
            cyp2c9_distribution(true, self.min_variant_prob)?;
        }
        Ok(())
    }
}

/// CYP2C9 genotype probabilities, optionally rebalanced so every variant
/// has at least `min_prob`, with *1/*1 absorbing the deficit.
pub fn cyp2c9_distribution(rebalance: bool, min_prob: f64) -> Result<[f64; 6]> {
    let mut probs = CYP2C9_PROB;
    if !rebalance {
        return Ok(probs);
    }
    if !(0.0..=1.0).contains(&min_prob) {
        return Err(Error::config(format!(
            "min_variant_prob {min_prob} outside [0, 1]"
        )));
    }
    for p in probs.iter_mut().skip(1) {
        *p = p.max(min_prob);
    }
    let rest: f64 = probs[1..].iter().sum();
    probs[0] = 1.0 - rest;
    if probs[0] < min_prob {
        return Err(Error::config(format!(
            "min_variant_prob {min_prob} too large: *1/*1 would drop to {:.4}",
            probs[0]
        )));
    }
    Ok(probs)
}

fn categorical(rng: &mut RandomStream, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn clipped_normal(rng: &mut RandomStream, mean: f64, sd: f64, range: (f64, f64)) -> f64 {
    let n = Normal::new(mean, sd).expect("valid normal");
    n.sample(rng).clamp(range.0, range.1)
}

/// Draws one patient. Consumes a fixed number of draws from `rng` for the
/// covariates, then samples the hidden physiology.
pub fn sample_patient(rng: &mut RandomStream, cfg: &CohortConfig, id: u64) -> Result<Patient> {
    let cyp_probs = cyp2c9_distribution(cfg.rebalance_cyp2c9, cfg.min_variant_prob)?;
    let age = clipped_normal(rng, AGE_MEAN, AGE_SD, AGE_RANGE);
    let weight = clipped_normal(rng, WEIGHT_MEAN_LB, WEIGHT_SD_LB, WEIGHT_RANGE_LB);
    let height = clipped_normal(rng, HEIGHT_MEAN_IN, HEIGHT_SD_IN, HEIGHT_RANGE_IN);
    let sex = if rng.random::<f64>() < P_FEMALE {
        Sex::Female
    } else {
        Sex::Male
    };
    let race = Race::ALL[categorical(rng, &RACE_PERCENT)];
    let tobacco = rng.random::<f64>() < P_TOBACCO;
    let amiodarone = rng.random::<f64>() < P_AMIODARONE;
    let fluvastatin = rng.random::<f64>() < P_FLUVASTATIN;
    let cyp2c9 = Cyp2c9::ALL[categorical(rng, &cyp_probs)];
    let vkorc1 = Vkorc1::ALL[categorical(rng, &VKORC1_PROB)];
    let physiology = PhysiologyEffects::sample(rng, &cfg.iiv);
    Ok(Patient {
        id,
        age,
        weight,
        height,
        sex,
        race,
        tobacco,
        amiodarone,
        fluvastatin,
        cyp2c9,
        vkorc1,
        physiology,
    })
}

/// Generates `cfg.size` patients with ids `0..size` from the cohort substream
/// of `cfg.seed`.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Vec<Patient>> {
    generate_cohort_with_ids(cfg, 0, &[])
}

/// Like [`generate_cohort`], drawing from the cohort substream keyed by
/// `stream_index` and numbering patients from `first_id`.
pub fn generate_cohort_with_ids(
    cfg: &CohortConfig,
    first_id: u64,
    stream_index: &[u64],
) -> Result<Vec<Patient>> {
    cfg.validate()?;
    let mut rng = rng::substream(cfg.seed, rng::COHORT, stream_index);
    (0..cfg.size as u64)
        .map(|i| sample_patient(&mut rng, cfg, first_id + i))
        .collect()
}

const CSV_HEADER: [&str; 15] = [
    "id",
    "age",
    "weight_lb",
    "height_in",
    "sex",
    "race",
    "tobacco",
    "amiodarone",
    "fluvastatin",
    "cyp2c9",
    "vkorc1",
    "clearance_multiplier",
    "volume_multiplier",
    "ec50_multiplier",
    "baseline_inr",
];

/// Writes a cohort as CSV. `metadata` lines are emitted first as `# key=value`
/// comments so the file records how it was produced.
pub fn write_cohort_csv<W: Write>(
    mut out: W,
    patients: &[Patient],
    metadata: &[(&str, String)],
) -> Result<()> {
    for (k, v) in metadata {
        writeln!(out, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for p in patients {
        let ph = &p.physiology;
        w.write_record([
            p.id.to_string(),
            p.age.to_string(),
            p.weight.to_string(),
            p.height.to_string(),
            p.sex.to_string(),
            p.race.to_string(),
            p.tobacco.to_string(),
            p.amiodarone.to_string(),
            p.fluvastatin.to_string(),
            p.cyp2c9.to_string(),
            p.vkorc1.to_string(),
            ph.clearance_multiplier.to_string(),
            ph.volume_multiplier.to_string(),
            ph.ec50_multiplier.to_string(),
            ph.baseline_inr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Cohort file contents: metadata comment pairs and the patients.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortFile {
    pub metadata: Vec<(String, String)>,
    pub patients: Vec<Patient>,
}

impl CohortFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn read_cohort_csv<R: BufRead>(input: R) -> Result<CohortFile> {
    let mut metadata = Vec::new();
    let mut body = String::new();
    for line in input.lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                metadata.push((k.trim().to_string(), v.trim().to_string()));
            }
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse("unexpected cohort CSV header".into()));
    }
    let num = |s: &str, col: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Parse(format!("column {col}: {e}")))
    };
    let flag = |s: &str, col: &str| -> Result<bool> {
        s.parse::<bool>()
            .map_err(|e| Error::Parse(format!("column {col}: {e}")))
    };
    let mut patients = Vec::new();
    for rec in reader.records() {
        let r = rec?;
        patients.push(Patient {
            id: r[0]
                .parse()
                .map_err(|e| Error::Parse(format!("column id: {e}")))?,
            age: num(&r[1], "age")?,
            weight: num(&r[2], "weight_lb")?,
            height: num(&r[3], "height_in")?,
            sex: r[4].parse()?,
            race: r[5].parse()?,
            tobacco: flag(&r[6], "tobacco")?,
            amiodarone: flag(&r[7], "amiodarone")?,
            fluvastatin: flag(&r[8], "fluvastatin")?,
            cyp2c9: r[9].parse()?,
            vkorc1: r[10].parse()?,
            physiology: PhysiologyEffects {
                clearance_multiplier: num(&r[11], "clearance_multiplier")?,
                volume_multiplier: num(&r[12], "volume_multiplier")?,
                ec50_multiplier: num(&r[13], "ec50_multiplier")?,
                baseline_inr: num(&r[14], "baseline_inr")?,
            },
        });
    }
    Ok(CohortFile { metadata, patients })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(n: usize, rebalance: bool) -> Vec<Patient> {
        let cfg = CohortConfig {
            size: n,
            seed: 11,
            rebalance_cyp2c9: rebalance,
            ..CohortConfig::default()
        };
        generate_cohort(&cfg).unwrap()
    }

    #[test]
    fn rebalanced_distribution_matches_published_values() {
        let p = cyp2c9_distribution(true, 0.1).unwrap();
        let expected = [0.4514, 0.1486, 0.1, 0.1, 0.1, 0.1];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn natural_distribution_sums_to_one() {
        let p = cyp2c9_distribution(false, 0.1).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[5], 2.0e-4);
    }

    #[test]
    fn oversized_min_prob_rejected() {
        assert!(cyp2c9_distribution(true, 0.2).is_err());
        assert!(cyp2c9_distribution(true, 1.5).is_err());
    }

    #[test]
    fn rebalanced_never_below_natural_or_minimum() {
        for m in [0.0, 0.01, 0.05, 0.1, 0.15] {
            let p = cyp2c9_distribution(true, m).unwrap();
            for k in 1..6 {
                assert!(p[k] >= m && p[k] >= CYP2C9_PROB[k]);
            }
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_bounds_hold_on_many_draws() {
        for p in draws(100_000, false) {
            assert!((18.0..=100.0).contains(&p.age));
            assert!((70.0..=500.0).contains(&p.weight));
            assert!((45.0..=85.0).contains(&p.height));
        }
    }

    // Monte Carlo oracle for the clipped-normal mean, computed independently
    // of the sampler with a seeded Box-Muller transform.
    fn clipped_mean_oracle(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
        let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let n = 400_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let u1 = next().max(1e-300);
            let u2 = next();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            acc += (mean + sd * z).clamp(lo, hi);
        }
        acc / n as f64
    }

    #[test]
    fn empirical_age_mean_matches_clipped_normal() {
        let oracle = clipped_mean_oracle(AGE_MEAN, AGE_SD, 18.0, 100.0);
        assert!((oracle - 67.3).abs() < 0.3, "oracle {oracle}");
        let ps = draws(100_000, false);
        let mean = ps.iter().map(|p| p.age).sum::<f64>() / ps.len() as f64;
        assert!((mean - oracle).abs() < 0.3, "mean {mean} oracle {oracle}");
    }

    fn within_three_se(count: usize, n: usize, p: f64) -> bool {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let f = count as f64 / n as f64;
        (f - p).abs() <= 3.0 * se + 1e-12
    }

    #[test]
    fn categorical_frequencies_converge() {
        let n = 100_000;
        let ps = draws(n, false);
        for (k, g) in Cyp2c9::ALL.iter().enumerate() {
            let c = ps.iter().filter(|p| p.cyp2c9 == *g).count();
            assert!(within_three_se(c, n, CYP2C9_PROB[k]), "{g}: {c}");
        }
        for (k, g) in Vkorc1::ALL.iter().enumerate() {
            let c = ps.iter().filter(|p| p.vkorc1 == *g).count();
            assert!(within_three_se(c, n, VKORC1_PROB[k]), "{g}: {c}");
        }
        let total: f64 = RACE_PERCENT.iter().sum();
        for (k, r) in Race::ALL.iter().enumerate() {
            let c = ps.iter().filter(|p| p.race == *r).count();
            assert!(within_three_se(c, n, RACE_PERCENT[k] / total), "{r}: {c}");
        }
        let female = ps.iter().filter(|p| p.sex == Sex::Female).count();
        assert!(within_three_se(female, n, P_FEMALE));
        let amio = ps.iter().filter(|p| p.amiodarone).count();
        assert!(within_three_se(amio, n, P_AMIODARONE));
        let tob = ps.iter().filter(|p| p.tobacco).count();
        assert!(within_three_se(tob, n, P_TOBACCO));
    }

    #[test]
    fn rebalanced_frequencies_converge() {
        let n = 100_000;
        let ps = draws(n, true);
        let probs = cyp2c9_distribution(true, 0.1).unwrap();
        for (k, g) in Cyp2c9::ALL.iter().enumerate() {
            let c = ps.iter().filter(|p| p.cyp2c9 == *g).count();
            assert!(within_three_se(c, n, probs[k]), "{g}: {c}");
        }
    }

    #[test]
    fn test_sized_cohort_has_natural_wild_type_fraction() {
        let ps = draws(2000, false);
        assert_eq!(ps.len(), 2000);
        let f = ps.iter().filter(|p| p.cyp2c9 == Cyp2c9::S11).count() as f64 / 2000.0;
        assert!((f - 0.674).abs() < 0.02, "{f}");
    }

    #[test]
    fn empty_cohort_rejected() {
        let cfg = CohortConfig {
            size: 0,
            ..CohortConfig::default()
        };
        assert!(matches!(generate_cohort(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn cohorts_are_deterministic() {
        assert_eq!(draws(50, true), draws(50, true));
        let cfg = CohortConfig::default();
        let mut a = rng::substream(3, rng::COHORT, &[]);
        let mut b = rng::substream(3, rng::COHORT, &[]);
        assert_eq!(
            sample_patient(&mut a, &cfg, 0).unwrap(),
            sample_patient(&mut b, &cfg, 0).unwrap()
        );
    }

    #[test]
    fn sensitivity_mapping_anchors() {
        let map = SensitivityMap::default();
        assert_eq!(map.classify(Cyp2c9::S11, Vkorc1::GG), SensitivityClass::Normal);
        assert_eq!(map.classify(Cyp2c9::S12, Vkorc1::GG), SensitivityClass::Normal);
        assert_eq!(
            map.classify(Cyp2c9::S33, Vkorc1::AA),
            SensitivityClass::HighlySensitive
        );
        assert_eq!(
            map.classify(Cyp2c9::S33, Vkorc1::GG),
            SensitivityClass::HighlySensitive
        );
        assert_eq!(
            map.classify(Cyp2c9::S13, Vkorc1::AA),
            SensitivityClass::HighlySensitive
        );
        assert_eq!(map.classify(Cyp2c9::S11, Vkorc1::AA), SensitivityClass::Sensitive);
        assert_eq!(map.classify(Cyp2c9::S13, Vkorc1::GG), SensitivityClass::Sensitive);
    }

    #[test]
    fn sensitivity_table_rejects_missing_rows() {
        assert!(SensitivityMap::parse("*1/*1,G/G,normal\n").is_err());
    }

    #[test]
    fn classify_is_deterministic() {
        let p = &draws(1, false)[0];
        assert_eq!(classify_sensitivity(p), classify_sensitivity(p));
    }

    #[test]
    fn csv_round_trip_preserves_patients() {
        let ps = draws(25, true);
        let mut buf = Vec::new();
        write_cohort_csv(&mut buf, &ps, &[("seed", "11".into())]).unwrap();
        let back = read_cohort_csv(buf.as_slice()).unwrap();
        assert_eq!(back.patients, ps);
        assert_eq!(back.meta("seed"), Some("11"));
    }
}
