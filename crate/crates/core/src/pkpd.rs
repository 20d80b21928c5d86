//! Warfarin PK/PD response model.
//!
//! Each patient carries a small ODE system: a gut depot and a central
//! compartment for S-warfarin, and two transit chains of clotting-factor
//! activity driven by sigmoid-Emax inhibition. Doses are given at hour 0 of
//! each day and the INR is read at hour 24. Integration is fixed-step RK4.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cyp2c9, Patient, Vkorc1};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub const MAX_DAILY_DOSE: f64 = 15.0;

const BUNDLED_PARAMS: &str = include_str!("../data/pkpd_params.toml");

/// Hidden per-patient random effects, sampled once at patient creation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysiologyEffects {
    pub clearance_multiplier: f64,
    pub volume_multiplier: f64,
    pub ec50_multiplier: f64,
    pub baseline_inr: f64,
}

impl PhysiologyEffects {
    pub const NOMINAL: PhysiologyEffects = PhysiologyEffects {
        clearance_multiplier: 1.0,
        volume_multiplier: 1.0,
        ec50_multiplier: 1.0,
        baseline_inr: 1.0,
    };

    pub fn sample(rng: &mut RandomStream, iiv: &IivSpec) -> Self {
        let mut z = || -> f64 { rng.sample(StandardNormal) };
        let (zc, zv, ze, zb) = (z(), z(), z(), z());
        Self {
            clearance_multiplier: (iiv.clearance_sd * zc).exp(),
            volume_multiplier: (iiv.volume_sd * zv).exp(),
            ec50_multiplier: (iiv.ec50_sd * ze).exp(),
            // Drug-free INR stays near 1.
            baseline_inr: (iiv.baseline_sd * zb).exp().clamp(0.9, 1.1),
        }
    }
}

/// Log-scale standard deviations of the inter-individual random effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IivSpec {
    pub clearance_sd: f64,
    pub volume_sd: f64,
    pub ec50_sd: f64,
    pub baseline_sd: f64,
}

impl Default for IivSpec {
    fn default() -> Self {
        PkPdParams::default().iiv()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdParams {
    pub emax: f64,
    pub hill_gamma: f64,
    pub transit_mtt: [f64; 2],
    pub transit_counts: [usize; 2],
    pub inr_base: f64,
    pub inr_max: f64,
    pub inr_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variability {
    pub clearance_sd: f64,
    pub volume_sd: f64,
    pub ec50_sd: f64,
    pub baseline_sd: f64,
    pub measurement_noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PkPdParams {
    pub version: String,
    pub absorption_rate: f64,
    pub bioavailability: f64,
    pub s_enantiomer_fraction: f64,
    pub volume: f64,
    pub reference_age: f64,
    pub age_clearance_slope: f64,
    pub clearance_by_cyp2c9: BTreeMap<String, f64>,
    pub ec50_by_vkorc1: BTreeMap<String, f64>,
    pub pd: PdParams,
    pub variability: Variability,
}

impl Default for PkPdParams {
    fn default() -> Self {
        Self::parse(BUNDLED_PARAMS).expect("bundled PK/PD parameters are valid")
    }
}

impl PkPdParams {
    pub fn parse(text: &str) -> Result<Self> {
        let params: PkPdParams =
            toml::from_str(text).map_err(|e| Error::Parse(format!("PK/PD parameters: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("parameters serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("absorption_rate", self.absorption_rate),
            ("bioavailability", self.bioavailability),
            ("s_enantiomer_fraction", self.s_enantiomer_fraction),
            ("volume", self.volume),
            ("pd.hill_gamma", self.pd.hill_gamma),
            ("pd.inr_max", self.pd.inr_max),
            ("pd.inr_exponent", self.pd.inr_exponent),
            ("pd.transit_mtt[0]", self.pd.transit_mtt[0]),
            ("pd.transit_mtt[1]", self.pd.transit_mtt[1]),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.pd.emax) {
            return Err(Error::config("pd.emax must lie in [0, 1]"));
        }
        if self.pd.transit_counts.contains(&0) {
            return Err(Error::config("pd.transit_counts must be positive"));
        }
        for g in Cyp2c9::ALL {
            match self.clearance_by_cyp2c9.get(g.as_str()) {
                Some(v) if *v > 0.0 => {}
                _ => return Err(Error::config(format!("clearance_by_cyp2c9 missing {g}"))),
            }
        }
        for g in Vkorc1::ALL {
            match self.ec50_by_vkorc1.get(g.as_str()) {
                Some(v) if *v > 0.0 => {}
                _ => return Err(Error::config(format!("ec50_by_vkorc1 missing {g}"))),
            }
        }
        let v = &self.variability;
        for (name, sd) in [
            ("clearance_sd", v.clearance_sd),
            ("volume_sd", v.volume_sd),
            ("ec50_sd", v.ec50_sd),
            ("baseline_sd", v.baseline_sd),
            ("measurement_noise_sd", v.measurement_noise_sd),
        ] {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::config(format!("variability.{name} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn iiv(&self) -> IivSpec {
        IivSpec {
            clearance_sd: self.variability.clearance_sd,
            volume_sd: self.variability.volume_sd,
            ec50_sd: self.variability.ec50_sd,
            baseline_sd: self.variability.baseline_sd,
        }
    }

    /// Population clearance for a patient before random effects (L/h).
    pub fn typical_clearance(&self, p: &Patient) -> f64 {
        let base = self.clearance_by_cyp2c9[p.cyp2c9.as_str()];
        let age_factor = 1.0 - self.age_clearance_slope * (p.age - self.reference_age);
        base * age_factor.max(0.05)
    }
}

/// Daily INR readings over one simulated interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InrSeries {
    /// Physiological INR at hour 24 of each day.
    pub true_inr: Vec<f64>,
    /// Lab reading: true INR with multiplicative measurement error.
    pub measured_inr: Vec<f64>,
}

impl InrSeries {
    pub fn len(&self) -> usize {
        self.true_inr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_inr.is_empty()
    }

    pub fn last_measured(&self) -> Option<f64> {
        self.measured_inr.last().copied()
    }
}

/// A source of daily INR responses to a dosing schedule.
pub trait InrSimulator: Send + Sync {
    type State: Clone + Send;

    fn init_state(&self, patient: &Patient) -> Self::State;

    /// One INR measurement taken in the drug-free state before dosing starts.
    fn baseline_measurement(
        &self,
        state: &Self::State,
        patient: &Patient,
        rng: &mut RandomStream,
    ) -> f64;

    /// Gives `daily_dose` mg at the start of each of `days` days.
    fn advance(
        &self,
        state: &mut Self::State,
        patient: &Patient,
        daily_dose: f64,
        days: u32,
        rng: &mut RandomStream,
    ) -> Result<InrSeries>;
}

pub(crate) fn check_advance_args(daily_dose: f64, days: u32) -> Result<()> {
    if !(0.0..=MAX_DAILY_DOSE).contains(&daily_dose) {
        return Err(Error::domain(format!(
            "daily dose {daily_dose} mg outside [0, {MAX_DAILY_DOSE}]"
        )));
    }
    if days == 0 {
        return Err(Error::domain("interval must be at least one day"));
    }
    Ok(())
}

/// ODE state of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PkPdState {
    /// S-warfarin in the gut depot (mg).
    pub gut: f64,
    /// S-warfarin in the central compartment (mg).
    pub central: f64,
    /// Relative clotting-factor activity, chain 1 then chain 2.
    pub transit: Vec<f64>,
    pub clock_hours: f64,
}

impl PkPdState {
    fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + self.transit.len());
        v.push(self.gut);
        v.push(self.central);
        v.extend_from_slice(&self.transit);
        v
    }

    fn assign(&mut self, y: &[f64]) {
        self.gut = y[0];
        self.central = y[1];
        self.transit.copy_from_slice(&y[2..]);
    }
}

/// Patient-specific constants for the ODE right-hand side.
#[derive(Debug, Clone, Copy)]
struct Kinetics {
    ka: f64,
    ke: f64,
    volume: f64,
    ec50_pow: f64,
    gamma: f64,
    emax: f64,
    k1: f64,
    k2: f64,
    n1: usize,
}

impl Kinetics {
    fn concentration(&self, central: f64) -> f64 {
        (central / self.volume).max(0.0)
    }

    fn effect(&self, central: f64) -> f64 {
        let c = self.concentration(central);
        if c <= 0.0 {
            return 0.0;
        }
        let cg = c.powf(self.gamma);
        self.emax * cg / (self.ec50_pow + cg)
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let gut = y[0];
        let central = y[1];
        dy[0] = -self.ka * gut;
        dy[1] = self.ka * gut - self.ke * central;
        let synth = 1.0 - self.effect(central);
        let chain1 = &y[2..2 + self.n1];
        let chain2 = &y[2 + self.n1..];
        let (d1, d2) = dy[2..].split_at_mut(self.n1);
        for i in 0..chain1.len() {
            let input = if i == 0 { synth } else { chain1[i - 1] };
            d1[i] = self.k1 * (input - chain1[i]);
        }
        for i in 0..chain2.len() {
            let input = if i == 0 { synth } else { chain2[i - 1] };
            d2[i] = self.k2 * (input - chain2[i]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PkPdEngine {
    pub params: PkPdParams,
    /// RK4 step in hours; must divide 24.
    pub step_hours: f64,
    /// Multiplicative measurement noise on/off.
    pub measurement_noise: bool,
}

impl Default for PkPdEngine {
    fn default() -> Self {
        Self::new(PkPdParams::default())
    }
}

impl PkPdEngine {
    pub fn new(params: PkPdParams) -> Self {
        Self {
            params,
            step_hours: 1.0,
            measurement_noise: true,
        }
    }

    pub fn without_noise(mut self) -> Self {
        self.measurement_noise = false;
        self
    }

    pub fn with_step_hours(mut self, h: f64) -> Self {
        self.step_hours = h;
        self
    }

    fn kinetics(&self, p: &Patient) -> Kinetics {
        let pr = &self.params;
        let ph = &p.physiology;
        let cl = pr.typical_clearance(p) * ph.clearance_multiplier;
        let volume = pr.volume * ph.volume_multiplier;
        let ec50 = pr.ec50_by_vkorc1[p.vkorc1.as_str()] * ph.ec50_multiplier;
        Kinetics {
            ka: pr.absorption_rate,
            ke: cl / volume,
            volume,
            ec50_pow: ec50.powf(pr.pd.hill_gamma),
            gamma: pr.pd.hill_gamma,
            emax: pr.pd.emax,
            k1: pr.pd.transit_counts[0] as f64 / pr.pd.transit_mtt[0],
            k2: pr.pd.transit_counts[1] as f64 / pr.pd.transit_mtt[1],
            n1: pr.pd.transit_counts[0],
        }
    }

    /// Noise-free INR of a state.
    pub fn true_inr(&self, state: &PkPdState, p: &Patient) -> f64 {
        let n1 = self.params.pd.transit_counts[0];
        let a1 = state.transit[n1 - 1];
        let a2 = *state.transit.last().expect("nonempty chain");
        let activity = (a1 * a2).clamp(0.0, 1.0);
        let pd = &self.params.pd;
        let base = pd.inr_base * p.physiology.baseline_inr;
        base + pd.inr_max * (1.0 - activity).powf(pd.inr_exponent)
    }

    /// Plasma S-warfarin concentration (mg/L).
    pub fn concentration(&self, state: &PkPdState, p: &Patient) -> f64 {
        self.kinetics(p).concentration(state.central)
    }

    fn measure(&self, true_inr: f64, rng: &mut RandomStream) -> f64 {
        let sd = self.params.variability.measurement_noise_sd;
        if self.measurement_noise && sd > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            true_inr * (sd * z).exp()
        } else {
            true_inr
        }
    }

    fn steps_per_day(&self) -> Result<usize> {
        let steps = 24.0 / self.step_hours;
        if !(self.step_hours > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::config(format!(
                "step_hours {} must divide 24",
                self.step_hours
            )));
        }
        Ok(steps.round() as usize)
    }
}

#[allow(clippy::needless_range_loop)]
fn rk4_step(k: &Kinetics, y: &mut [f64], h: f64, s: &mut Scratch) {
    let n = y.len();
    k.rhs(y, &mut s.k1);
    for i in 0..n {
        s.tmp[i] = y[i] + 0.5 * h * s.k1[i];
    }
    k.rhs(&s.tmp, &mut s.k2);
    for i in 0..n {
        s.tmp[i] = y[i] + 0.5 * h * s.k2[i];
    }
    k.rhs(&s.tmp, &mut s.k3);
    for i in 0..n {
        s.tmp[i] = y[i] + h * s.k3[i];
    }
    k.rhs(&s.tmp, &mut s.k4);
    for i in 0..n {
        y[i] += h / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
        // Roundoff guard; the exact flow keeps every amount nonnegative.
        if y[i] < 0.0 {
            y[i] = 0.0;
        }
    }
}

struct Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

impl InrSimulator for PkPdEngine {
    type State = PkPdState;

    fn init_state(&self, _patient: &Patient) -> PkPdState {
        let n = self.params.pd.transit_counts[0] + self.params.pd.transit_counts[1];
        PkPdState {
            gut: 0.0,
            central: 0.0,
            transit: vec![1.0; n],
            clock_hours: 0.0,
        }
    }

    fn baseline_measurement(&self, state: &PkPdState, p: &Patient, rng: &mut RandomStream) -> f64 {
        self.measure(self.true_inr(state, p), rng)
    }

    fn advance(
        &self,
        state: &mut PkPdState,
        p: &Patient,
        daily_dose: f64,
        days: u32,
        rng: &mut RandomStream,
    ) -> Result<InrSeries> {
        check_advance_args(daily_dose, days)?;
        let steps = self.steps_per_day()?;
        let k = self.kinetics(p);
        let dose_s =
            daily_dose * self.params.bioavailability * self.params.s_enantiomer_fraction;
        let mut y = state.to_vec();
        let mut scratch = Scratch::new(y.len());
        let mut series = InrSeries {
            true_inr: Vec::with_capacity(days as usize),
            measured_inr: Vec::with_capacity(days as usize),
        };
        for _ in 0..days {
            y[0] += dose_s;
            for _ in 0..steps {
                rk4_step(&k, &mut y, self.step_hours, &mut scratch);
            }
            state.assign(&y);
            state.clock_hours += 24.0;
            let inr = self.true_inr(state, p);
            series.true_inr.push(inr);
            series.measured_inr.push(self.measure(inr, rng));
        }
        Ok(series)
    }
}

/// Synthetic engine that returns a fixed INR every day regardless of dose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantInrEngine {
    pub inr: f64,
}

impl InrSimulator for ConstantInrEngine {
    type State = ();

    fn init_state(&self, _patient: &Patient) {}

    fn baseline_measurement(&self, _: &(), _: &Patient, _: &mut RandomStream) -> f64 {
        self.inr
    }

    fn advance(
        &self,
        _state: &mut (),
        _patient: &Patient,
        daily_dose: f64,
        days: u32,
        _rng: &mut RandomStream,
    ) -> Result<InrSeries> {
        check_advance_args(daily_dose, days)?;
        Ok(InrSeries {
            true_inr: vec![self.inr; days as usize],
            measured_inr: vec![self.inr; days as usize],
        })
    }
}
