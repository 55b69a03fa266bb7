//! Biophysical safety constraints on stimulation patterns.
//!
//! Every constraint is expressed as a dimensionless proportion `quantity / limit`;
//! a proportion strictly greater than one is a violation, so a pattern sitting
//! exactly on a limit is safe.
//!
//! Canonical units: frequency Hz, pulse duration ms, amplitude µA, charge nC
//! (1 µA for 1 ms delivers 1 nC).

use serde::{Deserialize, Serialize};

use crate::model::StimulationPattern;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SafetyError {
    #[error("invalid stimulus on electrode {electrode}: {reason}")]
    InvalidStimulus { electrode: usize, reason: String },
    #[error("invalid safety limits: {0}")]
    InvalidLimits(String),
    #[error("cannot parse quantity {input:?}: {reason}")]
    Quantity { input: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    /// Pulse longer than half its period.
    #[serde(rename = "PI")]
    PhysicallyImpossible,
    /// Per-electrode charge.
    #[serde(rename = "CD")]
    ChargeDensity,
    /// Total instantaneous current.
    #[serde(rename = "IC")]
    InstantaneousCurrent,
    /// Number of simultaneously active electrodes.
    #[serde(rename = "AE")]
    ActiveElectrodes,
}

impl Constraint {
    pub const ALL: [Constraint; 4] = [
        Constraint::PhysicallyImpossible,
        Constraint::ChargeDensity,
        Constraint::InstantaneousCurrent,
        Constraint::ActiveElectrodes,
    ];
    /// Constraints evaluated once per pattern.
    pub const AGGREGATE: [Constraint; 2] = [Constraint::InstantaneousCurrent, Constraint::ActiveElectrodes];
    /// Constraints evaluated once per electrode.
    pub const ELECTRODE_WISE: [Constraint; 2] = [Constraint::PhysicallyImpossible, Constraint::ChargeDensity];

    pub fn code(self) -> &'static str {
        match self {
            Constraint::PhysicallyImpossible => "PI",
            Constraint::ChargeDensity => "CD",
            Constraint::InstantaneousCurrent => "IC",
            Constraint::ActiveElectrodes => "AE",
        }
    }
}

/// A single constraint evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationProportion {
    pub constraint: Constraint,
    pub proportion: f64,
    pub violated: bool,
}

impl ViolationProportion {
    fn new(constraint: Constraint, proportion: f64) -> Self {
        Self {
            constraint,
            proportion,
            violated: proportion > 1.0,
        }
    }
}

/// Limits in canonical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyLimits {
    /// Per-electrode charge limit, nC.
    pub charge_limit_nc: f64,
    /// Total instantaneous current limit, µA.
    pub current_limit_ua: f64,
    /// Maximum number of active electrodes.
    pub active_limit: f64,
    /// An electrode is active when its amplitude exceeds this (µA).
    #[serde(default)]
    pub activity_epsilon_ua: f64,
}

impl SafetyLimits {
    pub fn new(charge_limit_nc: f64, current_limit_ua: f64, active_limit: f64) -> Result<Self, SafetyError> {
        let limits = Self {
            charge_limit_nc,
            current_limit_ua,
            active_limit,
            activity_epsilon_ua: 0.0,
        };
        limits.validate()?;
        Ok(limits)
    }

    /// Epiretinal array: 0.628 µC per electrode, 6 mA total, 100 active electrodes.
    pub fn retinal() -> Self {
        Self {
            charge_limit_nc: 628.0,
            current_limit_ua: 6000.0,
            active_limit: 100.0,
            activity_epsilon_ua: 0.0,
        }
    }

    /// Utah array: 20.4 nC per electrode, 3.6 mA total, 30 active electrodes.
    pub fn cortical() -> Self {
        Self {
            charge_limit_nc: 20.4,
            current_limit_ua: 3600.0,
            active_limit: 30.0,
            activity_epsilon_ua: 0.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "retinal" => Some(Self::retinal()),
            "cortical" => Some(Self::cortical()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        for (name, v) in [
            ("charge limit", self.charge_limit_nc),
            ("current limit", self.current_limit_ua),
            ("active-electrode limit", self.active_limit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SafetyError::InvalidLimits(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.activity_epsilon_ua.is_finite() && self.activity_epsilon_ua >= 0.0) {
            return Err(SafetyError::InvalidLimits(format!(
                "activity epsilon must be >= 0, got {}",
                self.activity_epsilon_ua
            )));
        }
        Ok(())
    }
}

/// Parses a charge such as `"0.628 uC"` or `"20.4 nC"` into nC.
pub fn parse_charge_nc(input: &str) -> Result<f64, SafetyError> {
    parse_quantity(
        input,
        &[("nC", 1.0), ("uC", 1e3), ("µC", 1e3), ("mC", 1e6), ("pC", 1e-3)],
    )
}

/// Parses a current such as `"6 mA"` or `"3600 uA"` into µA.
pub fn parse_current_ua(input: &str) -> Result<f64, SafetyError> {
    parse_quantity(
        input,
        &[("uA", 1.0), ("µA", 1.0), ("mA", 1e3), ("nA", 1e-3), ("A", 1e6)],
    )
}

fn parse_quantity(input: &str, units: &[(&str, f64)]) -> Result<f64, SafetyError> {
    let err = |reason: &str| SafetyError::Quantity {
        input: input.to_string(),
        reason: reason.to_string(),
    };
    let trimmed = input.trim();
    let split = trimmed
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .unwrap_or(trimmed.len());
    let (number, unit) = trimmed.split_at(split);
    let value: f64 = number.trim().parse().map_err(|_| err("not a number"))?;
    let unit = unit.trim();
    let factor = units
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, f)| *f)
        .ok_or_else(|| err("unknown unit"))?;
    Ok(value * factor)
}

fn check_finite(electrode: usize, name: &str, v: f64) -> Result<(), SafetyError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(SafetyError::InvalidStimulus {
            electrode,
            reason: format!("{name} is not finite"),
        })
    }
}

/// `2p > 1000/f`: a biphasic pulse that cannot fit in its period.
pub fn check_physically_impossible(frequency_hz: f64, pulse_ms: f64) -> Result<ViolationProportion, SafetyError> {
    pi_for(0, frequency_hz, pulse_ms)
}

fn pi_for(electrode: usize, f: f64, p: f64) -> Result<ViolationProportion, SafetyError> {
    check_finite(electrode, "frequency", f)?;
    check_finite(electrode, "pulse duration", p)?;
    if f <= 0.0 {
        return Err(SafetyError::InvalidStimulus {
            electrode,
            reason: format!("frequency {f} Hz leaves the pulse period undefined"),
        });
    }
    if p < 0.0 {
        return Err(SafetyError::InvalidStimulus {
            electrode,
            reason: format!("negative pulse duration {p} ms"),
        });
    }
    Ok(ViolationProportion::new(
        Constraint::PhysicallyImpossible,
        2.0 * p * f / 1000.0,
    ))
}

/// Per-electrode charge `p * a` (nC) against `charge_limit_nc`.
pub fn check_charge_density(
    pulse_ms: f64,
    amplitude_ua: f64,
    charge_limit_nc: f64,
) -> Result<ViolationProportion, SafetyError> {
    cd_for(0, pulse_ms, amplitude_ua, charge_limit_nc)
}

fn cd_for(electrode: usize, p: f64, a: f64, limit: f64) -> Result<ViolationProportion, SafetyError> {
    check_finite(electrode, "pulse duration", p)?;
    check_finite(electrode, "amplitude", a)?;
    if p < 0.0 || a < 0.0 {
        return Err(SafetyError::InvalidStimulus {
            electrode,
            reason: format!("negative pulse duration or amplitude ({p} ms, {a} µA)"),
        });
    }
    Ok(ViolationProportion::new(Constraint::ChargeDensity, p * a / limit))
}

/// Sum of amplitudes against `current_limit_ua`.
pub fn check_instantaneous_current(amplitudes_ua: &[f32], current_limit_ua: f64) -> ViolationProportion {
    let total: f64 = amplitudes_ua.iter().map(|&a| a as f64).sum();
    ViolationProportion::new(Constraint::InstantaneousCurrent, total / current_limit_ua)
}

/// Count of electrodes with amplitude above `activity_epsilon_ua` against `active_limit`.
pub fn check_active_electrodes(
    amplitudes_ua: &[f32],
    active_limit: f64,
    activity_epsilon_ua: f64,
) -> ViolationProportion {
    let active = amplitudes_ua
        .iter()
        .filter(|&&a| a as f64 > activity_epsilon_ua)
        .count();
    ViolationProportion::new(Constraint::ActiveElectrodes, active as f64 / active_limit)
}

/// Boolean summary of a report, one flag per constraint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationFlags {
    #[serde(rename = "PI")]
    pub pi: bool,
    #[serde(rename = "CD")]
    pub cd: bool,
    #[serde(rename = "IC")]
    pub ic: bool,
    #[serde(rename = "AE")]
    pub ae: bool,
}

impl ViolationFlags {
    pub fn any(&self) -> bool {
        self.pi || self.cd || self.ic || self.ae
    }

    pub fn get(&self, c: Constraint) -> bool {
        match c {
            Constraint::PhysicallyImpossible => self.pi,
            Constraint::ChargeDensity => self.cd,
            Constraint::InstantaneousCurrent => self.ic,
            Constraint::ActiveElectrodes => self.ae,
        }
    }
}

/// Every constraint evaluated on one pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    /// Physically-impossible proportion per electrode.
    pub pi: Vec<f64>,
    /// Charge proportion per electrode.
    pub cd: Vec<f64>,
    pub ic: f64,
    pub ae: f64,
    pub amplitudes_ua: Vec<f32>,
    pub any_violation: bool,
}

impl ViolationReport {
    pub fn electrode_count(&self) -> usize {
        self.pi.len()
    }

    pub fn flags(&self) -> ViolationFlags {
        ViolationFlags {
            pi: self.pi.iter().any(|&v| v > 1.0),
            cd: self.cd.iter().any(|&v| v > 1.0),
            ic: self.ic > 1.0,
            ae: self.ae > 1.0,
        }
    }

    pub fn violated(&self, c: Constraint) -> bool {
        self.flags().get(c)
    }

    /// Proportions of one electrode-wise constraint.
    pub fn electrode_proportions(&self, c: Constraint) -> &[f64] {
        match c {
            Constraint::PhysicallyImpossible => &self.pi,
            Constraint::ChargeDensity => &self.cd,
            _ => panic!("{c:?} is an aggregate constraint"),
        }
    }

    pub fn aggregate_proportion(&self, c: Constraint) -> f64 {
        match c {
            Constraint::InstantaneousCurrent => self.ic,
            Constraint::ActiveElectrodes => self.ae,
            _ => panic!("{c:?} is an electrode-wise constraint"),
        }
    }
}

/// Evaluates all four constraints on a pattern.
pub fn evaluate(pattern: &StimulationPattern, limits: &SafetyLimits) -> Result<ViolationReport, SafetyError> {
    let n = pattern.electrode_count();
    let mut pi = Vec::with_capacity(n);
    let mut cd = Vec::with_capacity(n);
    for i in 0..n {
        let (f, p, a) = pattern.electrode(i);
        pi.push(pi_for(i, f as f64, p as f64)?.proportion);
        cd.push(cd_for(i, p as f64, a as f64, limits.charge_limit_nc)?.proportion);
    }
    let ic = check_instantaneous_current(&pattern.amplitude_ua, limits.current_limit_ua).proportion;
    let ae = check_active_electrodes(&pattern.amplitude_ua, limits.active_limit, limits.activity_epsilon_ua).proportion;
    let any_violation = ic > 1.0 || ae > 1.0 || pi.iter().chain(&cd).any(|&v| v > 1.0);
    Ok(ViolationReport {
        pi,
        cd,
        ic,
        ae,
        amplitudes_ua: pattern.amplitude_ua.clone(),
        any_violation,
    })
}
