//! Piecewise drive schedules `f(t) = 1 + A sin(ω_seg t + θ_seg(t))`.
//!
//! Each segment stores its phase as affine coefficients, so evaluating the
//! drive late in a long run costs the same and accumulates no drift. The
//! boundary convention is: first segment closed on the right (`t <= b0`),
//! interior segments open (`b_{i-1} < t < b_i`), last segment closed on the
//! left (`t >= b_last`).

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Phase tolerance (rad) below which two segment arguments count as equal.
const PHASE_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentRule {
    /// Carrier frequency during the segment (0 for a static segment).
    pub frequency: f64,
    /// Constant part of the phase offset.
    pub phase0: f64,
    /// Linear part of the phase offset, rad per unit time.
    pub phase_rate: f64,
}

impl SegmentRule {
    fn steady(frequency: f64, phase: f64) -> Self {
        Self {
            frequency,
            phase0: phase,
            phase_rate: 0.0,
        }
    }

    #[inline]
    fn argument(&self, t: f64) -> f64 {
        (self.frequency + self.phase_rate) * t + self.phase0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    /// No defect: steady drive for all times.
    None,
    PhaseRamp,
    FreqQuench,
    SwitchOff,
    Generalized,
}

/// User-facing description of a defect; times are absolute (not in periods).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSpec {
    pub kind: DefectKind,
    #[serde(rename = "T_delta", default, skip_serializing_if = "Option::is_none")]
    pub t_delta: Option<f64>,
    #[serde(rename = "T_r", default, skip_serializing_if = "Option::is_none")]
    pub t_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_prime: Option<f64>,
    #[serde(default)]
    pub theta_i: f64,
    #[serde(rename = "theta_D", default)]
    pub theta_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_f: Option<f64>,
}

impl DefectSpec {
    pub fn none() -> Self {
        Self {
            kind: DefectKind::None,
            t_delta: None,
            t_r: None,
            omega_prime: None,
            theta_i: 0.0,
            theta_d: 0.0,
            theta_f: None,
        }
    }

    pub fn phase_ramp(t_delta: f64) -> Self {
        Self {
            kind: DefectKind::PhaseRamp,
            t_delta: Some(t_delta),
            ..Self::none()
        }
    }

    /// Quench to `ω_d + 2π/T_δ` held for `t_r`, phase reverting to `theta_f`.
    pub fn freq_quench(t_delta: f64, t_r: f64, theta_f: f64) -> Self {
        Self {
            kind: DefectKind::FreqQuench,
            t_delta: Some(t_delta),
            t_r: Some(t_r),
            theta_f: Some(theta_f),
            ..Self::none()
        }
    }

    /// Quench to an explicit frequency `omega_prime` for `t_r`.
    pub fn freq_quench_to(omega_prime: f64, t_r: f64) -> Self {
        Self {
            kind: DefectKind::FreqQuench,
            t_r: Some(t_r),
            omega_prime: Some(omega_prime),
            theta_f: Some(0.0),
            ..Self::none()
        }
    }

    /// Static coupling `1 + A sin θ_D` held for `t_r`.
    pub fn switch_off(t_r: f64, theta_d: f64) -> Self {
        Self {
            kind: DefectKind::SwitchOff,
            t_r: Some(t_r),
            theta_d,
            ..Self::none()
        }
    }

    pub fn generalized(
        omega_prime: f64,
        t_r: f64,
        theta_i: f64,
        theta_d: f64,
        theta_f: f64,
    ) -> Self {
        Self {
            kind: DefectKind::Generalized,
            t_r: Some(t_r),
            omega_prime: Some(omega_prime),
            theta_i,
            theta_d,
            theta_f: Some(theta_f),
            ..Self::none()
        }
    }

    /// Generalized quench whose final phase `2π T_r / T_δ` keeps `f` continuous.
    pub fn continuous_quench(t_delta: f64, t_r: f64) -> Self {
        Self {
            kind: DefectKind::Generalized,
            t_delta: Some(t_delta),
            t_r: Some(t_r),
            theta_f: Some(TAU * t_r / t_delta),
            ..Self::none()
        }
    }

    /// Time at which the defect ends (0 for a steady drive).
    pub fn duration(&self) -> f64 {
        match self.kind {
            DefectKind::None => 0.0,
            DefectKind::PhaseRamp => self.t_delta.unwrap_or(0.0),
            _ => self.t_r.unwrap_or(0.0),
        }
    }

    fn positive(value: Option<f64>, key: &str) -> Result<f64> {
        match value {
            Some(v) if v > 0.0 && v.is_finite() => Ok(v),
            Some(v) => Err(Error::InvalidProtocol(format!(
                "{key} must be positive, got {v}"
            ))),
            None => Err(Error::InvalidProtocol(format!("{key} is required"))),
        }
    }

    fn quench_frequency(&self, omega_d: f64) -> Result<f64> {
        match (self.omega_prime, self.t_delta) {
            (Some(w), _) if w >= 0.0 && w.is_finite() => Ok(w),
            (Some(w), _) => Err(Error::InvalidProtocol(format!(
                "omega_prime must be non-negative, got {w}"
            ))),
            (None, Some(_)) => Ok(omega_d + TAU / Self::positive(self.t_delta, "T_delta")?),
            (None, None) => Err(Error::InvalidProtocol(
                "quench needs omega_prime or T_delta".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveProtocol {
    pub amplitude: f64,
    pub base_frequency: f64,
    pub kind: DefectKind,
    /// Segment boundaries, strictly increasing; `segments.len() == boundaries.len() + 1`.
    pub boundaries: Vec<f64>,
    pub segments: Vec<SegmentRule>,
}

impl DriveProtocol {
    pub fn steady(omega_d: f64, amplitude: f64) -> Result<Self> {
        make_protocol(&DefectSpec::none(), omega_d, amplitude)
    }

    /// Same schedule with the drive amplitude replaced.
    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self {
            amplitude,
            ..self.clone()
        }
    }

    #[inline]
    fn segment_index(&self, t: f64) -> usize {
        for (i, &b) in self.boundaries.iter().enumerate() {
            if (i == 0 && t <= b) || (i > 0 && t < b) {
                return i;
            }
        }
        self.boundaries.len()
    }

    #[inline]
    fn argument(&self, t: f64) -> f64 {
        self.segments[self.segment_index(t)].argument(t)
    }

    /// Drive factor `f(t)`.
    #[inline]
    pub fn drive_value(&self, t: f64) -> f64 {
        1.0 + self.amplitude * self.argument(t).sin()
    }

    /// Phase offset `θ(t)` relative to the base carrier `ω_d t`.
    pub fn phase_value(&self, t: f64) -> f64 {
        self.argument(t) - self.base_frequency * t
    }

    /// Phase after the defect has ended.
    pub fn final_phase(&self) -> f64 {
        let last = self.segments.last().expect("at least one segment");
        last.phase0
    }

    /// End of the defect window (0 when there is no defect).
    pub fn defect_end(&self) -> f64 {
        self.boundaries.last().copied().unwrap_or(0.0).max(0.0)
    }

    /// Times where the drive phase, and hence `f`, jumps.
    pub fn discontinuity_points(&self) -> Vec<f64> {
        if self.amplitude == 0.0 {
            return Vec::new();
        }
        self.boundaries
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| {
                let left = self.segments[i].argument(b);
                let right = self.segments[i + 1].argument(b);
                let d = (left - right).rem_euclid(TAU);
                let dist = d.min(TAU - d);
                (dist > PHASE_MATCH_TOL).then_some(b)
            })
            .collect()
    }
}

/// Builds the piecewise schedule for `spec` on top of the base drive.
pub fn make_protocol(spec: &DefectSpec, omega_d: f64, amplitude: f64) -> Result<DriveProtocol> {
    if !(omega_d >= 0.0 && omega_d.is_finite()) {
        return Err(Error::InvalidProtocol(format!(
            "omega_d must be non-negative, got {omega_d}"
        )));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidProtocol(format!(
            "amplitude must be non-negative, got {amplitude}"
        )));
    }
    let (boundaries, segments) = match spec.kind {
        DefectKind::None => (vec![], vec![SegmentRule::steady(omega_d, spec.theta_i)]),
        DefectKind::PhaseRamp => {
            let t_delta = DefectSpec::positive(spec.t_delta, "T_delta")?;
            (
                vec![0.0, t_delta],
                vec![
                    SegmentRule::steady(omega_d, 0.0),
                    SegmentRule {
                        frequency: omega_d,
                        phase0: 0.0,
                        phase_rate: TAU / t_delta,
                    },
                    SegmentRule::steady(omega_d, TAU),
                ],
            )
        }
        DefectKind::FreqQuench => {
            let t_r = DefectSpec::positive(spec.t_r, "T_r")?;
            let w = spec.quench_frequency(omega_d)?;
            (
                vec![0.0, t_r],
                vec![
                    SegmentRule::steady(omega_d, 0.0),
                    SegmentRule::steady(w, 0.0),
                    SegmentRule::steady(omega_d, spec.theta_f.unwrap_or(0.0)),
                ],
            )
        }
        DefectKind::SwitchOff => {
            let t_r = DefectSpec::positive(spec.t_r, "T_r")?;
            if spec.t_delta.is_some() || spec.omega_prime.is_some_and(|w| w != 0.0) {
                return Err(Error::InvalidProtocol(
                    "switch_off holds a static coupling and cannot carry a ramp".into(),
                ));
            }
            (
                vec![0.0, t_r],
                vec![
                    SegmentRule::steady(omega_d, spec.theta_i),
                    SegmentRule::steady(0.0, spec.theta_d),
                    SegmentRule::steady(omega_d, spec.theta_f.unwrap_or(spec.theta_i)),
                ],
            )
        }
        DefectKind::Generalized => {
            let t_r = DefectSpec::positive(spec.t_r, "T_r")?;
            let w = spec.quench_frequency(omega_d)?;
            let theta_f = spec.theta_f.ok_or_else(|| {
                Error::InvalidProtocol("generalized protocol needs theta_f".into())
            })?;
            (
                vec![0.0, t_r],
                vec![
                    SegmentRule::steady(omega_d, spec.theta_i),
                    SegmentRule::steady(w, spec.theta_d),
                    SegmentRule::steady(omega_d, theta_f),
                ],
            )
        }
    };
    Ok(DriveProtocol {
        amplitude,
        base_frequency: omega_d,
        kind: spec.kind,
        boundaries,
        segments,
    })
}

/// Wraps an angle into `[-π, π)`.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(TAU) - PI
}
