//! TOML run configuration and its translation into a [`SweepPlan`].
//!
//! Every section rejects unknown keys. Command-line flags are parsed into the
//! same structure and laid over the file, so a flag always wins.

use serde::{Deserialize, Serialize};

use bitflip::analysis::Schedule;
use bitflip::drive::{DefectKind, DefectSpec};
use bitflip::odm::{OdmMethod, SpinResolution, DEFAULT_EPSILON};
use bitflip::po::DEFAULT_U0;
use bitflip::sweep::{AxisSpec, DriveTemplate, ModelTemplate, OdmTemplate, PoTemplate, SweepPlan, DEFAULT_N_TRAJ};

/// A configuration problem tied to one key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid `{}`: {}", self.key, self.reason)
    }
}

fn err(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `po` or `odm`.
    pub kind: Option<String>,
    /// `mean_field`, `twa` or `dtwa` (Dicke model only).
    pub method: Option<String>,
    pub omega: Option<f64>,
    pub gamma: Option<f64>,
    pub temperature: Option<f64>,
    pub u0: Option<f64>,
    pub omega0: Option<f64>,
    pub kappa: Option<f64>,
    pub lambda_ratio: Option<f64>,
    #[serde(rename = "N", alias = "n")]
    pub n: Option<f64>,
    pub temporal_noise: Option<bool>,
    /// `collective` or `per_spin`.
    pub resolution: Option<String>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    pub omega_d: Option<f64>,
    pub amplitude: Option<f64>,
    pub delta_a: Option<f64>,
    pub omega_response: Option<f64>,
    pub continuous_phase: Option<bool>,
}

/// Defect keys; durations in drive periods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: Option<String>,
    #[serde(rename = "T_delta")]
    pub t_delta: Option<f64>,
    #[serde(rename = "T_r")]
    pub t_r: Option<f64>,
    pub omega_prime: Option<f64>,
    pub theta_i: Option<f64>,
    #[serde(rename = "theta_D")]
    pub theta_d: Option<f64>,
    pub theta_f: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `name:start:stop:n` or `name:v1,v2,...`.
    pub axes: Option<Vec<String>>,
    pub n_traj: Option<usize>,
    pub master_seed: Option<u64>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub prep_cycles: Option<f64>,
    pub relax_cycles: Option<f64>,
    pub measure_cycles: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub prefix: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub drive: DriveSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub output: OutputSection,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($f:ident),+) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )+
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| err("config", e.message().to_string() + &span_hint(text, e.span())))
    }

    /// Lays every field set in `top` over `self`.
    pub fn overlay(&mut self, top: &RunConfig) {
        overlay!(self.model, top.model; kind, method, omega, gamma, temperature, u0, omega0, kappa,
            lambda_ratio, n, temporal_noise, resolution, epsilon);
        overlay!(self.drive, top.drive; omega_d, amplitude, delta_a, omega_response, continuous_phase);
        overlay!(self.protocol, top.protocol; kind, t_delta, t_r, omega_prime, theta_i, theta_d, theta_f);
        overlay!(self.sweep, top.sweep; axes, n_traj, master_seed, dt);
        overlay!(self.schedule, top.schedule; prep_cycles, relax_cycles, measure_cycles);
        overlay!(self.output, top.output; dir, prefix);
    }

    pub fn to_plan(&self) -> Result<SweepPlan, ConfigError> {
        let m = &self.model;
        let kind = m.kind.as_deref().ok_or_else(|| err("model.kind", "required (po or odm)"))?;
        let model = match kind {
            "po" => {
                for (key, set) in [
                    ("model.method", m.method.is_some()),
                    ("model.omega0", m.omega0.is_some()),
                    ("model.kappa", m.kappa.is_some()),
                    ("model.lambda_ratio", m.lambda_ratio.is_some()),
                    ("model.N", m.n.is_some()),
                    ("model.temporal_noise", m.temporal_noise.is_some()),
                    ("model.resolution", m.resolution.is_some()),
                    ("model.epsilon", m.epsilon.is_some()),
                ] {
                    if set {
                        return Err(err(key, "not a parameter of the po model"));
                    }
                }
                ModelTemplate::Po(PoTemplate {
                    omega: m.omega.unwrap_or(1.0),
                    gamma: m.gamma.ok_or_else(|| err("model.gamma", "required for the po model"))?,
                    temperature: m.temperature.unwrap_or(0.0),
                    u0: m.u0.unwrap_or(DEFAULT_U0),
                })
            }
            "odm" => {
                for (key, set) in [
                    ("model.gamma", m.gamma.is_some()),
                    ("model.temperature", m.temperature.is_some()),
                    ("model.u0", m.u0.is_some()),
                ] {
                    if set {
                        return Err(err(key, "not a parameter of the odm model"));
                    }
                }
                let method = match m.method.as_deref().unwrap_or("mean_field") {
                    "mean_field" | "mf" => OdmMethod::MeanField,
                    "twa" => OdmMethod::Twa,
                    "dtwa" => OdmMethod::Dtwa,
                    other => return Err(err("model.method", format!("unknown method `{other}` (mean_field, twa, dtwa)"))),
                };
                let resolution = match m.resolution.as_deref().unwrap_or("collective") {
                    "collective" => SpinResolution::Collective,
                    "per_spin" => SpinResolution::PerSpin,
                    other => return Err(err("model.resolution", format!("unknown resolution `{other}`"))),
                };
                ModelTemplate::Odm(OdmTemplate {
                    omega: m.omega.unwrap_or(1.0),
                    omega0: m.omega0.unwrap_or(1.0),
                    kappa: m.kappa.ok_or_else(|| err("model.kappa", "required for the odm model"))?,
                    lambda_ratio: m
                        .lambda_ratio
                        .ok_or_else(|| err("model.lambda_ratio", "required for the odm model"))?,
                    n: m.n.unwrap_or(1e4),
                    method,
                    temporal_noise: m.temporal_noise.unwrap_or(true),
                    resolution,
                    epsilon: m.epsilon.unwrap_or(DEFAULT_EPSILON),
                })
            }
            other => return Err(err("model.kind", format!("unknown model `{other}` (po or odm)"))),
        };

        let p = &self.protocol;
        let kind = match p.kind.as_deref().unwrap_or("none") {
            "none" | "steady" => DefectKind::None,
            "ramp" | "phase_ramp" => DefectKind::PhaseRamp,
            "quench" | "freq_quench" => DefectKind::FreqQuench,
            "switch_off" | "switch-off" | "off" => DefectKind::SwitchOff,
            "generalized" => DefectKind::Generalized,
            other => return Err(err("protocol.kind", format!("unknown defect `{other}`"))),
        };
        let defect = DefectSpec {
            kind,
            t_delta: p.t_delta,
            t_r: p.t_r,
            omega_prime: p.omega_prime,
            theta_i: p.theta_i.unwrap_or(0.0),
            theta_d: p.theta_d.unwrap_or(0.0),
            theta_f: p.theta_f.or(match kind {
                DefectKind::FreqQuench => Some(0.0),
                _ => None,
            }),
        };
        let d = &self.drive;
        if d.amplitude.is_some() && d.delta_a.is_some() {
            return Err(err("drive.amplitude", "give either amplitude or delta_a, not both"));
        }
        let drive = DriveTemplate {
            omega_d: d.omega_d,
            amplitude: d.amplitude,
            delta_a: d.delta_a,
            defect,
            continuous_phase: d.continuous_phase.unwrap_or(false),
            omega_response: d.omega_response,
        };
        let axes = self
            .sweep
            .axes
            .iter()
            .flatten()
            .map(|a| AxisSpec::parse(a).map_err(|e| err("sweep.axes", e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let def = Schedule::default();
        let s = &self.schedule;
        let plan = SweepPlan {
            model,
            drive,
            axes,
            n_traj: self.sweep.n_traj.unwrap_or(DEFAULT_N_TRAJ),
            master_seed: self.sweep.master_seed.unwrap_or(0),
            schedule: Schedule {
                prep_cycles: s.prep_cycles.unwrap_or(def.prep_cycles),
                relax_cycles: s.relax_cycles.unwrap_or(def.relax_cycles),
                measure_cycles: s.measure_cycles.unwrap_or(def.measure_cycles),
            },
            dt: self.sweep.dt.unwrap_or(bitflip::integrator::DEFAULT_DT),
        };
        plan.validate().map_err(|e| match e {
            bitflip::Error::InvalidParameter { name, reason } => err(name, reason),
            other => err("plan", other.to_string()),
        })?;
        Ok(plan)
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
