//! Ensembles over parameter grids, and reproducible persistence of results.
//!
//! A [`SweepPlan`] is a model template, a drive template and a list of axes.
//! Cells are the Cartesian product of the axes in row-major order (last axis
//! fastest). Every trajectory draws its noise from
//! `NoiseStream::for_cell(master_seed, cell, trajectory)`, so a cell gives the
//! same result whether it runs alone, in a grid, serially or in parallel.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    analyse_series, classify_phase, crystalline_fraction, decorrelator_run, switching_probability,
    winding_histogram, DynamicalPhase, FlipOutcome, PhaseFloors, Schedule, SwitchingStats,
    WindingHistogram, AMPLITUDE_FLOOR, DECORRELATOR_EPS_A, DECORRELATOR_EPS_AMP,
    STEADY_CIRCULAR_VARIANCE, WINDING_BIN_WIDTH,
};
use crate::drive::{make_protocol, DefectKind, DefectSpec};
use crate::error::{invalid, Error, Result};
use crate::integrator::{NoiseStream, StepperConfig, DEFAULT_DT, SCHEME_NAME};
use crate::odm::{
    initial_state, integrate_odm, lambda_c, odm_resonance, resonance_amplitude, OdmMethod,
    OdmParams, OdmStepper, SpinResolution, DEFAULT_EPSILON,
};
use crate::po::{integrate_po, po_resonance, PoParams, PoState, DEFAULT_U0};

/// Version of the persisted result layout.
pub const SCHEMA_VERSION: u32 = 1;
/// Largest DTWA particle number allowed with explicit per-spin storage.
pub const MAX_PER_SPIN_N: f64 = 5e3;
/// Default trajectories per noisy grid point.
pub const DEFAULT_N_TRAJ: usize = 1000;
/// Integration steps per order-parameter sample handed to phase extraction.
/// Whole-period windows stay whole because `2T_d/dt` is always even.
pub const ANALYSIS_STRIDE: usize = 4;
/// Length of the steady window used for `χ`, in drive periods.
pub const CHI_CYCLES: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoTemplate {
    #[serde(default = "one")]
    pub omega: f64,
    pub gamma: f64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_u0")]
    pub u0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdmTemplate {
    #[serde(default = "one")]
    pub omega: f64,
    #[serde(default = "one")]
    pub omega0: f64,
    pub kappa: f64,
    /// `λ₀/λ_c`.
    pub lambda_ratio: f64,
    #[serde(default = "default_n")]
    pub n: f64,
    pub method: OdmMethod,
    #[serde(default = "yes")]
    pub temporal_noise: bool,
    #[serde(default)]
    pub resolution: SpinResolution,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_u0() -> f64 {
    DEFAULT_U0
}
fn default_n() -> f64 {
    1e4
}
fn default_eps() -> f64 {
    DEFAULT_EPSILON
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_n_traj() -> usize {
    DEFAULT_N_TRAJ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTemplate {
    Po(PoTemplate),
    Odm(OdmTemplate),
}

impl ModelTemplate {
    pub fn is_noiseless(&self) -> bool {
        match self {
            Self::Po(p) => p.temperature == 0.0 || p.gamma == 0.0,
            Self::Odm(o) => o.method == OdmMethod::MeanField,
        }
    }
}

/// Drive settings; defect durations are in units of the drive period `T_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveTemplate {
    /// Drive frequency; the model's resonance `ω_r` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_d: Option<f64>,
    /// Absolute amplitude `A`. Exclusive with `delta_a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Detuning `δA = A − A_r` from the threshold formula.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_a: Option<f64>,
    pub defect: DefectSpec,
    /// Recompute `θ_f = (ω_d' − ω_d) T_r` for every cell so the drive stays continuous.
    #[serde(default)]
    pub continuous_phase: bool,
    /// Response frequency for phase extraction; `ω_d/2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_response: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Defect duration `T_δ` in units of `T_d`.
    TDelta,
    /// Hold duration `T_r` in units of `T_d`.
    TR,
    DeltaA,
    Amplitude,
    Temperature,
    N,
    OmegaD,
    OmegaPrime,
    ThetaF,
    ThetaD,
    Gamma,
    Kappa,
    LambdaRatio,
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TDelta => "t_delta",
            Self::TR => "t_r",
            Self::DeltaA => "delta_a",
            Self::Amplitude => "amplitude",
            Self::Temperature => "temperature",
            Self::N => "n",
            Self::OmegaD => "omega_d",
            Self::OmegaPrime => "omega_prime",
            Self::ThetaF => "theta_f",
            Self::ThetaD => "theta_d",
            Self::Gamma => "gamma",
            Self::Kappa => "kappa",
            Self::LambdaRatio => "lambda_ratio",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match key.as_str() {
            "tdelta" => Self::TDelta,
            "tr" => Self::TR,
            "deltaa" | "da" => Self::DeltaA,
            "amplitude" | "a" => Self::Amplitude,
            "temperature" | "temp" => Self::Temperature,
            "n" => Self::N,
            "omegad" | "wd" => Self::OmegaD,
            "omegaprime" | "wdprime" => Self::OmegaPrime,
            "thetaf" => Self::ThetaF,
            "thetad" => Self::ThetaD,
            "gamma" => Self::Gamma,
            "kappa" => Self::Kappa,
            "lambdaratio" => Self::LambdaRatio,
            _ => return Err(invalid("axis", format!("unknown axis `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl AxisSpec {
    /// `n` evenly spaced values from `start` to `stop` inclusive.
    pub fn linspace(axis: Axis, start: f64, stop: f64, n: usize) -> Self {
        let values = match n {
            0 => vec![],
            1 => vec![start],
            _ => (0..n)
                .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
                .collect(),
        };
        Self { axis, values }
    }

    /// Parses `name:start:stop:n` or `name:v1,v2,...`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let axis = Axis::parse(parts.next().unwrap_or(""))?;
        let rest: Vec<&str> = parts.collect();
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| invalid("axis", format!("`{x}` is not a number in `{s}`")))
        };
        match rest.as_slice() {
            [list] => Ok(Self {
                axis,
                values: list.split(',').map(num).collect::<Result<_>>()?,
            }),
            [a, b, n] => {
                let n: usize = n
                    .trim()
                    .parse()
                    .map_err(|_| invalid("axis", format!("`{n}` is not a count in `{s}`")))?;
                Ok(Self::linspace(axis, num(a)?, num(b)?, n))
            }
            _ => Err(invalid("axis", format!("expected name:start:stop:n or name:v1,v2 in `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub model: ModelTemplate,
    pub drive: DriveTemplate,
    #[serde(default)]
    pub axes: Vec<AxisSpec>,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

/// Fully resolved parameters of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellModel {
    Po(PoParams),
    Odm(OdmParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub index: usize,
    pub coordinates: Vec<(Axis, f64)>,
    pub model: CellModel,
    pub t_d: f64,
    pub dt: f64,
    pub omega_response: f64,
}

impl CellSpec {
    pub fn amplitude(&self) -> f64 {
        match &self.model {
            CellModel::Po(p) => p.protocol.amplitude,
            CellModel::Odm(o) => o.protocol.amplitude,
        }
    }

    pub fn defect_end(&self) -> f64 {
        match &self.model {
            CellModel::Po(p) => p.protocol.defect_end(),
            CellModel::Odm(o) => o.protocol.defect_end(),
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(invalid("n_traj", "must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        self.schedule.validate()?;
        for a in &self.axes {
            if a.values.is_empty() {
                return Err(invalid("axes", format!("axis `{}` has no values", a.axis.name())));
            }
        }
        for (i, a) in self.axes.iter().enumerate() {
            if self.axes[..i].iter().any(|b| b.axis == a.axis) {
                return Err(invalid("axes", format!("axis `{}` given twice", a.axis.name())));
            }
        }
        if self.drive.amplitude.is_some() && self.drive.delta_a.is_some() {
            return Err(invalid("amplitude", "give either amplitude or delta_a, not both"));
        }
        // resolving every cell checks axis/model compatibility and domains
        for i in 0..self.n_cells() {
            self.cell(i)?;
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.values.len()).collect()
    }

    pub fn coordinates(&self, index: usize) -> Vec<(Axis, f64)> {
        let mut rem = index;
        let mut out = vec![(Axis::TDelta, 0.0); self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            let n = a.values.len();
            out[k] = (a.axis, a.values[rem % n]);
            rem /= n;
        }
        out
    }

    /// SHA-256 over the canonical JSON of the plan.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("plans always serialise");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Resolves the parameters of cell `index`.
    pub fn cell(&self, index: usize) -> Result<CellSpec> {
        let coords = self.coordinates(index);
        let get = |axis: Axis| coords.iter().find(|(a, _)| *a == axis).map(|(_, v)| *v);
        let mut model = self.model.clone();
        match &mut model {
            ModelTemplate::Po(p) => {
                if let Some(v) = get(Axis::Temperature) {
                    p.temperature = v;
                }
                if let Some(v) = get(Axis::Gamma) {
                    p.gamma = v;
                }
                for axis in [Axis::N, Axis::Kappa, Axis::LambdaRatio] {
                    if get(axis).is_some() {
                        return Err(invalid("axes", format!("`{}` does not apply to the pendulum", axis.name())));
                    }
                }
            }
            ModelTemplate::Odm(o) => {
                if let Some(v) = get(Axis::N) {
                    o.n = v;
                }
                if let Some(v) = get(Axis::Kappa) {
                    o.kappa = v;
                }
                if let Some(v) = get(Axis::LambdaRatio) {
                    o.lambda_ratio = v;
                }
                for axis in [Axis::Temperature, Axis::Gamma] {
                    if get(axis).is_some() {
                        return Err(invalid("axes", format!("`{}` does not apply to the Dicke model", axis.name())));
                    }
                }
                if o.method == OdmMethod::Dtwa
                    && o.resolution == SpinResolution::PerSpin
                    && o.n > MAX_PER_SPIN_N
                {
                    return Err(invalid(
                        "n",
                        format!("per-spin DTWA is capped at N = {MAX_PER_SPIN_N}; use the collective resolution"),
                    ));
                }
            }
        }

        let (omega_r, a_r) = match &model {
            ModelTemplate::Po(p) => po_resonance(p.omega, p.gamma),
            ModelTemplate::Odm(o) => {
                let lam = o.lambda_ratio * lambda_c(o.omega, o.kappa);
                let a_r = resonance_amplitude(o.omega, o.kappa, lam);
                let w = match (get(Axis::OmegaD), self.drive.omega_d) {
                    (None, None) => odm_resonance(o.omega, o.kappa, lam)?.0,
                    _ => f64::NAN,
                };
                (w, a_r)
            }
        };
        let omega_d = get(Axis::OmegaD).or(self.drive.omega_d).unwrap_or(omega_r);
        if !(omega_d > 0.0) {
            return Err(invalid("omega_d", format!("must be positive, got {omega_d}")));
        }
        let t_d = TAU / omega_d;
        let amplitude = if let Some(a) = get(Axis::Amplitude) {
            a
        } else if let Some(d) = get(Axis::DeltaA) {
            a_r + d
        } else if let Some(a) = self.drive.amplitude {
            a
        } else {
            a_r + self.drive.delta_a.unwrap_or(0.0)
        };

        let mut spec = self.drive.defect;
        if let Some(v) = spec.t_delta.as_mut() {
            *v *= t_d;
        }
        if let Some(v) = spec.t_r.as_mut() {
            *v *= t_d;
        }
        if let Some(v) = get(Axis::TDelta) {
            spec.t_delta = Some(v * t_d);
        }
        if let Some(v) = get(Axis::TR) {
            spec.t_r = Some(v * t_d);
        }
        if let Some(v) = get(Axis::OmegaPrime) {
            spec.omega_prime = Some(v);
        }
        if let Some(v) = get(Axis::ThetaF) {
            spec.theta_f = Some(v);
        }
        if let Some(v) = get(Axis::ThetaD) {
            spec.theta_d = v;
        }
        if self.drive.continuous_phase {
            if !matches!(spec.kind, DefectKind::Generalized | DefectKind::FreqQuench) {
                return Err(invalid("continuous_phase", "applies to quench protocols only"));
            }
            let w = match (spec.omega_prime, spec.t_delta) {
                (Some(w), _) => w,
                (None, Some(td)) => omega_d + TAU / td,
                (None, None) => return Err(invalid("continuous_phase", "needs omega_prime or T_delta")),
            };
            let t_r = spec
                .t_r
                .ok_or_else(|| invalid("continuous_phase", "needs T_r"))?;
            spec.theta_f = Some((w - omega_d) * t_r + spec.theta_d);
        }
        let protocol = make_protocol(&spec, omega_d, amplitude)?;

        let model = match model {
            ModelTemplate::Po(p) => {
                let params = PoParams {
                    omega: p.omega,
                    gamma: p.gamma,
                    temperature: p.temperature,
                    protocol,
                    initial: PoState { u: p.u0, v: 0.0 },
                };
                params.validate()?;
                CellModel::Po(params)
            }
            ModelTemplate::Odm(o) => {
                let params = OdmParams {
                    omega: o.omega,
                    omega0: o.omega0,
                    kappa: o.kappa,
                    lambda0: o.lambda_ratio * lambda_c(o.omega, o.kappa),
                    n: o.n,
                    protocol,
                    method: o.method,
                    epsilon: o.epsilon,
                    temporal_noise: o.temporal_noise,
                    resolution: o.resolution,
                };
                params.validate()?;
                CellModel::Odm(params)
            }
        };
        Ok(CellSpec {
            index,
            coordinates: coords,
            model,
            t_d,
            dt: StepperConfig::snapped_dt(t_d, self.dt),
            omega_response: self.drive.omega_response.unwrap_or(omega_d / 2.0),
        })
    }
}

/// Runs one trajectory of `cell` from `t_start` to `t_end`, keeping every
/// `ANALYSIS_STRIDE`-th order-parameter value from `keep_from` on. Returns
/// the kept series `(t_first, values)` or the divergence time.
fn order_parameter(
    cell: &CellSpec,
    stream: &mut NoiseStream,
    t_start: f64,
    t_end: f64,
    keep_from: f64,
) -> Result<std::result::Result<(f64, Vec<f64>), f64>> {
    let cfg = StepperConfig::new(cell.dt, t_start, t_end, 1)?;
    let n = cfg.n_steps();
    let skip = ((keep_from - t_start) / cell.dt - 1e-6).ceil().max(0.0) as usize;
    // shift the first kept step back so the last kept step is the final one
    let skip = n.saturating_sub(n.saturating_sub(skip).div_ceil(ANALYSIS_STRIDE) * ANALYSIS_STRIDE);
    let mut kept = Vec::with_capacity(n.saturating_sub(skip) / ANALYSIS_STRIDE + 1);
    let first = cfg.time_at(skip);
    let diverged = match &cell.model {
        CellModel::Po(p) => integrate_po(p, &cfg, stream, |k, _, s| {
            if k >= skip && (k - skip) % ANALYSIS_STRIDE == 0 {
                kept.push(s.u.sin());
            }
        }),
        CellModel::Odm(o) => {
            let mut state = initial_state(o, stream);
            let st = OdmStepper::new(o);
            integrate_odm(o, &mut state, &cfg, stream, |k, _, s| {
                if k >= skip && (k - skip) % ANALYSIS_STRIDE == 0 {
                    kept.push(st.sx_per_particle(s));
                }
            })
        }
    };
    Ok(match diverged {
        Some(t) => Err(t),
        None => Ok((first, kept)),
    })
}

/// Prepare, defect, relax and measure one trajectory.
pub fn run_trajectory(cell: &CellSpec, schedule: &Schedule, stream: &mut NoiseStream) -> Result<FlipOutcome> {
    let window = TAU / cell.omega_response;
    let end = cell.defect_end();
    let windows = schedule.phase_windows(cell.t_d, end, window);
    let t_start = schedule.t_start(cell.t_d);
    let t_end = schedule.t_end(cell.t_d, end);
    let sample_dt = cell.dt * ANALYSIS_STRIDE as f64;
    match order_parameter(cell, stream, t_start, t_end, windows.before.0 - sample_dt)? {
        Err(_) => Ok(FlipOutcome::divergent()),
        Ok((t0, values)) => analyse_series(&values, t0, sample_dt, cell.omega_response, &windows),
    }
}

/// Ensemble-level decision constants recorded with every result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionConstants {
    pub flip_threshold: f64,
    pub steady_circular_variance: f64,
    pub winding_bin_width: f64,
    pub amplitude_floor: f64,
    pub chi_neighbour_bins: usize,
    pub chi_cycles: f64,
    pub analysis_stride: usize,
    pub schedule: Schedule,
}

impl DecisionConstants {
    pub fn new(schedule: Schedule) -> Self {
        Self {
            flip_threshold: FRAC_PI_2,
            steady_circular_variance: STEADY_CIRCULAR_VARIANCE,
            winding_bin_width: WINDING_BIN_WIDTH,
            amplitude_floor: AMPLITUDE_FLOOR,
            chi_neighbour_bins: 1,
            chi_cycles: CHI_CYCLES,
            analysis_stride: ANALYSIS_STRIDE,
            schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub n_traj: usize,
    pub dt: f64,
    pub scheme: String,
    pub code_version: String,
    pub plan_fingerprint: String,
    pub decisions: DecisionConstants,
}

impl Provenance {
    fn new(plan: &SweepPlan, dt: f64) -> Self {
        Self {
            master_seed: plan.master_seed,
            n_traj: plan.n_traj,
            dt,
            scheme: SCHEME_NAME.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            plan_fingerprint: plan.fingerprint(),
            decisions: DecisionConstants::new(plan.schedule),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub cell: usize,
    pub coordinates: Vec<(Axis, f64)>,
    pub outcomes: Vec<FlipOutcome>,
    /// `None` when every trajectory diverged.
    pub stats: Option<SwitchingStats>,
    pub histogram: WindingHistogram,
    pub n_diverged: usize,
    pub provenance: Provenance,
}

impl EnsembleResult {
    fn from_outcomes(cell: &CellSpec, outcomes: Vec<FlipOutcome>, provenance: Provenance) -> Self {
        let stats = switching_probability(&outcomes).ok();
        Self {
            cell: cell.index,
            coordinates: cell.coordinates.clone(),
            n_diverged: outcomes.iter().filter(|o| o.diverged).count(),
            histogram: winding_histogram(&outcomes),
            stats,
            outcomes,
            provenance,
        }
    }

    /// Aggregates recomputed from the per-trajectory records.
    pub fn recompute(&self) -> (Option<SwitchingStats>, WindingHistogram) {
        (switching_probability(&self.outcomes).ok(), winding_histogram(&self.outcomes))
    }

    pub fn p_s(&self) -> f64 {
        self.stats.map_or(f64::NAN, |s| s.p_s)
    }

    pub fn coordinate(&self, axis: Axis) -> Option<f64> {
        self.coordinates.iter().find(|(a, _)| *a == axis).map(|(_, v)| *v)
    }
}

fn ensemble(plan: &SweepPlan, cell: &CellSpec) -> Result<Vec<FlipOutcome>> {
    (0..plan.n_traj)
        .into_par_iter()
        .map(|j| {
            let mut stream = NoiseStream::for_cell(plan.master_seed, cell.index as u64, j as u64);
            run_trajectory(cell, &plan.schedule, &mut stream)
        })
        .collect()
}

/// Runs the full ensemble of one cell; fails when every trajectory diverged.
pub fn run_point(plan: &SweepPlan, index: usize) -> Result<EnsembleResult> {
    plan.schedule.validate()?;
    if plan.n_traj == 0 {
        return Err(invalid("n_traj", "must be at least 1"));
    }
    let cell = plan.cell(index)?;
    let outcomes = ensemble(plan, &cell)?;
    let res = EnsembleResult::from_outcomes(&cell, outcomes, Provenance::new(plan, cell.dt));
    if res.stats.is_none() {
        return Err(Error::AllDiverged { n: plan.n_traj });
    }
    Ok(res)
}

/// Every cell of the plan, in cell order. All-diverged cells keep `stats = None`.
pub fn run_grid(plan: &SweepPlan) -> Result<Vec<EnsembleResult>> {
    plan.validate()?;
    (0..plan.n_cells())
        .into_par_iter()
        .map(|i| {
            let cell = plan.cell(i)?;
            let outcomes = ensemble(plan, &cell)?;
            Ok(EnsembleResult::from_outcomes(&cell, outcomes, Provenance::new(plan, cell.dt)))
        })
        .collect()
}

/// One row of a one-axis curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub value: f64,
    pub p_s: f64,
    pub se: f64,
    pub n_valid: usize,
    pub n_diverged: usize,
    pub histogram: WindingHistogram,
}

pub fn curve(plan: &SweepPlan) -> Result<Vec<CurveRow>> {
    if plan.axes.len() != 1 {
        return Err(invalid("axes", "a curve needs exactly one axis"));
    }
    Ok(run_grid(plan)?
        .into_iter()
        .map(|r| CurveRow {
            value: r.coordinates[0].1,
            p_s: r.p_s(),
            se: r.stats.map_or(f64::NAN, |s| s.se),
            n_valid: r.stats.map_or(0, |s| s.n_valid),
            n_diverged: r.n_diverged,
            histogram: r.histogram,
        })
        .collect())
}

/// Values over a two-axis grid; `rows[i][j]` is at `(row_values[i], col_values[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub row_axis: Axis,
    pub row_values: Vec<f64>,
    pub col_axis: Axis,
    pub col_values: Vec<f64>,
    pub rows: Vec<Vec<T>>,
}

impl<T: Clone> Matrix<T> {
    fn from_flat(plan: &SweepPlan, flat: Vec<T>) -> Self {
        let (r, c) = (&plan.axes[0], &plan.axes[1]);
        let rows = flat.chunks(c.values.len()).map(|s| s.to_vec()).collect();
        Self {
            row_axis: r.axis,
            row_values: r.values.clone(),
            col_axis: c.axis,
            col_values: c.values.clone(),
            rows,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.rows[i][j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitflipDiagram {
    pub delta_phi: Matrix<f64>,
    pub flipped: Matrix<bool>,
    /// False where there is no steady period-doubled state to flip.
    pub reliable: Matrix<bool>,
    pub outcomes: Matrix<FlipOutcome>,
}

fn require_2d(plan: &SweepPlan) -> Result<()> {
    if plan.axes.len() != 2 {
        return Err(invalid("axes", "a diagram needs exactly two axes"));
    }
    Ok(())
}

/// Deterministic flip map over two axes (one trajectory per cell).
pub fn bitflip_diagram(plan: &SweepPlan) -> Result<BitflipDiagram> {
    require_2d(plan)?;
    if !plan.model.is_noiseless() {
        return Err(invalid("model", "bit-flip diagrams need a noiseless model (T = 0 or mean field)"));
    }
    let mut p = plan.clone();
    p.n_traj = 1;
    let res = run_grid(&p)?;
    let one = |r: &EnsembleResult| r.outcomes[0];
    Ok(BitflipDiagram {
        delta_phi: Matrix::from_flat(&p, res.iter().map(|r| one(r).delta_phi).collect()),
        flipped: Matrix::from_flat(&p, res.iter().map(|r| one(r).flipped).collect()),
        reliable: Matrix::from_flat(&p, res.iter().map(|r| one(r).reliable && !one(r).diverged).collect()),
        outcomes: Matrix::from_flat(&p, res.iter().map(one).collect()),
    })
}

/// `max d²` over the plan's two axes (mean-field Dicke model).
pub fn decorrelator_map(plan: &SweepPlan, eps_a: f64, eps_amp: f64) -> Result<Matrix<f64>> {
    require_2d(plan)?;
    plan.validate()?;
    let flat: Vec<f64> = (0..plan.n_cells())
        .into_par_iter()
        .map(|i| {
            let cell = plan.cell(i)?;
            let CellModel::Odm(o) = &cell.model else {
                return Err(invalid("model", "the decorrelator needs the Dicke model"));
            };
            Ok(decorrelator_run(o, eps_a, eps_amp, &plan.schedule, plan.dt, usize::MAX)?.max)
        })
        .collect::<Result<_>>()?;
    Ok(Matrix::from_flat(plan, flat))
}

/// Decorrelator map with the default perturbation sizes.
pub fn default_decorrelator_map(plan: &SweepPlan) -> Result<Matrix<f64>> {
    decorrelator_map(plan, DECORRELATOR_EPS_A, DECORRELATOR_EPS_AMP)
}

/// Steady-drive window of the order parameter (and photon number for the
/// Dicke model) over the last `cycles` periods after preparation.
fn steady_window(cell: &CellSpec, schedule: &Schedule, cycles: f64, stream: &mut NoiseStream) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let t_start = schedule.t_start(cell.t_d);
    let t_end = cycles * cell.t_d;
    let cfg = StepperConfig::new(cell.dt, t_start, t_end, 1)?;
    let skip = ((0.0 - t_start) / cell.dt - 1e-6).ceil() as usize;
    let mut x = Vec::new();
    let mut ph = Vec::new();
    let steady = |m: &CellModel| -> Result<CellModel> {
        Ok(match m {
            CellModel::Po(p) => {
                let mut q = p.clone();
                q.protocol = crate::drive::DriveProtocol::steady(p.protocol.base_frequency, p.protocol.amplitude)?;
                CellModel::Po(q)
            }
            CellModel::Odm(o) => {
                let mut q = o.clone();
                q.protocol = crate::drive::DriveProtocol::steady(o.protocol.base_frequency, o.protocol.amplitude)?;
                CellModel::Odm(q)
            }
        })
    };
    let model = steady(&cell.model)?;
    let diverged = match &model {
        CellModel::Po(p) => integrate_po(p, &cfg, stream, |k, _, s| {
            if k > skip {
                x.push(s.u.sin());
            }
        }),
        CellModel::Odm(o) => {
            let mut state = initial_state(o, stream);
            let st = OdmStepper::new(o);
            integrate_odm(o, &mut state, &cfg, stream, |k, _, s| {
                if k > skip {
                    x.push(st.sx_per_particle(s));
                    ph.push(st.photons(s));
                }
            })
        }
    };
    Ok(diverged.is_none().then_some((x, ph)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionResult {
    pub cell: usize,
    pub coordinates: Vec<(Axis, f64)>,
    pub mean: f64,
    pub se: f64,
    pub values: Vec<f64>,
    pub n_diverged: usize,
}

/// Ensemble-averaged crystalline fraction of the steady drive (no defect).
pub fn crystalline_point(plan: &SweepPlan, index: usize) -> Result<FractionResult> {
    let cell = plan.cell(index)?;
    let runs: Vec<Option<f64>> = (0..plan.n_traj)
        .into_par_iter()
        .map(|j| {
            let mut stream = NoiseStream::for_cell(plan.master_seed, index as u64, j as u64);
            Ok(match steady_window(&cell, &plan.schedule, CHI_CYCLES, &mut stream)? {
                Some((x, _)) => Some(crystalline_fraction(&x, cell.dt, TAU / cell.t_d)?),
                None => None,
            })
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = runs.iter().flatten().copied().collect();
    if values.is_empty() {
        return Err(Error::AllDiverged { n: plan.n_traj });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(FractionResult {
        cell: index,
        coordinates: cell.coordinates.clone(),
        mean,
        se: (var / n).sqrt(),
        n_diverged: runs.len() - values.len(),
        values,
    })
}

/// Dynamical phase of the steady drive for every cell (first trajectory).
pub fn phase_map(plan: &SweepPlan) -> Result<Vec<(Vec<(Axis, f64)>, DynamicalPhase)>> {
    plan.validate()?;
    (0..plan.n_cells())
        .into_par_iter()
        .map(|i| {
            let cell = plan.cell(i)?;
            let CellModel::Odm(o) = &cell.model else {
                return Err(invalid("model", "phase classification needs the Dicke model"));
            };
            let mut stream = NoiseStream::for_cell(plan.master_seed, i as u64, 0);
            let Some((x, ph)) = steady_window(&cell, &plan.schedule, CHI_CYCLES, &mut stream)? else {
                return Err(Error::AllDiverged { n: 1 });
            };
            let phase = classify_phase(&x, &ph, cell.dt, TAU / cell.t_d, &PhaseFloors::for_params(o))?;
            Ok((cell.coordinates.clone(), phase))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    payload: T,
}

/// Writes `value` as versioned JSON. Floats round-trip exactly.
pub fn persist<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        payload: value,
    };
    let text = serde_json::to_string_pretty(&env).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a value written by [`persist`], rejecting other schema versions.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: p.clone(),
        source,
    })?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: p.clone(),
        reason: e.to_string(),
    })?;
    let found = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Parse {
            path: p.clone(),
            reason: "missing schema_version".into(),
        })? as u32;
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let env: Envelope<T> = serde_json::from_value(raw).map_err(|e| Error::Parse {
        path: p,
        reason: e.to_string(),
    })?;
    Ok(env.payload)
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// One row per trajectory: cell, axis values, trajectory index and outcome.
pub fn write_outcomes_csv(results: &[EnsembleResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["cell".to_string()];
    if let Some(r) = results.first() {
        header.extend(r.coordinates.iter().map(|(a, _)| a.name().to_string()));
    }
    header.extend(["trajectory", "delta_phi", "flipped", "w", "diverged", "reliable"].map(String::from));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in results {
        for (j, o) in r.outcomes.iter().enumerate() {
            let mut row = vec![r.cell.to_string()];
            row.extend(r.coordinates.iter().map(|(_, v)| v.to_string()));
            row.extend([
                j.to_string(),
                o.delta_phi.to_string(),
                o.flipped.to_string(),
                o.w.to_string(),
                o.diverged.to_string(),
                o.reliable.to_string(),
            ]);
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One row per cell with `P_s`, its standard error and the modal `w`.
pub fn write_aggregate_csv(results: &[EnsembleResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["cell".to_string()];
    if let Some(r) = results.first() {
        header.extend(r.coordinates.iter().map(|(a, _)| a.name().to_string()));
    }
    header.extend(["p_s", "se", "n_valid", "n_diverged", "most_probable_w"].map(String::from));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in results {
        let mut row = vec![r.cell.to_string()];
        row.extend(r.coordinates.iter().map(|(_, v)| v.to_string()));
        row.extend([
            r.p_s().to_string(),
            r.stats.map_or(f64::NAN, |s| s.se).to_string(),
            r.stats.map_or(0, |s| s.n_valid).to_string(),
            r.n_diverged.to_string(),
            r.histogram.most_probable().unwrap_or(f64::NAN).to_string(),
        ]);
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Matrix with a header row of column-axis values and a leading row-axis column.
pub fn write_matrix_csv<T: ToString>(m: &Matrix<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec![format!("{}\\{}", m.row_axis.name(), m.col_axis.name())];
    header.extend(m.col_values.iter().map(|v| v.to_string()));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (v, row) in m.row_values.iter().zip(&m.rows) {
        let mut rec = vec![v.to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes a header and string rows as CSV.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Time column followed by every channel of the trajectory.
pub fn write_trajectory_csv(traj: &crate::trajectory::Trajectory, path: &Path) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(traj.channels.iter().map(|c| c.name.clone()));
    let rows: Vec<Vec<String>> = (0..traj.len())
        .map(|i| {
            let mut r = vec![traj.time(i).to_string()];
            r.extend(traj.channels.iter().map(|c| c.values[i].to_string()));
            r
        })
        .collect();
    write_table(path, &header, &rows)
}

/// Long-format winding histograms: one row per non-empty bin per cell.
pub fn write_histogram_csv(results: &[EnsembleResult], path: &Path) -> Result<()> {
    let mut header = vec!["cell".to_string()];
    if let Some(r) = results.first() {
        header.extend(r.coordinates.iter().map(|(a, _)| a.name().to_string()));
    }
    header.extend(["w_bin_center", "mass"].map(String::from));
    let mut rows = Vec::new();
    for r in results {
        for &(bin, mass) in &r.histogram.bins {
            let mut row = vec![r.cell.to_string()];
            row.extend(r.coordinates.iter().map(|(_, v)| v.to_string()));
            row.extend([(bin as f64 * r.histogram.bin_width).to_string(), mass.to_string()]);
            rows.push(row);
        }
    }
    write_table(path, &header, &rows)
}
