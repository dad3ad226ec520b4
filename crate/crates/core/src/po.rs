//! Thermal parametric pendulum
//! `ü + γu̇ + Ω² f(t) sin u = η(t)`, `⟨η(t)η(t')⟩ = 2T̃Ω²γ δ(t − t')`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::drive::DriveProtocol;
use crate::error::{invalid, Result};
use crate::integrator::{heun_step_stoch, HeunWorkspace, NoiseStream, StepperConfig, SCHEME_NAME};
use crate::trajectory::{Trajectory, TrajectoryMeta};

/// Above this temperature the subharmonic loses coherence over long runs.
pub const COHERENCE_TEMPERATURE_LIMIT: f64 = 2e-4;

/// Initial angle used for every pendulum run unless overridden.
pub const DEFAULT_U0: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoState {
    pub u: f64,
    pub v: f64,
}

impl Default for PoState {
    fn default() -> Self {
        Self {
            u: DEFAULT_U0,
            v: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoParams {
    pub omega: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub protocol: DriveProtocol,
    #[serde(default)]
    pub initial: PoState,
}

impl PoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            return Err(invalid("omega", format!("must be positive, got {}", self.omega)));
        }
        if !(self.gamma >= 0.0) {
            return Err(invalid("gamma", format!("must be non-negative, got {}", self.gamma)));
        }
        if !(self.temperature >= 0.0) {
            return Err(invalid(
                "temperature",
                format!("must be non-negative, got {}", self.temperature),
            ));
        }
        Ok(())
    }

    pub fn exceeds_coherence_limit(&self) -> bool {
        self.temperature > COHERENCE_TEMPERATURE_LIMIT
    }
}

/// `(ω_r, A_r) = (2Ω, 2γ/Ω)`.
pub fn po_resonance(omega: f64, gamma: f64) -> (f64, f64) {
    (2.0 * omega, 2.0 * gamma / omega)
}

#[inline]
fn accel(u: f64, v: f64, f: f64, omega2: f64, gamma: f64) -> f64 {
    -gamma * v - omega2 * f * u.sin()
}

/// Deterministic part `(du/dt, dv/dt)`.
pub fn po_drift(state: PoState, t: f64, params: &PoParams) -> (f64, f64) {
    let f = params.protocol.drive_value(t);
    (
        state.v,
        accel(state.u, state.v, f, params.omega * params.omega, params.gamma),
    )
}

/// Standard deviation of the velocity kick per step of length `dt`.
pub fn po_noise_sigma(params: &PoParams, dt: f64) -> f64 {
    (2.0 * params.temperature * params.omega * params.omega * params.gamma * dt).sqrt()
}

/// Oscillator energy `v²/2 + Ω²(1 − cos u)` of the undriven pendulum.
pub fn po_energy(state: PoState, omega: f64) -> f64 {
    0.5 * state.v * state.v + omega * omega * (1.0 - state.u.cos())
}

/// Steps the pendulum over `config`, calling `observe(step, t, state)` at
/// every sample point (including the initial state).
///
/// Returns the divergence time if the state became non-finite.
pub fn integrate_po<F>(
    params: &PoParams,
    config: &StepperConfig,
    stream: &mut NoiseStream,
    mut observe: F,
) -> Option<f64>
where
    F: FnMut(usize, f64, PoState),
{
    let omega2 = params.omega * params.omega;
    let gamma = params.gamma;
    let dt = config.dt;
    let amp = (2.0 * params.temperature * omega2 * gamma).sqrt();
    let noisy = amp > 0.0;
    let amplitude = [0.0, amp];
    let sqrt_dt = dt.sqrt();
    let mut x = [params.initial.u, params.initial.v];
    let mut ws = HeunWorkspace::new(2);
    let mut dw = [0.0; 2];

    let n = config.n_steps();
    let mut t = config.t_start;
    let mut f_now = params.protocol.drive_value(t);
    observe(0, t, PoState { u: x[0], v: x[1] });
    for k in 0..n {
        let t_next = config.time_at(k + 1);
        let f_next = params.protocol.drive_value(t_next);
        if noisy {
            dw[1] = sqrt_dt * stream.standard_normal();
        }
        let res = heun_step_stoch(
            |tt, s, d| {
                let f = if tt == t { f_now } else { f_next };
                d[0] = s[1];
                d[1] = accel(s[0], s[1], f, omega2, gamma);
            },
            &amplitude,
            &mut x,
            t,
            t_next - t,
            &dw,
            &mut ws,
        );
        if res.is_err() {
            return Some(t_next);
        }
        t = t_next;
        f_now = f_next;
        if (k + 1) % config.sample_stride == 0 {
            observe(k + 1, t, PoState { u: x[0], v: x[1] });
        }
    }
    None
}

/// Full trajectory of `x = sin u`, with the angle `u` as a second channel.
pub fn simulate_po(
    params: &PoParams,
    config: &StepperConfig,
    stream: &mut NoiseStream,
) -> Result<Trajectory> {
    params.validate()?;
    if params.exceeds_coherence_limit() {
        warn!(
            "temperature {} exceeds {COHERENCE_TEMPERATURE_LIMIT}; subharmonic coherence is lost at long times",
            params.temperature
        );
    }
    let meta = TrajectoryMeta {
        model: "po".into(),
        master_seed: stream.master_seed(),
        trajectory_index: stream.trajectory_index(),
        dt: config.dt,
        scheme: SCHEME_NAME.into(),
    };
    let cap = config.n_steps() / config.sample_stride + 1;
    let mut traj = Trajectory::new(config.t_start, config.sample_dt(), &["x", "u"], cap, meta);
    let diverged = integrate_po(params, config, stream, |_, _, s| {
        traj.push(&[s.u.sin(), s.u]);
    });
    traj.diverged_at = diverged;
    Ok(traj)
}
