//! Open Dicke model: a lossy cavity mode coupled to `N` two-level systems
//! through `λ(t) = λ₀ f(t)`.
//!
//! Three resolutions share one stepping kernel:
//!
//! * mean field: rescaled `α = a/√N`, `s = S/N`, no noise;
//! * TWA: extensive cavity quadratures and collective spin `S`, vacuum
//!   sampled cavity and additive cavity noise `√(κ/2) dW`;
//! * DTWA: per-spin vectors `σ_i` with `σ^x, σ^y ∈ {±1}`, `σ^z = −1`.
//!
//! The spins only feel the cavity through `a_R`, so every spin precesses
//! about the same axis `(g a_R, 0, ω₀)`. The corrector applies the averaged
//! axis as an exact rotation, which keeps every spin length fixed.

use serde::{Deserialize, Serialize};

use crate::drive::DriveProtocol;
use crate::error::{invalid, Error, Result};
use crate::integrator::{NoiseStream, Rotation, StepperConfig, SCHEME_NAME};
use crate::trajectory::{Trajectory, TrajectoryMeta};

/// Seed of the normal-phase initial state.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Photon number above which quantum noise stops mattering.
pub const MACROSCOPIC_PHOTONS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdmMethod {
    MeanField,
    Twa,
    Dtwa,
}

/// How DTWA stores its spins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinResolution {
    /// Every `σ_i` evolved explicitly.
    PerSpin,
    /// Only `Σσ_i` evolved; exact because the spin equations are linear in
    /// `σ_i` with shared coefficients.
    #[default]
    Collective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmParams {
    pub omega: f64,
    pub omega0: f64,
    pub kappa: f64,
    pub lambda0: f64,
    /// Particle number; for mean field it only sets decorrelator and photon scales.
    pub n: f64,
    pub protocol: DriveProtocol,
    pub method: OdmMethod,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// When false, Wiener terms are dropped and only initial sampling remains.
    #[serde(default = "default_true")]
    pub temporal_noise: bool,
    #[serde(default)]
    pub resolution: SpinResolution,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_true() -> bool {
    true
}

impl OdmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            return Err(invalid("omega", format!("must be positive, got {}", self.omega)));
        }
        if !(self.omega0 > 0.0) {
            return Err(invalid("omega0", format!("must be positive, got {}", self.omega0)));
        }
        if !(self.kappa >= 0.0) {
            return Err(invalid("kappa", format!("must be non-negative, got {}", self.kappa)));
        }
        if !(self.lambda0 >= 0.0) {
            return Err(invalid(
                "lambda0",
                format!("must be non-negative, got {}", self.lambda0),
            ));
        }
        if self.method != OdmMethod::MeanField && !(self.n >= 1.0) {
            return Err(invalid("N", format!("must be at least 1, got {}", self.n)));
        }
        if self.method == OdmMethod::Dtwa && self.n.fract() != 0.0 {
            return Err(invalid("N", "DTWA needs an integer particle number"));
        }
        Ok(())
    }

    pub fn lambda_c(&self) -> f64 {
        lambda_c(self.omega, self.kappa)
    }
}

/// Critical coupling `½√(κ² + ω²)` (for `ω = ω₀`).
pub fn lambda_c(omega: f64, kappa: f64) -> f64 {
    0.5 * (kappa * kappa + omega * omega).sqrt()
}

/// Lower polariton frequency `ω₋`.
///
/// Fails when either the inner root or `ω₋²` itself is negative; in the
/// latter case the soft mode is overdamped and has no real frequency.
pub fn lower_polariton(omega: f64, kappa: f64, lambda0: f64) -> Result<f64> {
    let lc = lambda_c(omega, kappa);
    let r = lambda0 / lc;
    let inner = r * r * (omega * omega + kappa * kappa) - kappa * kappa;
    if inner < 0.0 {
        return Err(Error::PolaritonDomain(format!(
            "inner radicand (λ₀/λ_c)²(ω²+κ²) − κ² = {inner:.6} < 0"
        )));
    }
    let w2 = omega * omega - 0.25 * kappa * kappa - omega * inner.sqrt();
    if w2 < 0.0 {
        return Err(Error::PolaritonDomain(format!(
            "ω₋² = {w2:.6} < 0: the soft mode is overdamped"
        )));
    }
    Ok(w2.sqrt())
}

/// `(ω_r, A_r) = (2ω₋, ω√(1 − (λ₀/λ_c)²) κ/(κ² + ω²))`.
pub fn odm_resonance(omega: f64, kappa: f64, lambda0: f64) -> Result<(f64, f64)> {
    let wm = lower_polariton(omega, kappa, lambda0)?;
    Ok((2.0 * wm, resonance_amplitude(omega, kappa, lambda0)))
}

/// Threshold amplitude alone; defined even where `ω₋` is not real.
pub fn resonance_amplitude(omega: f64, kappa: f64, lambda0: f64) -> f64 {
    let r = lambda0 / lambda_c(omega, kappa);
    omega * (1.0 - r * r).max(0.0).sqrt() * kappa / (kappa * kappa + omega * omega)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpinState {
    /// Mean field `s`, TWA `S`, or collective DTWA `Σσ_i`.
    Collective([f64; 3]),
    /// DTWA spins stored by component.
    PerSpin { x: Vec<f64>, y: Vec<f64>, z: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmState {
    pub a_r: f64,
    pub a_i: f64,
    pub spin: SpinState,
}

impl OdmState {
    /// Spin components summed in fixed index order.
    pub fn spin_sum(&self) -> [f64; 3] {
        match &self.spin {
            SpinState::Collective(s) => *s,
            SpinState::PerSpin { x, y, z } => [x.iter().sum(), y.iter().sum(), z.iter().sum()],
        }
    }
}

/// Per-method coefficients of the shared kernel.
#[derive(Debug, Clone, Copy)]
struct Couplings {
    /// `ȧ_I ∋ −cavity · λ · X` for the stored spin-x variable `X`.
    cavity: f64,
    /// Precession rate about x is `spin · λ · a_R`.
    spin: f64,
    /// Wiener amplitude on each quadrature.
    noise: f64,
    /// Converts the stored spin-x variable to `S^x/N`.
    sx_scale: f64,
    /// Converts `|a|²` of the stored cavity to the reported photon number.
    photon_scale: f64,
}

fn couplings(p: &OdmParams) -> Couplings {
    let root_n = p.n.sqrt();
    let noise = if p.temporal_noise {
        (p.kappa / 2.0).sqrt()
    } else {
        0.0
    };
    match p.method {
        OdmMethod::MeanField => Couplings {
            cavity: 2.0,
            spin: 4.0,
            noise: 0.0,
            sx_scale: 1.0,
            photon_scale: 1.0,
        },
        OdmMethod::Twa => Couplings {
            cavity: 2.0 / root_n,
            spin: 4.0 / root_n,
            noise,
            sx_scale: 1.0 / p.n,
            photon_scale: 1.0,
        },
        OdmMethod::Dtwa => Couplings {
            cavity: 1.0 / root_n,
            spin: 4.0 / root_n,
            noise,
            sx_scale: 0.5 / p.n,
            photon_scale: 1.0,
        },
    }
}

/// Samples the starting state for `params.method`.
pub fn initial_state(params: &OdmParams, stream: &mut NoiseStream) -> OdmState {
    let eps = params.epsilon;
    let root = (1.0 - eps * eps).sqrt();
    match params.method {
        OdmMethod::MeanField => OdmState {
            a_r: eps,
            a_i: 0.0,
            spin: SpinState::Collective([0.5 * eps, 0.0, -0.5 * root]),
        },
        OdmMethod::Twa => {
            let (a_r, a_i) = vacuum(stream);
            let n = params.n;
            OdmState {
                a_r,
                a_i,
                spin: SpinState::Collective([0.5 * eps * n, 0.0, -0.5 * n * root]),
            }
        }
        OdmMethod::Dtwa => {
            let (a_r, a_i) = vacuum(stream);
            let n = params.n as usize;
            let mut sample = || if stream.coin() { 1.0 } else { -1.0 };
            match params.resolution {
                SpinResolution::PerSpin => {
                    let mut x = Vec::with_capacity(n);
                    let mut y = Vec::with_capacity(n);
                    for _ in 0..n {
                        x.push(sample());
                        y.push(sample());
                    }
                    OdmState {
                        a_r,
                        a_i,
                        spin: SpinState::PerSpin { x, y, z: vec![-1.0; n] },
                    }
                }
                SpinResolution::Collective => {
                    let (mut sx, mut sy) = (0.0, 0.0);
                    for _ in 0..n {
                        sx += sample();
                        sy += sample();
                    }
                    OdmState {
                        a_r,
                        a_i,
                        spin: SpinState::Collective([sx, sy, -(n as f64)]),
                    }
                }
            }
        }
    }
}

/// Vacuum Wigner sample `a = (ζ_R + iζ_I)/2`.
fn vacuum(stream: &mut NoiseStream) -> (f64, f64) {
    let zr = stream.standard_normal();
    let zi = stream.standard_normal();
    (0.5 * zr, 0.5 * zi)
}

/// Drift of the flattened state `[a_R, a_I, spin...]` and the additive
/// diffusion amplitudes of the two cavity quadratures.
///
/// Per-spin states are flattened component-major: all x, then all y, then all z.
pub fn odm_drift_diffusion(state: &OdmState, t: f64, params: &OdmParams) -> (Vec<f64>, [f64; 2]) {
    let c = couplings(params);
    let lambda = params.lambda0 * params.protocol.drive_value(t);
    let [sx, _, _] = state.spin_sum();
    let (w, w0, k) = (params.omega, params.omega0, params.kappa);
    let g = c.spin * lambda * state.a_r;
    let mut out = vec![
        w * state.a_i - k * state.a_r,
        -(w * state.a_r + c.cavity * lambda * sx + k * state.a_i),
    ];
    let push_spin = |v: [f64; 3]| [-w0 * v[1], w0 * v[0] - g * v[2], g * v[1]];
    match &state.spin {
        SpinState::Collective(s) => out.extend_from_slice(&push_spin(*s)),
        SpinState::PerSpin { x, y, z } => {
            let d: Vec<[f64; 3]> = (0..x.len())
                .map(|i| push_spin([x[i], y[i], z[i]]))
                .collect();
            for comp in 0..3 {
                out.extend(d.iter().map(|v| v[comp]));
            }
        }
    }
    (out, [c.noise, c.noise])
}

/// Rotation-vector factors for `(1 − cos θ)/θ²` and `sin θ/θ`.
#[inline]
fn rotation(axis_x: f64, axis_z: f64, dt: f64) -> Rotation {
    Rotation::from_rotation_vector([axis_x * dt, 0.0, axis_z * dt])
}

/// Stateless stepping kernel for one parameter set.
#[derive(Debug, Clone)]
pub struct OdmStepper<'a> {
    params: &'a OdmParams,
    c: Couplings,
}

impl<'a> OdmStepper<'a> {
    pub fn new(params: &'a OdmParams) -> Self {
        Self {
            params,
            c: couplings(params),
        }
    }

    pub fn noise_amplitude(&self) -> f64 {
        self.c.noise
    }

    /// `S^x/N` of a state.
    pub fn sx_per_particle(&self, state: &OdmState) -> f64 {
        let x = match &state.spin {
            SpinState::Collective(s) => s[0],
            SpinState::PerSpin { x, .. } => x.iter().sum(),
        };
        x * self.c.sx_scale
    }

    pub fn photons(&self, state: &OdmState) -> f64 {
        (state.a_r * state.a_r + state.a_i * state.a_i) * self.c.photon_scale
    }

    /// One step from `t` with drive factors `f_now = f(t)`, `f_next = f(t+dt)`
    /// and cavity increments `dw` (already scaled by `√dt`).
    pub fn step(
        &self,
        state: &mut OdmState,
        f_now: f64,
        f_next: f64,
        dt: f64,
        dw: [f64; 2],
    ) -> bool {
        let p = self.params;
        let (w, w0, k) = (p.omega, p.omega0, p.kappa);
        let l_now = p.lambda0 * f_now;
        let l_next = p.lambda0 * f_next;
        let (sx, sy) = match &state.spin {
            SpinState::Collective(s) => (s[0], s[1]),
            SpinState::PerSpin { x, y, .. } => (x.iter().sum::<f64>(), y.iter().sum::<f64>()),
        };
        let (ar, ai) = (state.a_r, state.a_i);
        let n1 = self.c.noise * dw[0];
        let n2 = self.c.noise * dw[1];

        let k1r = w * ai - k * ar;
        let k1i = -(w * ar + self.c.cavity * l_now * sx + k * ai);
        let pr = ar + dt * k1r + n1;
        let pi = ai + dt * k1i + n2;
        // predictor of the spin-x variable: ẋ = −ω₀ y
        let psx = sx - dt * w0 * sy;
        let k2r = w * pi - k * pr;
        let k2i = -(w * pr + self.c.cavity * l_next * psx + k * pi);
        state.a_r = ar + 0.5 * dt * (k1r + k2r) + n1;
        state.a_i = ai + 0.5 * dt * (k1i + k2i) + n2;

        let gx = 0.5 * self.c.spin * (l_now * ar + l_next * pr);
        let rot = rotation(gx, w0, dt);
        match &mut state.spin {
            SpinState::Collective(s) => *s = rot.apply(*s),
            SpinState::PerSpin { x, y, z } => {
                for i in 0..x.len() {
                    let v = rot.apply([x[i], y[i], z[i]]);
                    x[i] = v[0];
                    y[i] = v[1];
                    z[i] = v[2];
                }
            }
        }
        state.a_r.is_finite()
            && state.a_i.is_finite()
            && match &state.spin {
                SpinState::Collective(s) => s.iter().all(|v| v.is_finite()),
                SpinState::PerSpin { x, .. } => x.first().is_none_or(|v| v.is_finite()),
            }
    }
}

/// Steps from `state` over `config`, calling `observe(step, t, state)` at
/// every sample point. Returns the divergence time, if any.
pub fn integrate_odm<F>(
    params: &OdmParams,
    state: &mut OdmState,
    config: &StepperConfig,
    stream: &mut NoiseStream,
    mut observe: F,
) -> Option<f64>
where
    F: FnMut(usize, f64, &OdmState),
{
    let stepper = OdmStepper::new(params);
    let noisy = stepper.noise_amplitude() > 0.0;
    let sqrt_dt = config.dt.sqrt();
    let n = config.n_steps();
    let mut t = config.t_start;
    let mut f_now = params.protocol.drive_value(t);
    observe(0, t, state);
    for k in 0..n {
        let t_next = config.time_at(k + 1);
        let f_next = params.protocol.drive_value(t_next);
        let dw = if noisy {
            [
                sqrt_dt * stream.standard_normal(),
                sqrt_dt * stream.standard_normal(),
            ]
        } else {
            [0.0, 0.0]
        };
        if !stepper.step(state, f_now, f_next, t_next - t, dw) {
            return Some(t_next);
        }
        t = t_next;
        f_now = f_next;
        if (k + 1) % config.sample_stride == 0 {
            observe(k + 1, t, state);
        }
    }
    None
}

/// Samples an initial state and records `S^x/N` and the photon number.
pub fn simulate_odm(
    params: &OdmParams,
    config: &StepperConfig,
    stream: &mut NoiseStream,
) -> Result<Trajectory> {
    params.validate()?;
    let mut state = initial_state(params, stream);
    let stepper = OdmStepper::new(params);
    let meta = TrajectoryMeta {
        model: format!("odm/{}", method_name(params.method)),
        master_seed: stream.master_seed(),
        trajectory_index: stream.trajectory_index(),
        dt: config.dt,
        scheme: SCHEME_NAME.into(),
    };
    let cap = config.n_steps() / config.sample_stride + 1;
    let mut traj = Trajectory::new(config.t_start, config.sample_dt(), &["sx", "photons"], cap, meta);
    let diverged = integrate_odm(params, &mut state, config, stream, |_, _, s| {
        traj.push(&[stepper.sx_per_particle(s), stepper.photons(s)]);
    });
    traj.diverged_at = diverged;
    Ok(traj)
}

pub fn method_name(m: OdmMethod) -> &'static str {
    match m {
        OdmMethod::MeanField => "mean_field",
        OdmMethod::Twa => "twa",
        OdmMethod::Dtwa => "dtwa",
    }
}
