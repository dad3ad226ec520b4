//! Explicit Heun (predictor-corrector) stepping and reproducible Gaussian noise.
//!
//! Both physical models share these steppers. Noise is additive everywhere,
//! so the Itô and Stratonovich readings of the stochastic step agree and the
//! corrector only needs to average the drift.
//!
//! Spin precession in the Dicke model uses [`Rotation`], which applies the
//! corrector's averaged precession vector as an exact rotation so that spin
//! lengths are preserved to rounding error.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Name recorded in output metadata for the stepping scheme.
pub const SCHEME_NAME: &str = "heun-predictor-corrector (additive noise); spins: averaged-axis exact rotation";

/// Default step in units of the inverse natural frequency.
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub sample_stride: usize,
}

impl StepperConfig {
    pub fn new(dt: f64, t_start: f64, t_end: f64, sample_stride: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {dt}")));
        }
        if !(t_end > t_start) {
            return Err(invalid(
                "t_end",
                format!("must exceed t_start ({t_end} <= {t_start})"),
            ));
        }
        if sample_stride == 0 {
            return Err(invalid("sample_stride", "must be at least 1"));
        }
        Ok(Self {
            dt,
            t_start,
            t_end,
            sample_stride,
        })
    }

    /// Shrinks `dt_max` so that `period` is an integer number of steps.
    ///
    /// Sliding windows over whole periods then land exactly on sample points.
    pub fn snapped_dt(period: f64, dt_max: f64) -> f64 {
        let n = (period / dt_max).ceil().max(1.0);
        period / n
    }

    pub fn n_steps(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt).round() as usize
    }

    pub fn time_at(&self, step: usize) -> f64 {
        self.t_start + step as f64 * self.dt
    }

    pub fn sample_dt(&self) -> f64 {
        self.dt * self.sample_stride as f64
    }
}

/// Counter-based Gaussian source keyed by `(master_seed, trajectory_index)`.
///
/// The ChaCha stream id carries the trajectory index, so the sequence a
/// trajectory sees does not depend on which worker runs it or when.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    master_seed: u64,
    trajectory_index: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl NoiseStream {
    pub fn new(master_seed: u64, trajectory_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(trajectory_index);
        Self {
            master_seed,
            trajectory_index,
            rng,
        }
    }

    /// Stream for trajectory `trajectory` of grid cell `cell`.
    pub fn for_cell(master_seed: u64, cell: u64, trajectory: u64) -> Self {
        Self::new(splitmix64(master_seed ^ splitmix64(cell)), trajectory)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn trajectory_index(&self) -> u64 {
        self.trajectory_index
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.master_seed, self.trajectory_index);
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.standard_normal();
        }
    }

    pub fn gaussian_increments(&mut self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill_gaussian(&mut v);
        v
    }

    /// Uniform random bit, used for discrete spin sampling.
    #[inline]
    pub fn coin(&mut self) -> bool {
        self.rng.next_u32() & 1 == 1
    }
}

/// Scratch buffers reused across steps.
#[derive(Debug, Clone, Default)]
pub struct HeunWorkspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    pred: Vec<f64>,
}

impl HeunWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            pred: vec![0.0; dim],
        }
    }

    fn fit(&mut self, dim: usize) {
        if self.k1.len() != dim {
            *self = Self::new(dim);
        }
    }
}

fn check_finite(state: &[f64], t: f64) -> Result<()> {
    if state.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { t })
    }
}

/// One deterministic Heun step, in place.
///
/// `drift(t, x, dxdt)` writes the time derivative at `(t, x)`.
pub fn heun_step_det<F>(
    mut drift: F,
    state: &mut [f64],
    t: f64,
    dt: f64,
    ws: &mut HeunWorkspace,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = state.len();
    ws.fit(n);
    drift(t, state, &mut ws.k1);
    for i in 0..n {
        ws.pred[i] = state[i] + dt * ws.k1[i];
    }
    drift(t + dt, &ws.pred, &mut ws.k2);
    for i in 0..n {
        state[i] += 0.5 * dt * (ws.k1[i] + ws.k2[i]);
    }
    check_finite(state, t + dt)
}

/// One Heun step with additive noise `amplitude[i] * dw[i]`, in place.
///
/// The same increment enters predictor and corrector, so a zero increment
/// reproduces [`heun_step_det`] exactly.
pub fn heun_step_stoch<F>(
    mut drift: F,
    amplitude: &[f64],
    state: &mut [f64],
    t: f64,
    dt: f64,
    dw: &[f64],
    ws: &mut HeunWorkspace,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = state.len();
    debug_assert_eq!(amplitude.len(), n);
    debug_assert_eq!(dw.len(), n);
    ws.fit(n);
    drift(t, state, &mut ws.k1);
    for i in 0..n {
        ws.pred[i] = state[i] + dt * ws.k1[i] + amplitude[i] * dw[i];
    }
    drift(t + dt, &ws.pred, &mut ws.k2);
    for i in 0..n {
        state[i] += 0.5 * dt * (ws.k1[i] + ws.k2[i]) + amplitude[i] * dw[i];
    }
    check_finite(state, t + dt)
}

/// Orthogonal 3x3 rotation built from a rotation vector (axis * angle).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation([[f64; 3]; 3]);

impl Rotation {
    pub fn from_rotation_vector(v: [f64; 3]) -> Self {
        let theta2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        // sin(θ)/θ and (1 − cos θ)/θ² with series fallback near zero
        let (a, b) = if theta2 < 1e-12 {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            let theta = theta2.sqrt();
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        let [x, y, z] = v;
        Self([
            [
                1.0 - b * (y * y + z * z),
                -a * z + b * x * y,
                a * y + b * x * z,
            ],
            [
                a * z + b * x * y,
                1.0 - b * (x * x + z * z),
                -a * x + b * y * z,
            ],
            [
                -a * y + b * x * z,
                a * x + b * y * z,
                1.0 - b * (x * x + y * y),
            ],
        ])
    }

    #[inline]
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }
}
