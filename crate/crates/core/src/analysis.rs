//! Subharmonic phase extraction and the statistics built on it.
//!
//! The complex amplitude of an observable `O` at response frequency `ω_R` is
//!
//! ```text
//! O_R(t) = (ω_R/π) ∫_t^{t+2π/ω_R} e^{iω_R τ} O(τ) dτ,
//! ```
//!
//! so `O = R cos(ω_R τ + φ₀)` gives `O_R = R e^{−iφ₀}`, i.e. `φ = −φ₀`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::drive::wrap_angle;
use crate::error::{invalid, Error, Result};
use crate::integrator::{NoiseStream, StepperConfig};
use crate::odm::{integrate_odm, initial_state, OdmMethod, OdmParams, OdmState, OdmStepper};
use crate::po::{integrate_po, PoParams};

/// Circular variance above which a phase window is not considered steady.
pub const STEADY_CIRCULAR_VARIANCE: f64 = 0.5;
/// Half-width of a winding histogram bin is `WINDING_BIN_WIDTH / 2`.
pub const WINDING_BIN_WIDTH: f64 = 0.1;
/// Minimum mean response amplitude for a window to count as period doubled.
pub const AMPLITUDE_FLOOR: f64 = 1e-4;
/// Response threshold of the resonance scan.
pub const ONSET_THRESHOLD: f64 = 1e-4;
/// `χ` at or above which a steady state is labelled a time crystal.
pub const DTC_FRACTION: f64 = 0.5;
/// Time-averaged `|S^x|/N` floor of the superradiant label.
pub const SX_FLOOR: f64 = 0.05;
/// Irregular-dynamics threshold on `max d²`.
pub const IRREGULAR_DECORRELATION: f64 = 0.1;

/// Windowed complex amplitude sampled at window start times `t0 + i·dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries {
    pub t0: f64,
    pub dt: f64,
    pub omega_r: f64,
    pub r: Vec<f64>,
    /// Wrapped into `[−π, π)`.
    pub phi: Vec<f64>,
    pub phi_unwrapped: Vec<f64>,
}

impl PhaseSeries {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Window length `2π/ω_R`.
    pub fn window(&self) -> f64 {
        TAU / self.omega_r
    }

    /// Index range of evaluation times inside `[a, b]`.
    pub fn range(&self, a: f64, b: f64) -> Result<std::ops::Range<usize>> {
        let tol = 1e-6 * self.dt;
        let lo = ((a - self.t0 - tol) / self.dt).ceil();
        let hi = ((b - self.t0 + tol) / self.dt).floor();
        if lo < 0.0 || hi >= self.len() as f64 || hi < lo {
            return Err(Error::WindowTruncated {
                needed: b,
                available: self.time(self.len().saturating_sub(1)),
            });
        }
        Ok(lo as usize..hi as usize + 1)
    }

    pub fn value_at(&self, t: f64) -> Result<Complex64> {
        let i = self.range(t, t)?.start;
        Ok(Complex64::from_polar(self.r[i], self.phi[i]))
    }
}

/// Sliding trapezoidal evaluation of the complex amplitude.
///
/// `values` are uniformly spaced by `dt` starting at `t0`; one amplitude is
/// produced for every start time whose window fits in the series. Windows
/// that are not a whole number of samples end with a linearly interpolated
/// partial panel.
pub fn complex_amplitude(values: &[f64], t0: f64, dt: f64, omega_r: f64) -> Result<PhaseSeries> {
    if !(omega_r > 0.0) {
        return Err(invalid("omega_R", format!("must be positive, got {omega_r}")));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    let window = TAU / omega_r;
    let steps = window / dt;
    let mut m = steps.round();
    if (steps - m).abs() > 1e-9 * steps.max(1.0) {
        m = steps.floor();
    }
    let frac = steps - m;
    let m = m as usize;
    let needed = m + usize::from(frac > 0.0) + 1;
    if values.len() < needed {
        return Err(Error::WindowTruncated {
            needed: t0 + needed as f64 * dt,
            available: t0 + values.len().saturating_sub(1) as f64 * dt,
        });
    }
    let n_eval = values.len() - needed + 1;

    let g: Vec<Complex64> = values
        .iter()
        .enumerate()
        .map(|(k, &o)| {
            let (s, c) = (omega_r * (t0 + k as f64 * dt)).sin_cos();
            Complex64::new(c * o, s * o)
        })
        .collect();
    let mut prefix = Vec::with_capacity(g.len() + 1);
    prefix.push(Complex64::new(0.0, 0.0));
    let mut acc = Complex64::new(0.0, 0.0);
    for v in &g {
        acc += v;
        prefix.push(acc);
    }

    let scale = omega_r / PI;
    let mut r = Vec::with_capacity(n_eval);
    let mut phi = Vec::with_capacity(n_eval);
    for i in 0..n_eval {
        let j = i + m;
        let mut integral = (prefix[j + 1] - prefix[i] - 0.5 * (g[i] + g[j])) * dt;
        if frac > 0.0 {
            let o_end = values[j] + frac * (values[j + 1] - values[j]);
            let tau = t0 + (j as f64 + frac) * dt;
            let (s, c) = (omega_r * tau).sin_cos();
            let g_end = Complex64::new(c * o_end, s * o_end);
            integral += 0.5 * frac * dt * (g[j] + g_end);
        }
        let z = integral * scale;
        r.push(z.norm());
        phi.push(wrap_angle(z.arg()));
    }
    let phi_unwrapped = unwrap(&phi);
    Ok(PhaseSeries {
        t0,
        dt,
        omega_r,
        r,
        phi,
        phi_unwrapped,
    })
}

/// Removes `2π` jumps between consecutive samples.
pub fn unwrap(phi: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phi.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &p in phi {
        if let Some(q) = prev {
            let d = p - q;
            if d > PI {
                offset -= TAU * ((d - PI) / TAU).floor() + TAU;
            } else if d < -PI {
                offset += TAU * ((-d - PI) / TAU).floor() + TAU;
            }
        }
        out.push(p + offset);
        prev = Some(p);
    }
    out
}

/// Circular mean (wrapped) and circular variance `1 − |⟨e^{iφ}⟩|`.
pub fn circular_mean(phi: &[f64]) -> (f64, f64) {
    if phi.is_empty() {
        return (0.0, 1.0);
    }
    let (s, c) = phi
        .iter()
        .fold((0.0, 0.0), |(s, c), p| (s + p.sin(), c + p.cos()));
    let n = phi.len() as f64;
    let rbar = (s * s + c * c).sqrt() / n;
    (wrap_angle(s.atan2(c)), 1.0 - rbar)
}

/// Time offsets of the prepare/defect/relax/measure schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub prep_cycles: f64,
    pub relax_cycles: f64,
    pub measure_cycles: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            prep_cycles: 100.0,
            relax_cycles: 100.0,
            measure_cycles: 20.0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prep_cycles", self.prep_cycles),
            ("relax_cycles", self.relax_cycles),
            ("measure_cycles", self.measure_cycles),
        ] {
            if !(v > 0.0) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.measure_cycles > self.prep_cycles {
            return Err(invalid("measure_cycles", "may not exceed prep_cycles"));
        }
        Ok(())
    }

    pub fn t_start(&self, t_d: f64) -> f64 {
        -self.prep_cycles * t_d
    }

    pub fn t_end(&self, t_d: f64, defect_end: f64) -> f64 {
        defect_end + (self.relax_cycles + self.measure_cycles) * t_d
    }

    /// Ranges of window start times for `φ_before` and `φ_after`.
    ///
    /// Each window of length `window` lies wholly inside the measurement
    /// intervals `[−m T_d, 0]` and `[D + r T_d, D + (r+m) T_d]`.
    pub fn phase_windows(&self, t_d: f64, defect_end: f64, window: f64) -> PhaseWindows {
        let m = self.measure_cycles * t_d;
        let after = defect_end + self.relax_cycles * t_d;
        PhaseWindows {
            before: (-m, -window),
            after: (after, after + m - window),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseWindows {
    pub before: (f64, f64),
    pub after: (f64, f64),
}

/// Outcome of one trajectory through a defect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipOutcome {
    /// Wrapped to `[−π, π)`.
    pub delta_phi: f64,
    pub flipped: bool,
    pub w: f64,
    pub diverged: bool,
    /// False when either window is not steady or not period doubled.
    pub reliable: bool,
}

impl FlipOutcome {
    pub fn divergent() -> Self {
        Self {
            delta_phi: f64::NAN,
            flipped: false,
            w: f64::NAN,
            diverged: true,
            reliable: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseComparison {
    pub delta_phi: f64,
    pub flipped: bool,
    pub reliable: bool,
}

/// Compares two windows of wrapped phases through their circular means.
pub fn flip_outcome(before: &[f64], after: &[f64]) -> PhaseComparison {
    let (mb, vb) = circular_mean(before);
    let (ma, va) = circular_mean(after);
    let delta_phi = wrap_angle(ma - mb);
    PhaseComparison {
        delta_phi,
        flipped: delta_phi.abs() > FRAC_PI_2,
        reliable: vb <= STEADY_CIRCULAR_VARIANCE && va <= STEADY_CIRCULAR_VARIANCE,
    }
}

/// `[φ_unw(t_final) − φ_unw(t_ref)]/π`.
pub fn half_winding(ps: &PhaseSeries, t_ref: f64, t_final: f64) -> Result<f64> {
    let i = ps.range(t_ref, t_ref)?.start;
    let j = ps.range(t_final, t_final)?.start;
    Ok((ps.phi_unwrapped[j] - ps.phi_unwrapped[i]) / PI)
}

/// Flip outcome from a phase series using the schedule windows.
///
/// `w` compares the mean unwrapped phase of the two windows, so that
/// `wrap(π w)` and `Δφ` agree on steady trajectories.
pub fn measure_flip(ps: &PhaseSeries, windows: &PhaseWindows) -> Result<FlipOutcome> {
    let b = ps.range(windows.before.0, windows.before.1)?;
    let a = ps.range(windows.after.0, windows.after.1)?;
    let cmp = flip_outcome(&ps.phi[b.clone()], &ps.phi[a.clone()]);
    let mean = |r: &std::ops::Range<usize>, v: &[f64]| v[r.clone()].iter().sum::<f64>() / r.len() as f64;
    let w = (mean(&a, &ps.phi_unwrapped) - mean(&b, &ps.phi_unwrapped)) / PI;
    let amp_ok = mean(&b, &ps.r) >= AMPLITUDE_FLOOR && mean(&a, &ps.r) >= AMPLITUDE_FLOOR;
    Ok(FlipOutcome {
        delta_phi: cmp.delta_phi,
        flipped: cmp.flipped,
        w,
        diverged: false,
        reliable: cmp.reliable && amp_ok,
    })
}

/// Flip outcome straight from an order-parameter series.
///
/// Only the span between the two windows is transformed.
pub fn analyse_series(
    values: &[f64],
    t0: f64,
    dt: f64,
    omega_r: f64,
    windows: &PhaseWindows,
) -> Result<FlipOutcome> {
    let window = TAU / omega_r;
    let first = (((windows.before.0 - t0) / dt) - 1e-6).floor().max(0.0) as usize;
    let last = (((windows.after.1 + window - t0) / dt) + 1e-6).ceil() as usize + 2;
    let last = last.min(values.len());
    if first >= last {
        return Err(Error::WindowTruncated {
            needed: windows.after.1 + window,
            available: t0 + values.len() as f64 * dt,
        });
    }
    let ps = complex_amplitude(&values[first..last], t0 + first as f64 * dt, dt, omega_r)?;
    measure_flip(&ps, windows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchingStats {
    pub p_s: f64,
    /// Binomial standard error `√(P(1−P)/n)`.
    pub se: f64,
    pub n_valid: usize,
    pub n_flipped: usize,
    pub n_diverged: usize,
    pub n_unreliable: usize,
}

/// Fraction of non-diverged trajectories that flipped.
pub fn switching_probability(outcomes: &[FlipOutcome]) -> Result<SwitchingStats> {
    let n_diverged = outcomes.iter().filter(|o| o.diverged).count();
    let valid: Vec<&FlipOutcome> = outcomes.iter().filter(|o| !o.diverged).collect();
    if valid.is_empty() {
        return Err(Error::AllDiverged { n: outcomes.len() });
    }
    let n = valid.len();
    let k = valid.iter().filter(|o| o.flipped).count();
    let p = k as f64 / n as f64;
    Ok(SwitchingStats {
        p_s: p,
        se: (p * (1.0 - p) / n as f64).sqrt(),
        n_valid: n,
        n_flipped: k,
        n_diverged,
        n_unreliable: valid.iter().filter(|o| !o.reliable).count(),
    })
}

/// Normalised histogram of half-winding numbers on bins centred at `k·0.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindingHistogram {
    pub bin_width: f64,
    /// `(bin index k, probability)` sorted by `k`; bin `k` is centred at `k·bin_width`.
    pub bins: Vec<(i64, f64)>,
    /// Mass of the bins centred on integers, `(integer, probability)`.
    pub integer_mass: Vec<(i64, f64)>,
    pub n: usize,
}

impl WindingHistogram {
    /// Centre of the heaviest bin; ties go to the smaller `|w|`.
    pub fn most_probable(&self) -> Option<f64> {
        self.bins
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.abs().cmp(&a.0.abs())))
            .map(|(k, _)| *k as f64 * self.bin_width)
    }

    pub fn mass_at_integer(&self, k: i64) -> f64 {
        self.integer_mass
            .iter()
            .find(|(j, _)| *j == k)
            .map_or(0.0, |(_, p)| *p)
    }
}

pub fn winding_histogram(outcomes: &[FlipOutcome]) -> WindingHistogram {
    let ws: Vec<f64> = outcomes
        .iter()
        .filter(|o| !o.diverged && o.w.is_finite())
        .map(|o| o.w)
        .collect();
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for w in &ws {
        *counts.entry((w / WINDING_BIN_WIDTH).round() as i64).or_default() += 1;
    }
    let n = ws.len();
    let norm = if n > 0 { 1.0 / n as f64 } else { 0.0 };
    let per_int = (1.0 / WINDING_BIN_WIDTH).round() as i64;
    let bins: Vec<(i64, f64)> = counts.iter().map(|(k, c)| (*k, *c as f64 * norm)).collect();
    let integer_mass = bins
        .iter()
        .filter(|(k, _)| k % per_int == 0)
        .map(|(k, p)| (k / per_int, *p))
        .collect();
    WindingHistogram {
        bin_width: WINDING_BIN_WIDTH,
        bins,
        integer_mass,
        n,
    }
}

/// Fraction of outcomes whose `w` lies within `tol` of an integer.
pub fn mass_near_integers(outcomes: &[FlipOutcome], tol: f64) -> f64 {
    let ws: Vec<f64> = outcomes
        .iter()
        .filter(|o| !o.diverged && o.w.is_finite())
        .map(|o| o.w)
        .collect();
    if ws.is_empty() {
        return 0.0;
    }
    ws.iter().filter(|w| (*w - w.round()).abs() <= tol).count() as f64 / ws.len() as f64
}

/// Spectral weight of the subharmonic line.
///
/// Uses the last whole number of `2T_d` periods of `values` (rectangular
/// window). The numerator sums the periodogram at the `ω_d/2` bin and its two
/// neighbours on both sides of zero frequency; the denominator is the total
/// power `M Σ x²` by Parseval.
pub fn crystalline_fraction(values: &[f64], dt: f64, omega_d: f64) -> Result<f64> {
    if !(omega_d > 0.0) {
        return Err(invalid("omega_d", format!("must be positive, got {omega_d}")));
    }
    let period = 2.0 * TAU / omega_d;
    let per_samples = period / dt;
    let cycles = (values.len() as f64 / per_samples).floor();
    if cycles < 1.0 {
        return Err(Error::WindowTruncated {
            needed: period,
            available: values.len() as f64 * dt,
        });
    }
    let m = (cycles * per_samples).round() as usize;
    let m = m.min(values.len());
    let x = &values[values.len() - m..];
    let total: f64 = x.iter().map(|v| v * v).sum::<f64>() * m as f64;
    if total == 0.0 {
        return Ok(0.0);
    }
    let k0 = cycles as i64;
    let mut bins: Vec<i64> = Vec::new();
    for k in [k0 - 1, k0, k0 + 1] {
        for b in [k.rem_euclid(m as i64), (-k).rem_euclid(m as i64)] {
            if !bins.contains(&b) {
                bins.push(b);
            }
        }
    }
    let mut num = 0.0;
    for b in bins {
        let w = TAU * b as f64 / m as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (j, v) in x.iter().enumerate() {
            let (s, c) = (w * j as f64).sin_cos();
            re += v * c;
            im -= v * s;
        }
        num += re * re + im * im;
    }
    Ok((num / total).clamp(0.0, 1.0))
}

/// `d² = 1/2 − 2 s_O·s_P` for spins of length 1/2, clamped to `[0, 1]`.
pub fn spin_decorrelation(s_o: [f64; 3], s_p: [f64; 3]) -> f64 {
    let dot = s_o[0] * s_p[0] + s_o[1] * s_p[1] + s_o[2] * s_p[2];
    (0.5 - 2.0 * dot).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecorrelatorResult {
    pub t0: f64,
    pub dt: f64,
    pub d2: Vec<f64>,
    pub max: f64,
}

impl DecorrelatorResult {
    pub fn irregular(&self) -> bool {
        self.max >= IRREGULAR_DECORRELATION
    }
}

/// Default cavity kick of the perturbed copy (extensive units).
pub const DECORRELATOR_EPS_A: f64 = 1.0;
/// Default amplitude offset of the perturbed copy.
pub const DECORRELATOR_EPS_AMP: f64 = 1e-5;

/// Runs two mean-field copies through the defect.
///
/// Both copies are prepared identically from `−prep T_d`. At `t = 0` copy P
/// gets `a_P = a_O + ε_a` in extensive units, i.e. `α_P = α_O + ε_a/√N` with
/// `N = params.n`, and its drive amplitude is raised by `ε_A`. `d²` is
/// recorded every `sample_stride` steps from `t = 0` to the end of the
/// relaxation interval.
pub fn decorrelator_run(
    params: &OdmParams,
    eps_a: f64,
    eps_amp: f64,
    schedule: &Schedule,
    dt_max: f64,
    sample_stride: usize,
) -> Result<DecorrelatorResult> {
    if params.method != OdmMethod::MeanField {
        return Err(invalid("method", "the decorrelator is defined for mean-field runs"));
    }
    params.validate()?;
    schedule.validate()?;
    let p = &params.protocol;
    let t_d = TAU / p.base_frequency;
    let dt = StepperConfig::snapped_dt(t_d, dt_max);
    let mut stream = NoiseStream::new(0, 0);
    let mut o = initial_state(params, &mut stream);
    let prep = StepperConfig::new(dt, schedule.t_start(t_d), 0.0, usize::MAX)?;
    if let Some(t) = integrate_odm(params, &mut o, &prep, &mut stream, |_, _, _| {}) {
        return Err(Error::Diverged { t });
    }
    let mut pp = params.clone();
    pp.protocol = p.with_amplitude(p.amplitude + eps_amp);
    let mut q = o.clone();
    q.a_r += eps_a / params.n.sqrt();

    let t_end = p.defect_end() + schedule.relax_cycles * t_d;
    let run = StepperConfig::new(dt, 0.0, t_end, sample_stride)?;
    let so = OdmStepper::new(params);
    let sp = OdmStepper::new(&pp);
    let spin = |s: &OdmState| s.spin_sum();
    let mut d2 = vec![spin_decorrelation(spin(&o), spin(&q))];
    let mut max = d2[0];
    let mut t = 0.0;
    let (mut fo, mut fp) = (p.drive_value(t), pp.protocol.drive_value(t));
    for k in 0..run.n_steps() {
        let tn = run.time_at(k + 1);
        let (fo_n, fp_n) = (p.drive_value(tn), pp.protocol.drive_value(tn));
        let ok = so.step(&mut o, fo, fo_n, tn - t, [0.0, 0.0])
            && sp.step(&mut q, fp, fp_n, tn - t, [0.0, 0.0]);
        if !ok {
            return Err(Error::Diverged { t: tn });
        }
        let d = spin_decorrelation(spin(&o), spin(&q));
        max = max.max(d);
        if (k + 1) % sample_stride == 0 {
            d2.push(d);
        }
        t = tn;
        fo = fo_n;
        fp = fp_n;
    }
    Ok(DecorrelatorResult {
        t0: 0.0,
        dt: run.sample_dt(),
        d2,
        max,
    })
}

/// Response maxima over an amplitude grid and the first amplitude above threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub amplitudes: Vec<f64>,
    pub max_response: Vec<f64>,
    /// Bisection-refined onset between the last sub-threshold and first
    /// super-threshold grid point.
    pub onset: Option<f64>,
}

/// Scans `response(A)` over `amplitudes` (ascending) and bisects the first
/// upward crossing of `threshold` down to `tol`.
pub fn scan_onset<F>(amplitudes: &[f64], threshold: f64, tol: f64, mut response: F) -> ScanResult
where
    F: FnMut(f64) -> f64,
{
    let max_response: Vec<f64> = amplitudes.iter().map(|&a| response(a)).collect();
    let mut onset = None;
    if let Some(i) = max_response.iter().position(|&m| m >= threshold) {
        if i == 0 {
            onset = Some(amplitudes[0]);
        } else {
            let (mut lo, mut hi) = (amplitudes[i - 1], amplitudes[i]);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if response(mid) >= threshold {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            onset = Some(0.5 * (lo + hi));
        }
    }
    ScanResult {
        amplitudes: amplitudes.to_vec(),
        max_response,
        onset,
    }
}

/// `max x` over `[from·T_d, to·T_d]` for a noiseless pendulum started at `t = 0`.
pub fn po_max_response(params: &PoParams, from_cycles: f64, to_cycles: f64, dt_max: f64) -> Result<f64> {
    let t_d = TAU / params.protocol.base_frequency;
    let dt = StepperConfig::snapped_dt(t_d, dt_max);
    let cfg = StepperConfig::new(dt, 0.0, to_cycles * t_d, 1)?;
    let mut mx = f64::NEG_INFINITY;
    let start = from_cycles * t_d - 1e-9;
    let mut noise = NoiseStream::new(0, 0);
    let mut quiet = params.clone();
    quiet.temperature = 0.0;
    if let Some(t) = integrate_po(&quiet, &cfg, &mut noise, |_, t, s| {
        if t >= start {
            mx = mx.max(s.u.sin());
        }
    }) {
        return Err(Error::Diverged { t });
    }
    Ok(mx)
}

/// Onset amplitude of period doubling for a pendulum with damping `gamma`.
///
/// Returns the scan and the collapse coordinate `A_onset Ω/(2γ)`.
pub fn po_resonance_scan(
    omega: f64,
    gamma: f64,
    amplitudes: &[f64],
    tol: f64,
) -> Result<(ScanResult, Option<f64>)> {
    let base = PoParams {
        omega,
        gamma,
        temperature: 0.0,
        protocol: crate::drive::DriveProtocol::steady(2.0 * omega, 0.0)?,
        initial: Default::default(),
    };
    base.validate()?;
    let mut err = None;
    let scan = scan_onset(amplitudes, ONSET_THRESHOLD, tol, |a| {
        let mut p = base.clone();
        p.protocol = p.protocol.with_amplitude(a);
        match po_max_response(&p, 100.0, 200.0, crate::integrator::DEFAULT_DT) {
            Ok(m) => m,
            Err(e) => {
                err = Some(e);
                f64::NAN
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let scaled = scan.onset.map(|a| a * omega / (2.0 * gamma));
    Ok((scan, scaled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicalPhase {
    Np,
    Sp,
    Dtc,
    Irregular,
}

/// Thresholds of [`classify_phase`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseFloors {
    pub sx: f64,
    /// In the units of the photon channel.
    pub photons: f64,
}

impl PhaseFloors {
    /// `|S^x|/N ≥ 0.05` and `|a|² ≥ 10` photons, converted for mean field.
    pub fn for_params(params: &OdmParams) -> Self {
        let photons = match params.method {
            OdmMethod::MeanField => crate::odm::MACROSCOPIC_PHOTONS / params.n,
            _ => crate::odm::MACROSCOPIC_PHOTONS,
        };
        Self { sx: SX_FLOOR, photons }
    }
}

/// Labels a steady window of `S^x/N` and photon number.
pub fn classify_phase(
    sx: &[f64],
    photons: &[f64],
    dt: f64,
    omega_d: f64,
    floors: &PhaseFloors,
) -> Result<DynamicalPhase> {
    if sx.is_empty() || sx.len() != photons.len() {
        return Err(invalid("window", "needs equal, non-empty sx and photon series"));
    }
    if crystalline_fraction(sx, dt, omega_d)? >= DTC_FRACTION {
        return Ok(DynamicalPhase::Dtc);
    }
    let n = sx.len() as f64;
    let mean_sx = sx.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean_ph = photons.iter().sum::<f64>() / n;
    let sx_high = mean_sx >= floors.sx;
    let ph_high = mean_ph >= floors.photons;
    Ok(match (sx_high, ph_high) {
        (true, true) => DynamicalPhase::Sp,
        (false, false) => DynamicalPhase::Np,
        _ => DynamicalPhase::Irregular,
    })
}

/// Location and spread of an upward `P_s` transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionWidth {
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    /// Propagated from the binomial errors of the bracketing points.
    pub se: f64,
}

/// First upward crossing of `level`, linearly interpolated, with its error.
fn crossing(xs: &[f64], ps: &[f64], ses: &[f64], level: f64) -> Option<(f64, f64)> {
    (0..xs.len().saturating_sub(1)).find_map(|i| {
        let (p0, p1) = (ps[i], ps[i + 1]);
        if !(p0 < level && p1 >= level) {
            return None;
        }
        let f = (level - p0) / (p1 - p0);
        let dxdp = (xs[i + 1] - xs[i]) / (p1 - p0);
        let var = dxdp * dxdp * ((1.0 - f).powi(2) * ses[i].powi(2) + f * f * ses[i + 1].powi(2));
        Some((xs[i] + f * (xs[i + 1] - xs[i]), var.sqrt()))
    })
}

/// `lo`–`hi` width of a rising curve `ps(xs)` (xs ascending).
pub fn transition_width(xs: &[f64], ps: &[f64], ses: &[f64], lo: f64, hi: f64) -> Option<TransitionWidth> {
    if xs.len() != ps.len() || xs.len() != ses.len() || !(lo < hi) {
        return None;
    }
    let (a, sa) = crossing(xs, ps, ses, lo)?;
    let (b, sb) = crossing(xs, ps, ses, hi)?;
    Some(TransitionWidth {
        lower: a,
        upper: b,
        width: b - a,
        se: (sa * sa + sb * sb).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    #[test]
    fn transition_width_of_linear_ramp() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let ps: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let w = transition_width(&xs, &ps, &[0.0; 11], 0.1, 0.9).unwrap();
        assert!((w.lower - 1.0).abs() < 1e-12 && (w.upper - 9.0).abs() < 1e-12);
        assert_eq!(w.se, 0.0);
        let step = [0.0, 0.0, 1.0, 1.0];
        let w = transition_width(&xs[..4], &step, &[0.0, 0.0, 0.0, 0.0], 0.1, 0.9).unwrap();
        assert!((w.width - 0.8).abs() < 1e-12);
        assert!(transition_width(&xs[..4], &[0.0; 4], &[0.0; 4], 0.1, 0.9).is_none());
    }

    use super::*;
    use crate::drive::{make_protocol, DefectSpec, DriveProtocol};
    use crate::odm::{lambda_c, SpinResolution, DEFAULT_EPSILON};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sampled(f: impl Fn(f64) -> f64, t0: f64, dt: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| f(t0 + k as f64 * dt)).collect()
    }

    #[test]
    fn unit_cosine_has_zero_phase() {
        let wr = 0.5;
        let dt = TAU / wr / 400.0;
        let v = sampled(|t| (wr * t).cos(), 0.0, dt, 2000);
        let ps = complex_amplitude(&v, 0.0, dt, wr).unwrap();
        assert_eq!(ps.len(), 2000 - 400);
        for i in 0..ps.len() {
            assert!((ps.r[i] - 1.0).abs() < 1e-12, "{}", ps.r[i]);
            assert!(ps.phi[i].abs() < 1e-12);
        }
    }

    #[test]
    fn phase_sign_convention() {
        let wr = 1.0;
        let dt = TAU / 1000.0;
        let v = sampled(|t| (wr * t + FRAC_PI_2).cos(), -3.0, dt, 3000);
        let ps = complex_amplitude(&v, -3.0, dt, wr).unwrap();
        for p in &ps.phi {
            assert!((p + FRAC_PI_2).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_has_no_amplitude() {
        let dt = 0.01;
        let wr = TAU / 4.0; // window of exactly 400 samples
        let v = vec![0.7; 1200];
        let ps = complex_amplitude(&v, 0.0, dt, wr).unwrap();
        assert!(ps.r.iter().all(|r| *r < 1e-12));
    }

    #[test]
    fn fractional_window_is_second_order() {
        // window 2π/ω_R = 100.37 samples
        let dt = 0.01;
        let wr = TAU / (100.37 * dt);
        let v = sampled(|t| 0.8 * (wr * t - 0.3).cos() + 0.1, 0.0, dt, 600);
        let ps = complex_amplitude(&v, 0.0, dt, wr).unwrap();
        for i in 0..ps.len() {
            assert!((ps.r[i] - 0.8).abs() < 1e-3);
            assert!((ps.phi[i] - 0.3).abs() < 1e-3);
        }
    }

    #[test]
    fn truncated_window_is_an_error() {
        let v = vec![0.0; 50];
        assert!(matches!(
            complex_amplitude(&v, 0.0, 0.01, TAU),
            Err(Error::WindowTruncated { .. })
        ));
    }

    #[test]
    fn unwrap_ramp_and_constant() {
        let line: Vec<f64> = (0..500).map(|k| -2.0 + 0.05 * k as f64).collect();
        let wrapped: Vec<f64> = line.iter().map(|&x| wrap_angle(x)).collect();
        let u = unwrap(&wrapped);
        for (a, b) in u.iter().zip(&line) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = vec![1.3; 10];
        assert_eq!(unwrap(&c), c);
    }

    #[test]
    fn unwrap_noisy_ramp_slope() {
        let mut noise = NoiseStream::new(11, 0);
        let n = 20_000;
        let slope = 0.02;
        let raw: Vec<f64> = (0..n)
            .map(|k| wrap_angle(slope * k as f64 + 0.1 * noise.standard_normal()))
            .collect();
        let u = unwrap(&raw);
        // least-squares slope
        let nf = n as f64;
        let mx = (nf - 1.0) / 2.0;
        let my = u.iter().sum::<f64>() / nf;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (k, y) in u.iter().enumerate() {
            let dx = k as f64 - mx;
            sxy += dx * (y - my);
            sxx += dx * dx;
        }
        assert!((sxy / sxx / slope - 1.0).abs() < 0.02);
    }

    #[test]
    fn flip_decisions() {
        let zero = vec![0.2; 10];
        let pi = vec![wrap_angle(0.2 + PI); 10];
        let c = flip_outcome(&zero, &pi);
        assert!(c.flipped && c.reliable);
        assert!((c.delta_phi.abs() - PI).abs() < 1e-12);
        let c = flip_outcome(&zero, &zero);
        assert!(!c.flipped);
        assert_eq!(c.delta_phi, 0.0);
        // wrap-around means do not fake flips
        let near = vec![3.1, -3.1, 3.12, -3.13];
        let c = flip_outcome(&near, &near);
        assert!(!c.flipped && c.reliable);
        // uniform phases are unreliable
        let spread: Vec<f64> = (0..100).map(|k| wrap_angle(k as f64 * 0.0628 * 1.0 * 1.0)).collect();
        assert!(!flip_outcome(&spread, &zero).reliable);
    }

    #[test]
    fn synthetic_winding_minus_one() {
        // O = cos(ω_d t/2 + π t/T_δ) during (0, T_δ): the response phase
        // advances by π, so φ = −φ₀ winds by −π.
        let wd = 0.8;
        let wr = wd / 2.0;
        let td = TAU / wd;
        let tdel = 3.0 * td;
        let dt = td / 400.0;
        let phase0 = |t: f64| {
            if t <= 0.0 {
                0.0
            } else if t < tdel {
                PI * t / tdel
            } else {
                PI
            }
        };
        let t0 = -40.0 * td;
        let n = (80.0 * td / dt) as usize;
        let v = sampled(|t| (wr * t + phase0(t)).cos(), t0, dt, n);
        let ps = complex_amplitude(&v, t0, dt, wr).unwrap();
        let w = half_winding(&ps, -2.0 * td, 20.0 * td).unwrap();
        assert!((w + 1.0).abs() < 1e-9, "w = {w}");
        let sched = Schedule {
            prep_cycles: 40.0,
            relax_cycles: 10.0,
            measure_cycles: 20.0,
        };
        let win = sched.phase_windows(td, tdel, ps.window());
        let out = measure_flip(&ps, &win).unwrap();
        assert!(out.flipped && out.reliable);
        assert!((out.w + 1.0).abs() < 1e-9);
        let direct = analyse_series(&v, t0, dt, wr, &win).unwrap();
        assert_relative_eq!(direct.w, out.w, epsilon = 1e-9);
        assert_eq!(direct.flipped, out.flipped);
    }

    #[test]
    fn switching_statistics() {
        let f = |flipped| FlipOutcome {
            delta_phi: if flipped { -PI } else { 0.0 },
            flipped,
            w: if flipped { -1.0 } else { 0.0 },
            diverged: false,
            reliable: true,
        };
        let mut all = vec![f(true); 5];
        let s = switching_probability(&all).unwrap();
        assert_eq!(s.p_s, 1.0);
        assert_eq!(s.se, 0.0);
        all.push(f(false));
        all.push(FlipOutcome::divergent());
        let s = switching_probability(&all).unwrap();
        assert_eq!((s.n_valid, s.n_diverged, s.n_flipped), (6, 1, 5));
        assert_relative_eq!(s.se, (5.0 / 36.0f64 / 6.0).sqrt());
        assert!(matches!(
            switching_probability(&[FlipOutcome::divergent()]),
            Err(Error::AllDiverged { n: 1 })
        ));
    }

    #[test]
    fn histogram_bins() {
        let mk = |w: f64| FlipOutcome {
            delta_phi: wrap_angle(PI * w),
            flipped: false,
            w,
            diverged: false,
            reliable: true,
        };
        let h = winding_histogram(&[mk(-1.0)]);
        assert_eq!(h.bins, vec![(-10, 1.0)]);
        assert_eq!(h.mass_at_integer(-1), 1.0);
        let set: Vec<FlipOutcome> = [1.02, 0.97, -1.0, -0.25, 0.0].into_iter().map(mk).collect();
        let h = winding_histogram(&set);
        let total: f64 = h.bins.iter().map(|b| b.1).sum();
        assert_relative_eq!(total, 1.0);
        assert_relative_eq!(h.mass_at_integer(1), 0.4);
        assert_eq!(h.most_probable(), Some(1.0));
        assert_relative_eq!(mass_near_integers(&set, 0.1), 0.8);
    }

    #[test]
    fn pure_subharmonic_fraction() {
        let wd = 2.0;
        let td = TAU / wd;
        let dt = td / 200.0;
        let v = sampled(|t| (wd * t / 2.0 + 0.4).cos(), 0.0, dt, 20 * 400 + 37);
        let chi = crystalline_fraction(&v, dt, wd).unwrap();
        assert!(chi >= 0.99, "{chi}");
    }

    #[test]
    fn white_noise_fraction_is_small() {
        let mut noise = NoiseStream::new(2, 0);
        let wd = 2.0;
        let dt = (TAU / wd) / 50.0;
        let m = 100 * 100; // 100 periods of 2T_d
        let v = noise.gaussian_increments(m);
        let chi = crystalline_fraction(&v, dt, wd).unwrap();
        // six of m bins on average
        assert!(chi < 30.0 / m as f64, "{chi}");
    }

    #[test]
    fn fraction_decreases_with_noise() {
        let wd = 2.0;
        let dt = (TAU / wd) / 50.0;
        let n = 100 * 60;
        let base = sampled(|t| (t).cos(), 0.0, dt, n);
        let mut last = 1.1;
        for sigma in [0.0, 0.1, 0.3, 1.0] {
            let mut noise = NoiseStream::new(4, 0);
            let v: Vec<f64> = base.iter().map(|b| b + sigma * noise.standard_normal()).collect();
            let chi = crystalline_fraction(&v, dt, wd).unwrap();
            assert!(chi < last, "{chi} !< {last}");
            last = chi;
        }
    }

    #[test]
    fn decorrelation_bounds() {
        let up = [0.0, 0.0, 0.5];
        assert_eq!(spin_decorrelation(up, up), 0.0);
        assert_eq!(spin_decorrelation(up, [0.0, 0.0, -0.5]), 1.0);
        assert_relative_eq!(spin_decorrelation(up, [0.5, 0.0, 0.0]), 0.5);
    }

    fn mf(kappa: f64, ratio: f64, wd: f64, a: f64, spec: &DefectSpec) -> OdmParams {
        OdmParams {
            omega: 1.0,
            omega0: 1.0,
            kappa,
            lambda0: ratio * lambda_c(1.0, kappa),
            n: 1e4,
            protocol: make_protocol(spec, wd, a).unwrap(),
            method: OdmMethod::MeanField,
            epsilon: DEFAULT_EPSILON,
            temporal_noise: false,
            resolution: SpinResolution::Collective,
        }
    }

    #[test]
    fn unperturbed_decorrelator_is_zero() {
        let spec = DefectSpec::phase_ramp(2.0 * TAU / 0.63);
        let p = mf(0.1, 0.9, 0.63, 0.14, &spec);
        let sched = Schedule {
            prep_cycles: 30.0,
            relax_cycles: 10.0,
            measure_cycles: 5.0,
        };
        let r = decorrelator_run(&p, 0.0, 0.0, &sched, 0.01, 10).unwrap();
        assert!(r.max < 1e-12 && !r.irregular(), "{}", r.max);
        let r = decorrelator_run(&p, 1.0, 1e-5, &sched, 0.01, 10).unwrap();
        assert!(r.d2[0] <= 1e-3);
        assert!(r.d2.iter().all(|d| (0.0..=1.0).contains(d)));
        let mut bad = p.clone();
        bad.method = OdmMethod::Twa;
        assert!(decorrelator_run(&bad, 1.0, 1e-5, &sched, 0.01, 10).is_err());
    }

    #[test]
    fn onset_bisection() {
        let s = scan_onset(&[0.0, 1.0, 2.0, 3.0], 0.5, 1e-6, |a| if a >= 1.3 { 1.0 } else { 0.0 });
        assert!((s.onset.unwrap() - 1.3).abs() < 1e-6);
        let s = scan_onset(&[0.0, 0.1], 0.5, 1e-6, |_| 0.0);
        assert_eq!(s.onset, None);
    }

    #[test]
    fn zero_drive_is_below_threshold() {
        let p = PoParams {
            omega: 1.0,
            gamma: 0.1,
            temperature: 0.0,
            protocol: DriveProtocol::steady(2.0, 0.0).unwrap(),
            initial: Default::default(),
        };
        assert!(po_max_response(&p, 100.0, 200.0, 0.01).unwrap() < ONSET_THRESHOLD);
    }

    #[test]
    fn classifier_labels() {
        let wd = 1.0;
        let dt = TAU / wd / 100.0;
        let n = 2000;
        let floors = PhaseFloors { sx: 0.05, photons: 10.0 };
        let dtc = sampled(|t| 0.3 * (wd * t / 2.0).cos(), 0.0, dt, n);
        let ph = vec![50.0; n];
        assert_eq!(classify_phase(&dtc, &ph, dt, wd, &floors).unwrap(), DynamicalPhase::Dtc);
        let sp = vec![0.3; n];
        assert_eq!(classify_phase(&sp, &ph, dt, wd, &floors).unwrap(), DynamicalPhase::Sp);
        let np = vec![0.0; n];
        let dark = vec![0.5; n];
        assert_eq!(classify_phase(&np, &dark, dt, wd, &floors).unwrap(), DynamicalPhase::Np);
        assert_eq!(
            classify_phase(&sp, &dark, dt, wd, &floors).unwrap(),
            DynamicalPhase::Irregular
        );
    }

    proptest! {
        #[test]
        fn window_start_does_not_move_phase(phi0 in -3.0f64..3.0, amp in 0.1f64..2.0) {
            let wr = 0.4;
            let dt = TAU / wr / 250.0;
            let v = sampled(|t| amp * (wr * t + phi0).cos(), 0.0, dt, 1000);
            let ps = complex_amplitude(&v, 0.0, dt, wr).unwrap();
            let (m, var) = circular_mean(&ps.phi);
            prop_assert!(var < 1e-6);
            prop_assert!(wrap_angle(m + phi0).abs() < 1e-9);
            prop_assert!(ps.r.iter().all(|r| (r - amp).abs() < 1e-9));
        }

        #[test]
        fn unwrapped_differs_by_whole_turns(steps in proptest::collection::vec(-3.0f64..3.0, 1..200)) {
            let mut acc = 0.0;
            let raw: Vec<f64> = steps.iter().map(|s| { acc += s; wrap_angle(acc) }).collect();
            let u = unwrap(&raw);
            for (a, b) in u.iter().zip(&raw) {
                let k = (a - b) / TAU;
                prop_assert!((k - k.round()).abs() < 1e-9);
            }
        }

        #[test]
        fn fraction_in_unit_interval(seed in 0u64..1000, a in 0.0f64..2.0) {
            let mut s = NoiseStream::new(seed, 0);
            let dt = TAU / 40.0;
            let v: Vec<f64> = (0..800).map(|k| a * (0.5 * k as f64 * dt).cos() + s.standard_normal()).collect();
            let chi = crystalline_fraction(&v, dt, 1.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&chi));
        }

        #[test]
        fn decorrelation_in_unit_interval(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0) {
            let norm = |v: [f64; 3]| { let n = (v[0]*v[0] + v[1]*v[1] + v[2]*v[2]).sqrt().max(1e-9); [0.5*v[0]/n, 0.5*v[1]/n, 0.5*v[2]/n] };
            let d2 = spin_decorrelation(norm([a, b, 0.3]), norm([c, d, -0.2]));
            prop_assert!((0.0..=1.0).contains(&d2));
        }
    }
}
