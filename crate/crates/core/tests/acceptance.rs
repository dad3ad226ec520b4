//! Acceptance suite: thirteen end-to-end criteria at their stated tolerances.
//!
//! Runs as a plain binary (`harness = false`) so every criterion prints one
//! PASS/FAIL line. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 2 7`. The process exits nonzero if any
//! selected criterion fails.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use rayon::prelude::*;

use bitflip::analysis::{
    crystalline_fraction, mass_near_integers, po_resonance_scan, transition_width, FlipOutcome, Schedule,
};
use bitflip::drive::{wrap_angle, DefectSpec, DriveProtocol};
use bitflip::integrator::{NoiseStream, StepperConfig};
use bitflip::odm::{
    initial_state, integrate_odm, lambda_c, OdmMethod, OdmParams, OdmStepper, SpinResolution, SpinState,
    DEFAULT_EPSILON,
};
use bitflip::po::{integrate_po, po_energy, PoParams, PoState};
use bitflip::sweep::{
    bitflip_diagram, crystalline_point, curve, decorrelator_map, run_grid, run_point, Axis, AxisSpec,
    DriveTemplate, EnsembleResult, ModelTemplate, OdmTemplate, PoTemplate, SweepPlan,
};

/// Frequency of the κ = ω, λ₀ = 0.9λ_c drive, where the lower-polariton
/// formula has no real value. Located numerically as the tip of the
/// period-doubling tongue of the linearised normal phase.
const OMEGA_D_KAPPA1: f64 = 0.78;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn po_plan(temperature: f64, defect: DefectSpec, n_traj: usize) -> SweepPlan {
    SweepPlan {
        model: ModelTemplate::Po(PoTemplate {
            omega: 1.0,
            gamma: 0.1,
            temperature,
            u0: bitflip::po::DEFAULT_U0,
        }),
        drive: DriveTemplate {
            omega_d: None,
            amplitude: None,
            delta_a: Some(0.4),
            defect,
            continuous_phase: false,
            omega_response: None,
        },
        axes: vec![],
        n_traj,
        master_seed: 2024,
        schedule: Schedule::default(),
        dt: 0.01,
    }
}

fn odm_template(method: OdmMethod, kappa: f64, lambda_ratio: f64, n: f64, temporal_noise: bool) -> OdmTemplate {
    OdmTemplate {
        omega: 1.0,
        omega0: 1.0,
        kappa,
        lambda_ratio,
        n,
        method,
        temporal_noise,
        resolution: SpinResolution::Collective,
        epsilon: DEFAULT_EPSILON,
    }
}

fn odm_plan(model: OdmTemplate, omega_d: Option<f64>, amplitude: Option<f64>, delta_a: Option<f64>, defect: DefectSpec, n_traj: usize) -> SweepPlan {
    SweepPlan {
        model: ModelTemplate::Odm(model),
        drive: DriveTemplate {
            omega_d,
            amplitude,
            delta_a,
            defect,
            continuous_phase: false,
            omega_response: None,
        },
        axes: vec![],
        n_traj,
        master_seed: 2024,
        schedule: Schedule::default(),
        dt: 0.01,
    }
}

fn grid(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start + step * i as f64).collect()
}

/// Fraction of outcomes with `round(w) == k`.
fn branch(outcomes: &[FlipOutcome], k: f64) -> f64 {
    let valid: Vec<_> = outcomes.iter().filter(|o| !o.diverged).collect();
    valid.iter().filter(|o| o.w.round() == k).count() as f64 / valid.len().max(1) as f64
}

/// Noiseless outcomes with `θ_f = 0`, collected for the parity law.
#[derive(Default)]
struct Context {
    parity_pool: Vec<(String, FlipOutcome)>,
}

fn c1(_: &mut Context) -> Verdict {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for gamma in [0.005, 0.01, 0.025, 0.1] {
        let scale: f64 = 2.0 * gamma;
        let amps: Vec<f64> = grid(0.5, 0.1, 11).iter().map(|v| v * scale).collect();
        let (_, scaled) = po_resonance_scan(1.0, gamma, &amps, 1e-4 * scale).expect("scan");
        let s = scaled.unwrap_or(f64::NAN);
        ok &= (s - 1.0).abs() <= 0.05;
        parts.push(format!("γ={gamma}: {s:.4}"));
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    verdict(ok, format!("A_onset Ω/2γ = [{}] (target 1 ± 0.05), {secs:.1}s", parts.join(", ")))
}

fn c2(ctx: &mut Context) -> Verdict {
    let t = Instant::now();
    let mut plan = po_plan(0.0, DefectSpec::phase_ramp(1.0), 1);
    let mut values = grid(4.0, 0.25, 33);
    values.push(25.0);
    plan.axes = vec![AxisSpec { axis: Axis::TDelta, values: values.clone() }];
    let res = run_grid(&plan).expect("grid");
    let o: Vec<FlipOutcome> = res.iter().map(|r| r.outcomes[0]).collect();
    for (v, out) in values.iter().zip(&o) {
        ctx.parity_pool.push((format!("c2 T_δ={v}"), *out));
    }
    let zero_ok = values.iter().zip(&o).filter(|(v, _)| **v <= 8.0).all(|(_, x)| x.delta_phi.abs() < 0.05);
    let last = o.last().unwrap();
    let pi_ok = wrap_angle(last.delta_phi - PI).abs() < 0.05;
    // step: midpoint between the last unflipped and the first flipped grid value
    let scan = &o[..33];
    let first = scan.iter().position(|x| x.flipped);
    let monotone = first.is_some_and(|i| scan[i..].iter().all(|x| x.flipped));
    let tc = first.map_or(f64::NAN, |i| 0.5 * (values[i] + values[i.max(1) - 1]));
    let secs = t.elapsed().as_secs_f64();
    let ok = zero_ok && pi_ok && monotone && (tc - 10.0).abs() <= 1.0 && secs < 60.0;
    verdict(
        ok,
        format!(
            "Δφ=0 for T_δ≤8: {zero_ok}; Δφ(25T_d)={:.4}; single step at T_δ,c={tc:.3} T_d (target 10 ± 1); {secs:.1}s",
            last.delta_phi
        ),
    )
}

fn c3(_: &mut Context) -> Verdict {
    let values = grid(8.9, 0.05, 25);
    let mut widths = Vec::new();
    for temp in [1e-5, 2e-4] {
        let mut plan = po_plan(temp, DefectSpec::phase_ramp(1.0), 1000);
        plan.axes = vec![AxisSpec { axis: Axis::TDelta, values: values.clone() }];
        let rows = curve(&plan).expect("curve");
        let ps: Vec<f64> = rows.iter().map(|r| r.p_s).collect();
        let se: Vec<f64> = rows.iter().map(|r| r.se).collect();
        widths.push(transition_width(&values, &ps, &se, 0.1, 0.9));
    }
    match (widths[0], widths[1]) {
        (Some(lo), Some(hi)) => {
            let sep = hi.width - lo.width;
            let se = (hi.se * hi.se + lo.se * lo.se).sqrt();
            verdict(
                sep > 2.0 * se && sep > 0.0,
                format!(
                    "10–90% width {:.3} ± {:.3} T_d at T̃=1e-5, {:.3} ± {:.3} T_d at T̃=2e-4; separation {sep:.3} vs 2se {:.3}",
                    lo.width,
                    lo.se,
                    hi.width,
                    hi.se,
                    2.0 * se
                ),
            )
        }
        _ => verdict(false, "P_s did not cross 0.1 and 0.9 inside the grid".into()),
    }
}

fn c4(_: &mut Context) -> Verdict {
    let temp = 1e-4;
    let params = PoParams {
        omega: 1.0,
        gamma: 0.1,
        temperature: temp,
        protocol: DriveProtocol::steady(2.0, 0.0).unwrap(),
        initial: PoState { u: 0.0, v: 0.0 },
    };
    let cfg = StepperConfig::new(0.01, 0.0, 600.0, 10).unwrap();
    let per: Vec<f64> = (0..400u64)
        .into_par_iter()
        .map(|j| {
            let (mut s, mut n) = (0.0, 0usize);
            integrate_po(&params, &cfg, &mut NoiseStream::new(4, j), |_, t, st| {
                if t >= 100.0 {
                    s += st.u * st.u;
                    n += 1;
                }
            });
            s / n as f64
        })
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    let rel = mean / temp - 1.0;
    verdict(rel.abs() <= 0.1, format!("⟨u²⟩ = {mean:.4e} over 400 trajectories, T̃ = {temp:e} (rel. dev. {rel:+.3}, tol 0.10)"))
}

fn c5(_: &mut Context) -> Verdict {
    let params = OdmParams {
        omega: 1.0,
        omega0: 1.0,
        kappa: 1.0,
        lambda0: 0.0,
        n: 1e4,
        protocol: DriveProtocol::steady(1.0, 0.0).unwrap(),
        method: OdmMethod::Twa,
        epsilon: DEFAULT_EPSILON,
        temporal_noise: true,
        resolution: SpinResolution::Collective,
    };
    let cfg = StepperConfig::new(0.01, 0.0, 60.0, 10).unwrap();
    let per: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|j| {
            let mut stream = NoiseStream::new(5, j);
            let mut st = initial_state(&params, &mut stream);
            let stepper = OdmStepper::new(&params);
            let (mut s, mut n) = (0.0, 0usize);
            integrate_odm(&params, &mut st, &cfg, &mut stream, |_, t, x| {
                if t >= 10.0 {
                    s += stepper.photons(x);
                    n += 1;
                }
            });
            s / n as f64
        })
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    let rel = mean / 0.5 - 1.0;
    verdict(rel.abs() <= 0.05, format!("stationary ⟨|a|²⟩ = {mean:.4} (target 0.5 ± 5%, rel. dev. {rel:+.4})"))
}

fn spin_norms(s: &SpinState) -> Vec<f64> {
    match s {
        SpinState::Collective(v) => vec![(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()],
        SpinState::PerSpin { x, y, z } => (0..x.len()).map(|i| x[i] * x[i] + y[i] * y[i] + z[i] * z[i]).collect(),
    }
}

fn c6(_: &mut Context) -> Verdict {
    let lam = 1.1 * lambda_c(1.0, 1.0);
    let t_d = TAU / 0.8;
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, method, n, resolution, expected) in [
        ("mean-field |s|", OdmMethod::MeanField, 1e4, SpinResolution::Collective, 0.5),
        ("TWA |S|", OdmMethod::Twa, 5e3, SpinResolution::Collective, 2.5e3),
        ("DTWA |σ_i|²", OdmMethod::Dtwa, 200.0, SpinResolution::PerSpin, 3.0),
    ] {
        let params = OdmParams {
            omega: 1.0,
            omega0: 1.0,
            kappa: 1.0,
            lambda0: lam,
            n,
            protocol: DriveProtocol::steady(0.8, 0.55).unwrap(),
            method,
            epsilon: DEFAULT_EPSILON,
            temporal_noise: true,
            resolution,
        };
        let cfg = StepperConfig::new(0.01, 0.0, 200.0 * t_d, 1).unwrap();
        let mut stream = NoiseStream::new(6, 0);
        let mut st = initial_state(&params, &mut stream);
        let n0 = spin_norms(&st.spin);
        let init_ok = n0.iter().all(|v| (v - expected).abs() <= 1e-9 * expected);
        let mut worst: f64 = 0.0;
        let div = integrate_odm(&params, &mut st, &cfg, &mut stream, |_, _, x| {
            for (a, b) in spin_norms(&x.spin).iter().zip(&n0) {
                worst = worst.max((a / b - 1.0).abs());
            }
        });
        ok &= init_ok && div.is_none() && worst < 1e-5;
        parts.push(format!("{name} drift {worst:.1e}{}", if init_ok { "" } else { " (wrong initial norm)" }));
    }
    // undriven noiseless pendulum
    let params = PoParams {
        omega: 1.0,
        gamma: 0.1,
        temperature: 0.0,
        protocol: DriveProtocol::steady(2.0, 0.0).unwrap(),
        initial: PoState { u: 1.0, v: 0.3 },
    };
    let cfg = StepperConfig::new(0.01, 0.0, 200.0, 1).unwrap();
    let (mut prev, mut rises, mut worst) = (f64::INFINITY, 0usize, 0.0f64);
    integrate_po(&params, &cfg, &mut NoiseStream::new(0, 0), |_, _, s| {
        let e = po_energy(s, 1.0);
        if e > prev {
            rises += 1;
            worst = worst.max((e - prev) / prev);
        }
        prev = e;
    });
    ok &= rises == 0;
    parts.push(format!("pendulum energy: {rises} rising steps (largest rel. rise {worst:.1e})"));
    verdict(ok, parts.join("; "))
}

fn c7(ctx: &mut Context) -> Verdict {
    let pool = &ctx.parity_pool;
    let valid: Vec<_> = pool.iter().filter(|(_, o)| !o.diverged).collect();
    let parity_bad: Vec<_> = valid
        .iter()
        .filter(|(_, o)| o.flipped != ((o.w.round() as i64).rem_euclid(2) == 1))
        .collect();
    let steady: Vec<_> = valid.iter().filter(|(_, o)| o.reliable).collect();
    let worst = steady
        .iter()
        .map(|(_, o)| wrap_angle(PI * o.w - o.delta_phi).abs())
        .fold(0.0f64, f64::max);
    let ok = !valid.is_empty() && parity_bad.is_empty() && worst < 0.05;
    let mut detail = format!(
        "{} noiseless θ_f=0 outcomes, {} parity exceptions; max |πw − Δφ| = {worst:.2e} over {} steady ones",
        valid.len(),
        parity_bad.len(),
        steady.len()
    );
    let by_source: Vec<String> = ["c2", "c10", "c12"]
        .iter()
        .map(|src| {
            let bad = parity_bad.iter().filter(|(l, _)| l.starts_with(&format!("{src} "))).count();
            let off = steady
                .iter()
                .filter(|(l, o)| l.starts_with(&format!("{src} ")) && wrap_angle(PI * o.w - o.delta_phi).abs() >= 0.05)
                .count();
            format!("{src}: {bad} parity / {off} phase")
        })
        .collect();
    detail += &format!(" [{}]", by_source.join(", "));
    if let Some((label, o)) = parity_bad.first() {
        detail += &format!(" (first exception {label}: Δφ={:.3}, w={:.3})", o.delta_phi, o.w);
    }
    verdict(ok, detail)
}

fn c8(_: &mut Context) -> Verdict {
    let window = grid(1.0, 0.1, 6);
    let model = odm_template(OdmMethod::Twa, 1.0, 0.9, 5e3, false);
    let mut plan = odm_plan(model, Some(OMEGA_D_KAPPA1), None, Some(0.1), DefectSpec::phase_ramp(1.0), 1000);
    plan.axes = vec![AxisSpec { axis: Axis::TDelta, values: window.clone() }];
    let rows = curve(&plan).expect("curve");
    let ps: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.p_s)).collect();
    let ok = rows.iter().all(|r| (r.p_s - 0.75).abs() <= 0.1);
    let cell = plan.cell(0).unwrap();
    let res = run_point(&{
        let mut p = plan.clone();
        p.n_traj = 50;
        p
    }, 0)
    .expect("point");
    let unreliable = res.stats.map_or(0, |s| s.n_unreliable);
    verdict(
        ok,
        format!(
            "ω_d={OMEGA_D_KAPPA1}, A=A_r+0.1={:.4}: P_s over T_δ/T_d∈[1.0,1.5] = [{}] (target 0.75 ± 0.1); {unreliable}/50 outcomes lack a steady period-doubled state",
            cell.amplitude(),
            ps.join(", ")
        ),
    )
}

fn c9(_: &mut Context) -> Verdict {
    let values = grid(0.5, 0.05, 15);
    let model = odm_template(OdmMethod::Twa, 1.0, 1.1, 1e4, true);
    let mut plan = odm_plan(model, Some(0.8), Some(0.55), None, DefectSpec::phase_ramp(1.0), 200);
    plan.axes = vec![AxisSpec { axis: Axis::TDelta, values: values.clone() }];
    let res: Vec<EnsembleResult> = run_grid(&plan).expect("grid");
    let ps: Vec<f64> = res.iter().map(|r| r.p_s()).collect();
    let (i, jump) = (0..ps.len() - 1)
        .map(|i| (i, ps[i + 1] - ps[i]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let tc = 0.5 * (values[i] + values[i + 1]);
    let step_ok = (tc - 0.8).abs() <= 0.1 && jump >= 0.5;
    let mut split = Vec::new();
    let mut split_ok = true;
    for (v, r) in values.iter().zip(&res) {
        if (0.9 - 1e-9..=1.1 + 1e-9).contains(v) {
            let (p, m) = (branch(&r.outcomes, 1.0), branch(&r.outcomes, -1.0));
            split_ok &= p >= 0.1 && m >= 0.1;
            split.push(format!("{v:.2}: +1 {p:.2} / −1 {m:.2}"));
        }
    }
    verdict(
        step_ok && split_ok,
        format!(
            "largest P_s jump {jump:.2} at T_δ,c={tc:.3} T_d (target 0.8 ± 0.1); P_w branches [{}]",
            split.join(", ")
        ),
    )
}

fn c10(ctx: &mut Context) -> Verdict {
    let mf = odm_template(OdmMethod::MeanField, 1.0, 1.1, 5e3, true);
    let t_r = 2.0;
    let run = |theta_d: f64, theta_f: f64| {
        let defect = DefectSpec::generalized(1.2, t_r, 0.0, theta_d, theta_f);
        run_point(&odm_plan(mf.clone(), Some(0.8), Some(0.55), None, defect, 1), 0).expect("point").outcomes[0]
    };
    let a = run(PI / 2.0, 0.0);
    ctx.parity_pool.push(("c10 θ_D=π/2".into(), a));
    let part1 = wrap_angle(a.delta_phi - PI).abs() < 0.05;
    let theta_f = PI / 2.0;
    let b = run(0.0, theta_f);
    let target = wrap_angle(PI + theta_f);
    let part2 = wrap_angle(b.delta_phi - target).abs() < 0.05;

    let model = odm_template(OdmMethod::Twa, 1.0, 1.1, 5e3, true);
    let mut plan = odm_plan(model, Some(0.8), Some(0.55), None, DefectSpec::generalized(0.9, 1.0, 0.0, 0.0, 0.0), 100);
    plan.drive.continuous_phase = true;
    let values = grid(0.5, 0.5, 15);
    plan.axes = vec![AxisSpec { axis: Axis::TR, values: values.clone() }];
    let res = run_grid(&plan).expect("grid");
    let t_d = TAU / 0.8;
    let mut worst: f64 = 0.0;
    for (v, r) in values.iter().zip(&res) {
        let tf = ((0.9 - 0.8) * v * t_d).rem_euclid(TAU);
        let mode = r.histogram.most_probable().unwrap_or(f64::NAN);
        worst = worst.max((mode + tf / TAU).abs());
    }
    let part3 = worst <= 0.15;
    verdict(
        part1 && part2 && part3,
        format!(
            "θ_D=π/2,θ_f=0: Δφ={:.4} ({}); θ_f=π/2: Δφ={:.4} vs (π+θ_f) mod 2π = {:.4} ({}); continuous sweep: max |w* + θ_f/2π| = {worst:.3} over θ_f∈[0,2π) ({})",
            a.delta_phi,
            if part1 { "ok" } else { "FAIL" },
            b.delta_phi,
            target,
            if part2 { "ok" } else { "FAIL" },
            if part3 { "ok" } else { "FAIL" }
        ),
    )
}

fn c11(_: &mut Context) -> Verdict {
    let model = odm_template(OdmMethod::Twa, 1.0, 1.1, 5e3, true);
    let mut plan = odm_plan(model, Some(0.8), Some(0.55), None, DefectSpec::freq_quench_to(0.9, 1.0), 100);
    let values = grid(0.5, 0.5, 30);
    plan.axes = vec![AxisSpec { axis: Axis::TR, values: values.clone() }];
    let res = run_grid(&plan).expect("grid");
    let masses: Vec<f64> = res.iter().map(|r| mass_near_integers(&r.outcomes, 0.1)).collect();
    let min_mass = masses.iter().cloned().fold(f64::INFINITY, f64::min);
    let modes: Vec<i64> = res
        .iter()
        .map(|r| r.histogram.most_probable().unwrap_or(f64::NAN).round() as i64)
        .collect();
    let changes = modes.windows(2).filter(|w| (w[0] - w[1]).rem_euclid(2) == 1).count();
    let (lo, hi) = (modes.iter().min().unwrap(), modes.iter().max().unwrap());
    let ok = min_mass >= 0.9 && changes >= 2 && hi - lo >= 2;
    verdict(
        ok,
        format!(
            "min integer-w mass {min_mass:.2} over {} T_r values (target ≥ 0.9); most-probable w {:?}; {changes} parity changes",
            values.len(),
            modes
        ),
    )
}

fn c12(ctx: &mut Context) -> Verdict {
    let model = odm_template(OdmMethod::MeanField, 0.01, 0.9, 1e4, true);
    let mut plan = odm_plan(model, None, None, Some(0.1), DefectSpec::phase_ramp(1.0), 1);
    let da = AxisSpec::linspace(Axis::DeltaA, 0.01, 0.4, 40);
    let td = AxisSpec::linspace(Axis::TDelta, 0.1, 4.0, 40);
    let mut td2 = td.clone();
    td2.values.iter_mut().for_each(|v| *v += 0.05);
    plan.axes = vec![da.clone(), td.clone()];
    let base = bitflip_diagram(&plan).expect("diagram");
    let dec = decorrelator_map(&plan, 1.0, 1e-5).expect("decorrelator");
    plan.axes = vec![da, td2];
    let shifted = bitflip_diagram(&plan).expect("diagram");
    for d in [&base, &shifted] {
        for (i, row) in d.outcomes.rows.iter().enumerate() {
            for (j, o) in row.iter().enumerate() {
                ctx.parity_pool.push((format!("c12 cell ({i},{j})"), *o));
            }
        }
    }
    let (mut changed, mut changed_irr, mut stable, mut stable_reg) = (0, 0, 0, 0);
    for i in 0..40 {
        for j in 0..40 {
            let irregular = *dec.get(i, j) >= 0.1;
            if base.flipped.get(i, j) != shifted.flipped.get(i, j) {
                changed += 1;
                changed_irr += irregular as usize;
            } else {
                stable += 1;
                stable_reg += (!irregular) as usize;
            }
        }
    }
    let f1 = changed_irr as f64 / changed.max(1) as f64;
    let f2 = stable_reg as f64 / stable.max(1) as f64;
    verdict(
        f1 >= 0.8 && f2 >= 0.8,
        format!(
            "{changed} T_δ-sensitive cells, {:.1}% with max d² ≥ 0.1 (target ≥ 80%); {stable} stable cells, {:.1}% with max d² < 0.1 (target ≥ 80%)",
            100.0 * f1,
            100.0 * f2
        ),
    )
}

fn c13(_: &mut Context) -> Verdict {
    let mut po = Vec::new();
    for temp in [1e-6, 1e-5, 1e-4, 2e-4] {
        let plan = po_plan(temp, DefectSpec::none(), 50);
        po.push(crystalline_point(&plan, 0).expect("chi").mean);
    }
    let mut odm = Vec::new();
    for n in [1e5, 1e4, 1e3] {
        let model = odm_template(OdmMethod::Twa, 1.0, 0.9, n, true);
        let plan = odm_plan(model, Some(OMEGA_D_KAPPA1), None, Some(0.1), DefectSpec::none(), 50);
        odm.push(crystalline_point(&plan, 0).expect("chi").mean);
    }
    let dec = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let po_ok = po[0] > 0.9 && dec(&po);
    let odm_ok = odm[0] > 0.9 && dec(&odm);
    let f = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    verdict(
        po_ok && odm_ok,
        format!(
            "PO χ(T̃=1e-6,1e-5,1e-4,2e-4) = [{}] ({}); ODM χ(N=1e5,1e4,1e3) at ω_d={OMEGA_D_KAPPA1}, δA=0.1 = [{}] ({})",
            f(&po),
            if po_ok { "ok" } else { "FAIL" },
            f(&odm),
            if odm_ok { "ok" } else { "FAIL" }
        ),
    )
}

/// Checks whose outcome does not gate the suite but explains a red criterion.
fn diagnostics() {
    // higher amplitude at the same κ = ω operating point: above the numerical threshold
    let model = odm_template(OdmMethod::Twa, 1.0, 0.9, 5e3, true);
    let mut plan = odm_plan(model, Some(OMEGA_D_KAPPA1), Some(0.53), None, DefectSpec::phase_ramp(1.0), 200);
    plan.axes = vec![AxisSpec { axis: Axis::TDelta, values: grid(1.0, 0.1, 6) }];
    if let Ok(rows) = curve(&plan) {
        let ps: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.p_s)).collect();
        println!("[info] κ=ω, λ₀=0.9λ_c, A=0.53, full TWA noise, N=5e3: P_s(T_δ/T_d=1.0..1.5) = [{}]", ps.join(", "));
    }
    let model = odm_template(OdmMethod::Twa, 1.0, 0.9, 1e5, true);
    let plan = odm_plan(model, Some(OMEGA_D_KAPPA1), Some(0.53), None, DefectSpec::none(), 20);
    if let Ok(r) = crystalline_point(&plan, 0) {
        println!("[info] κ=ω, λ₀=0.9λ_c, A=0.53, TWA N=1e5: χ = {:.4}", r.mean);
    }
    let _ = crystalline_fraction;
}

type Criterion = (u32, &'static str, fn(&mut Context) -> Verdict);

fn main() {
    let criteria: [Criterion; 13] = [
        (1, "pendulum threshold collapse", c1),
        (2, "noiseless pendulum flip step", c2),
        (3, "thermal crossover width", c3),
        (4, "equipartition", c4),
        (5, "cavity vacuum floor", c5),
        (6, "conservation suite", c6),
        (10, "phase-error protocol", c10),
        (12, "fractal diagnosis", c12),
        (7, "winding parity", c7),
        (8, "Dicke plateau", c8),
        (9, "superradiant discontinuity", c9),
        (11, "quench staircase", c11),
        (13, "crystalline fraction trend", c13),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |id: u32| selected.is_empty() || selected.contains(&id);
    let mut ctx = Context::default();
    let mut results = Vec::new();
    for (id, name, f) in criteria {
        // parity draws on the outcomes of 2, 10 and 12
        let needed = wants(id) || (wants(7) && matches!(id, 2 | 10 | 12));
        if !needed {
            continue;
        }
        let t = Instant::now();
        let v = f(&mut ctx);
        if wants(id) {
            println!(
                "[{}] criterion {id:>2} ({name}): {} [{:.1}s]",
                if v.pass { "PASS" } else { "FAIL" },
                v.detail,
                t.elapsed().as_secs_f64()
            );
            results.push((id, v.pass));
        }
    }
    if selected.is_empty() || selected.iter().any(|&i| i == 8 || i == 13) {
        diagnostics();
    }
    results.sort();
    let failed: Vec<u32> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" (criteria {failed:?})") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
