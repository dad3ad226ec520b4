//! `bitflip`: simulations, sweeps and diagnostics from the command line.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bitflip::analysis::{analyse_series, po_resonance_scan};
use bitflip::integrator::{NoiseStream, StepperConfig};
use bitflip::odm::{lambda_c, lower_polariton, resonance_amplitude, simulate_odm};
use bitflip::po::{po_resonance, simulate_po, COHERENCE_TEMPERATURE_LIMIT};
use bitflip::sweep::{
    bitflip_diagram, crystalline_point, curve, decorrelator_map, phase_map, run_grid, run_point, write_aggregate_csv,
    write_histogram_csv, write_matrix_csv, write_outcomes_csv, write_table, write_trajectory_csv, AxisSpec,
    CellModel, DecisionConstants, SweepPlan,
};
use bitflip::Error;

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "bitflip", version, about = "Bit-flip protocols for period-doubled oscillators and Dicke time crystals")]
struct Cli {
    /// Worker threads for ensemble runs (results do not depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory through the defect, written as a time series.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// End of the run in drive periods after t = 0.
        #[arg(long)]
        cycles: Option<f64>,
        /// Trajectory index within the seed family.
        #[arg(long, default_value_t = 0)]
        trajectory: u64,
    },
    /// Noiseless bit-flip diagram over two axes.
    Diagram {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Switching probability along one axis.
    Curve {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Half-winding distributions for every cell.
    Histogram {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Period-doubling onset of the pendulum for several dampings.
    Scan {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated damping rates.
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        /// Scan grid in units of 2γ/Ω: start:stop:n.
        #[arg(long, default_value = "0.5:1.5:11")]
        grid: String,
        /// Bisection tolerance in units of 2γ/Ω.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Mean-field spin decorrelator, over up to two axes.
    Decorrelate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = bitflip::analysis::DECORRELATOR_EPS_A)]
        eps_a: f64,
        #[arg(long, default_value_t = bitflip::analysis::DECORRELATOR_EPS_AMP)]
        eps_amp: f64,
    },
    /// Dynamical phase (NP, SP, DTC, irregular) and crystalline fraction.
    Classify {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Derived quantities of a configuration, without running anything.
    Validate {
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "temp")]
    temperature: Option<f64>,
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long = "lambda-ratio")]
    lambda_ratio: Option<f64>,
    #[arg(long = "N")]
    n: Option<f64>,
    /// Disable Wiener increments; keep sampled initial conditions.
    #[arg(long)]
    initial_noise_only: bool,
    #[arg(long)]
    resolution: Option<String>,
    #[arg(long = "omega-d")]
    omega_d: Option<f64>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long = "delta-a")]
    delta_a: Option<f64>,
    /// Defect kind: none, ramp, quench, switch-off, generalized.
    #[arg(long)]
    drive: Option<String>,
    /// Defect duration in drive periods.
    #[arg(long)]
    tdelta: Option<f64>,
    /// Hold duration in drive periods.
    #[arg(long)]
    tr: Option<f64>,
    #[arg(long = "omega-prime")]
    omega_prime: Option<f64>,
    #[arg(long = "theta-i")]
    theta_i: Option<f64>,
    #[arg(long = "theta-d")]
    theta_d: Option<f64>,
    #[arg(long = "theta-f")]
    theta_f: Option<f64>,
    #[arg(long)]
    continuous_phase: bool,
    /// Sweep axis `name:start:stop:n` or `name:v1,v2`; repeat for a grid.
    #[arg(long)]
    axis: Vec<String>,
    #[arg(long)]
    ntraj: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    prep: Option<f64>,
    #[arg(long)]
    relax: Option<f64>,
    #[arg(long)]
    measure: Option<f64>,
    /// Existing output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    prefix: Option<String>,
}

impl RunArgs {
    fn flags(&self) -> RunConfig {
        let mut c = RunConfig::default();
        let m = &mut c.model;
        m.kind = self.model.clone();
        m.method = self.method.clone();
        m.omega = self.omega;
        m.gamma = self.gamma;
        m.temperature = self.temperature;
        m.omega0 = self.omega0;
        m.kappa = self.kappa;
        m.lambda_ratio = self.lambda_ratio;
        m.n = self.n;
        m.temporal_noise = self.initial_noise_only.then_some(false);
        m.resolution = self.resolution.clone();
        let d = &mut c.drive;
        d.omega_d = self.omega_d;
        d.amplitude = self.amplitude;
        d.delta_a = self.delta_a;
        d.continuous_phase = self.continuous_phase.then_some(true);
        let p = &mut c.protocol;
        p.kind = self.drive.clone();
        p.t_delta = self.tdelta;
        p.t_r = self.tr;
        p.omega_prime = self.omega_prime;
        p.theta_i = self.theta_i;
        p.theta_d = self.theta_d;
        p.theta_f = self.theta_f;
        let s = &mut c.sweep;
        s.axes = (!self.axis.is_empty()).then(|| self.axis.clone());
        s.n_traj = self.ntraj;
        s.master_seed = self.seed;
        s.dt = self.dt;
        c.schedule.prep_cycles = self.prep;
        c.schedule.relax_cycles = self.relax;
        c.schedule.measure_cycles = self.measure;
        c.output.dir = self.out.clone();
        c.output.prefix = self.prefix.clone();
        c
    }

    fn load(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::config(format!("cannot read {}: {e}", p.display())))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        cfg.overlay(&self.flags());
        Ok(cfg)
    }
}

/// Error with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: String) -> Self {
        Self { code: 2, message }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Diverged { .. } | Error::AllDiverged { .. } => 3,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Output location and the JSON sidecar that describes every run.
struct Output {
    dir: PathBuf,
    prefix: String,
}

#[derive(Serialize)]
struct Sidecar<'a, S: Serialize> {
    command: &'a str,
    plan: &'a SweepPlan,
    decisions: DecisionConstants,
    files: Vec<String>,
    summary: S,
}

impl Output {
    fn new(cfg: &RunConfig) -> Result<Self, Failure> {
        let dir = PathBuf::from(cfg.output.dir.clone().unwrap_or_else(|| ".".into()));
        if !dir.is_dir() {
            return Err(Failure::config(format!(
                "invalid `output.dir`: {} does not exist or is not a directory",
                dir.display()
            )));
        }
        Ok(Self {
            dir,
            prefix: cfg.output.prefix.clone().unwrap_or_else(|| "bitflip".into()),
        })
    }

    fn path(&self, what: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{}_{what}.{ext}", self.prefix))
    }

    fn sidecar<S: Serialize>(&self, command: &str, plan: &SweepPlan, files: &[PathBuf], summary: S) -> Result<(), Failure> {
        let side = Sidecar {
            command,
            plan,
            decisions: DecisionConstants::new(plan.schedule),
            files: files.iter().map(|p| p.display().to_string()).collect(),
            summary,
        };
        let path = self.path(command, "json");
        let text = serde_json::to_string_pretty(&side).map_err(|e| Failure::config(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

fn d(x: f64) -> String {
    x.to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(k) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global() {
            eprintln!("error: cannot build worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<String, Failure> {
    match cmd {
        Command::Simulate { run, cycles, trajectory } => simulate(&run, cycles, trajectory),
        Command::Diagram { run } => diagram(&run),
        Command::Curve { run } => curve_cmd(&run),
        Command::Histogram { run } => histogram(&run),
        Command::Scan { run, gammas, grid, tol } => scan(&run, &gammas, &grid, tol),
        Command::Decorrelate { run, eps_a, eps_amp } => decorrelate(&run, eps_a, eps_amp),
        Command::Classify { run } => classify(&run),
        Command::Validate { run } => validate(&run),
    }
}

fn simulate(run: &RunArgs, cycles: Option<f64>, trajectory: u64) -> Result<String, Failure> {
    let cfg = run.load()?;
    let mut plan = cfg.to_plan()?;
    if !plan.axes.is_empty() {
        return Err(Failure::config("invalid `sweep.axes`: simulate runs a single point".into()));
    }
    plan.n_traj = 1;
    let out = Output::new(&cfg)?;
    let cell = plan.cell(0)?;
    let end = cell.defect_end();
    let t_end = match cycles {
        Some(c) => c * cell.t_d,
        None => plan.schedule.t_end(cell.t_d, end),
    };
    let config = StepperConfig::new(cell.dt, plan.schedule.t_start(cell.t_d), t_end, 1)?;
    let mut stream = NoiseStream::for_cell(plan.master_seed, 0, trajectory);
    let traj = match &cell.model {
        CellModel::Po(p) => simulate_po(p, &config, &mut stream)?,
        CellModel::Odm(o) => simulate_odm(o, &config, &mut stream)?,
    };
    let path = out.path("trajectory", "csv");
    write_trajectory_csv(&traj, &path)?;
    if let Some(t) = traj.diverged_at {
        return Err(Error::Diverged { t }.into());
    }
    let windows = plan.schedule.phase_windows(cell.t_d, end, std::f64::consts::TAU / cell.omega_response);
    let outcome = analyse_series(traj.order_parameter(), traj.t0, traj.sample_dt, cell.omega_response, &windows).ok();
    out.sidecar("simulate", &plan, &[path.clone()], &outcome)?;
    Ok(match outcome {
        Some(o) => format!(
            "{} samples -> {}; delta_phi = {:.4}, flipped = {}, w = {:.3}, reliable = {}",
            traj.len(),
            path.display(),
            o.delta_phi,
            o.flipped,
            o.w,
            o.reliable
        ),
        None => format!("{} samples -> {} (run too short to measure a flip)", traj.len(), path.display()),
    })
}

fn diagram(run: &RunArgs) -> Result<String, Failure> {
    let cfg = run.load()?;
    let plan = cfg.to_plan()?;
    let out = Output::new(&cfg)?;
    let res = bitflip_diagram(&plan)?;
    let files = [out.path("delta_phi", "csv"), out.path("flipped", "csv"), out.path("reliable", "csv")];
    write_matrix_csv(&res.delta_phi, &files[0])?;
    let as_int = |m: &bitflip::sweep::Matrix<bool>| bitflip::sweep::Matrix {
        row_axis: m.row_axis,
        row_values: m.row_values.clone(),
        col_axis: m.col_axis,
        col_values: m.col_values.clone(),
        rows: m.rows.iter().map(|r| r.iter().map(|&b| b as u8).collect()).collect(),
    };
    write_matrix_csv(&as_int(&res.flipped), &files[1])?;
    write_matrix_csv(&as_int(&res.reliable), &files[2])?;
    let flips: usize = res.flipped.rows.iter().flatten().filter(|&&b| b).count();
    let (r, c) = (res.delta_phi.row_values.len(), res.delta_phi.col_values.len());
    out.sidecar("diagram", &plan, &files, serde_json::json!({ "rows": r, "cols": c, "flipped_cells": flips }))?;
    Ok(format!("{r}x{c} diagram, {flips} flipped cells -> {}", files[0].display()))
}

fn curve_cmd(run: &RunArgs) -> Result<String, Failure> {
    let cfg = run.load()?;
    let plan = cfg.to_plan()?;
    let out = Output::new(&cfg)?;
    let rows = curve(&plan)?;
    let axis = plan.axes[0].axis.name().to_string();
    let header: Vec<String> = [axis.as_str(), "p_s", "se", "n_valid", "n_diverged", "most_probable_w"]
        .map(String::from)
        .to_vec();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                d(r.value),
                d(r.p_s),
                d(r.se),
                r.n_valid.to_string(),
                r.n_diverged.to_string(),
                d(r.histogram.most_probable().unwrap_or(f64::NAN)),
            ]
        })
        .collect();
    let path = out.path("curve", "csv");
    write_table(&path, &header, &table)?;
    let summary: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.value, r.p_s, r.se)).collect();
    out.sidecar("curve", &plan, &[path.clone()], &summary)?;
    let body: Vec<String> = rows.iter().map(|r| format!("{:.4}: {:.3} ± {:.3}", r.value, r.p_s, r.se)).collect();
    Ok(format!("P_s along {axis}: {} -> {}", body.join(", "), path.display()))
}

fn histogram(run: &RunArgs) -> Result<String, Failure> {
    let cfg = run.load()?;
    let plan = cfg.to_plan()?;
    let out = Output::new(&cfg)?;
    let results = if plan.axes.is_empty() { vec![run_point(&plan, 0)?] } else { run_grid(&plan)? };
    let files = [out.path("histogram", "csv"), out.path("outcomes", "csv"), out.path("aggregate", "csv")];
    write_histogram_csv(&results, &files[0])?;
    write_outcomes_csv(&results, &files[1])?;
    write_aggregate_csv(&results, &files[2])?;
    let modes: Vec<Option<f64>> = results.iter().map(|r| r.histogram.most_probable()).collect();
    out.sidecar("histogram", &plan, &files, &modes)?;
    let first = &results[0];
    Ok(format!(
        "{} cells; first cell P_s = {:.3} ± {:.3}, most probable w = {:?} -> {}",
        results.len(),
        first.p_s(),
        first.stats.map_or(f64::NAN, |s| s.se),
        first.histogram.most_probable(),
        files[0].display()
    ))
}

fn scan(run: &RunArgs, gammas: &[f64], grid: &str, tol: f64) -> Result<String, Failure> {
    let mut cfg = run.load()?;
    if gammas.is_empty() {
        return Err(Failure::config("invalid `gammas`: give at least one damping rate".into()));
    }
    if cfg.model.kind.as_deref().is_some_and(|k| k != "po") {
        return Err(Failure::config("invalid `model.kind`: scan supports the po model".into()));
    }
    cfg.model.kind = Some("po".into());
    cfg.model.gamma = Some(gammas[0]);
    let plan = cfg.to_plan()?;
    let out = Output::new(&cfg)?;
    let omega = cfg.model.omega.unwrap_or(1.0);
    let unit = AxisSpec::parse(&format!("amplitude:{grid}")).map_err(|e| Failure::config(format!("invalid `grid`: {e}")))?;
    let mut table = Vec::new();
    let mut summary = Vec::new();
    for &g in gammas {
        let scale = 2.0 * g / omega;
        let amps: Vec<f64> = unit.values.iter().map(|v| v * scale).collect();
        let (_, scaled) = po_resonance_scan(omega, g, &amps, tol * scale)?;
        let onset = scaled.map(|s| s * scale);
        table.push(vec![d(g), d(onset.unwrap_or(f64::NAN)), d(scaled.unwrap_or(f64::NAN))]);
        summary.push((g, onset, scaled));
    }
    let path = out.path("scan", "csv");
    write_table(&path, &["gamma".into(), "a_onset".into(), "a_scaled".into()], &table)?;
    out.sidecar("scan", &plan, &[path.clone()], &summary)?;
    let body: Vec<String> = summary
        .iter()
        .map(|(g, _, s)| format!("γ={g}: {}", s.map_or("no onset".into(), |s| format!("{s:.4}"))))
        .collect();
    Ok(format!("A_onset Ω/2γ: {} -> {}", body.join(", "), path.display()))
}

fn decorrelate(run: &RunArgs, eps_a: f64, eps_amp: f64) -> Result<String, Failure> {
    let cfg = run.load()?;
    let plan = cfg.to_plan()?;
    let out = Output::new(&cfg)?;
    let mut grid = plan.clone();
    // pad to two axes with single-valued dummies so every shape is a matrix
    let pads = [bitflip::sweep::Axis::TDelta, bitflip::sweep::Axis::DeltaA];
    for axis in pads {
        if grid.axes.len() < 2 && grid.axes.iter().all(|a| a.axis != axis) {
            let v = match axis {
                bitflip::sweep::Axis::TDelta => plan.drive.defect.t_delta,
                _ => plan.drive.delta_a,
            };
            if let Some(v) = v {
                grid.axes.push(AxisSpec { axis, values: vec![v] });
            }
        }
    }
    if grid.axes.len() > 2 {
        return Err(Failure::config("invalid `sweep.axes`: at most two axes".into()));
    }
    if grid.axes.len() < 2 {
        return Err(Failure::config(
            "invalid `sweep.axes`: needs two axes, or T_delta/delta_a values to pad with".into(),
        ));
    }
    let m = decorrelator_map(&grid, eps_a, eps_amp)?;
    let path = out.path("decorrelator", "csv");
    write_matrix_csv(&m, &path)?;
    let irregular = m.rows.iter().flatten().filter(|&&v| v >= bitflip::analysis::IRREGULAR_DECORRELATION).count();
    out.sidecar("decorrelate", &grid, &[path.clone()], serde_json::json!({ "eps_a": eps_a, "eps_amp": eps_amp, "irregular_cells": irregular }))?;
    let max = m.rows.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(format!(
        "{}x{} decorrelator map, max d² = {max:.4}, {irregular} irregular cells -> {}",
        m.row_values.len(),
        m.col_values.len(),
        path.display()
    ))
}

fn classify(run: &RunArgs) -> Result<String, Failure> {
    let cfg = run.load()?;
    let plan = cfg.to_plan()?;
    let out = Output::new(&cfg)?;
    let phases = phase_map(&plan)?;
    let mut header: Vec<String> = plan.axes.iter().map(|a| a.axis.name().to_string()).collect();
    header.extend(["phase".into(), "chi".into(), "chi_se".into()]);
    let mut rows = Vec::new();
    for (i, (coords, phase)) in phases.iter().enumerate() {
        let chi = crystalline_point(&plan, i)?;
        let mut r: Vec<String> = coords.iter().map(|(_, v)| d(*v)).collect();
        r.extend([format!("{phase:?}").to_lowercase(), d(chi.mean), d(chi.se)]);
        rows.push(r);
    }
    let path = out.path("classify", "csv");
    write_table(&path, &header, &rows)?;
    out.sidecar("classify", &plan, &[path.clone()], &rows)?;
    let first = &rows[0];
    Ok(format!(
        "{} cells; first: {} (chi = {}) -> {}",
        rows.len(),
        first[first.len() - 3],
        first[first.len() - 2],
        path.display()
    ))
}

fn validate(run: &RunArgs) -> Result<String, Failure> {
    let cfg = run.load()?;
    let mut lines = Vec::new();
    let m = &cfg.model;
    match m.kind.as_deref() {
        Some("po") => {
            let omega = m.omega.unwrap_or(1.0);
            if let Some(g) = m.gamma {
                let (w_r, a_r) = po_resonance(omega, g);
                lines.push(format!("pendulum: resonance omega_r = {w_r}, threshold A_r = {a_r}"));
            }
            if m.temperature.is_some_and(|t| t > COHERENCE_TEMPERATURE_LIMIT) {
                lines.push(format!(
                    "warning: temperature {} exceeds {COHERENCE_TEMPERATURE_LIMIT}; subharmonic coherence is lost",
                    m.temperature.unwrap_or_default()
                ));
            }
        }
        Some("odm") => {
            let (omega, kappa) = (m.omega.unwrap_or(1.0), m.kappa.unwrap_or(f64::NAN));
            let lc = lambda_c(omega, kappa);
            lines.push(format!("lambda_c = {lc}"));
            if let Some(r) = m.lambda_ratio {
                let lam = r * lc;
                lines.push(format!("lambda0 = {lam}"));
                match lower_polariton(omega, kappa, lam) {
                    Ok(w) => lines.push(format!("omega_minus = {w}, resonant omega_d = 2 omega_minus = {}", 2.0 * w)),
                    Err(e) => lines.push(format!("omega_minus: {e}; pass omega_d explicitly")),
                }
                lines.push(format!("A_r = {}", resonance_amplitude(omega, kappa, lam)));
            }
        }
        _ => lines.push("model.kind not set".into()),
    }
    match cfg.to_plan() {
        Ok(plan) => {
            let cell = plan.cell(0)?;
            lines.push(format!("omega_d = {}, A = {}, T_d = {}", std::f64::consts::TAU / cell.t_d, cell.amplitude(), cell.t_d));
            let p = &plan.drive.defect;
            if let Some(w) = p.omega_prime {
                lines.push(format!("omega_d' = {w}"));
            } else if let Some(td) = p.t_delta {
                lines.push(format!("omega_d' = {}", std::f64::consts::TAU / cell.t_d + std::f64::consts::TAU / (td * cell.t_d)));
            }
            lines.push(format!("{} cells x {} trajectories, dt = {}", plan.n_cells(), plan.n_traj, cell.dt));
            lines.push(format!("plan fingerprint {}", plan.fingerprint()));
        }
        Err(e) => lines.push(format!("plan: {e}")),
    }
    Ok(lines.join("\n"))
}
