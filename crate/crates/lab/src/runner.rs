//! Scenario execution and artifacts.
//!
//! Every run writes its CSV and JSON files plus `manifest.json` into the
//! output directory. Exit codes: 0 when every assertion holds, 2 when an
//! assertion fails (the report is still written), 1 on execution errors.

use crate::config::{
    Command, DecayParams, FlowParams, GeometryParams, Initial, ModelSpec, Params, PhiShape, PoissonMode, PoissonParams,
    Potential, ProfileKind, ReportParams, RiccatiParams, Scenario, StabilityParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;
use yamabe_core::elliptic::{
    assemble_conformal_laplacian, property_h_construction, property_m_solution, scalar_curvature_on,
    yamabe_zero_metric_m, ZeroMetric,
};
use yamabe_core::flow::{
    check_class_ac, check_fine_bounds, convergence_to_yamabe, run_flow, verify_barriers, Fault, FlowConfig, FlowForm,
};
use yamabe_core::geometry::{bishop_check, curvature_data, POLE_WINDOW};
use yamabe_core::riccati::{
    build_cylinder_bump_fixture, factorization_residual, integrate_riccati, potential_q, yamabe_factor_from_riccati,
    RiccatiCase, RICCATI_RESIDUAL_TOL,
};
use yamabe_core::stability::{build_cutoff, kato_check, uniqueness_decay_experiment, verify_stability_inequality};
use yamabe_core::{build_profile, GridFunction, ManifoldModel, Profile, ProfileSpec};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_ASSERTION: i32 = 2;

/// Identity residual accepted for `R0 = 2(n-1)K + (n-1)(n-2)K1`.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Sup of `|R(g)|` accepted for exhaustion metrics.
pub const EXHAUSTION_CURVATURE_TOL: f64 = 1e-6;
/// Sup of `|R(g)|` accepted for Riccati metrics.
pub const RICCATI_CURVATURE_TOL: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Core(#[from] yamabe_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Scenario(String),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: u64,
    /// Upper bound on threads used inside one scenario.
    pub threads: usize,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions { out: out.into(), seed: 0, threads: threads_from_env() }
    }
}

/// `YAMABE_LAB_THREADS`, else the available parallelism.
pub fn threads_from_env() -> usize {
    std::env::var("YAMABE_LAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    /// Human-readable assertion failures; empty on success.
    pub failures: Vec<String>,
    pub files: Vec<String>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }
}

pub fn exit_code(result: &Result<RunSummary, RunError>) -> i32 {
    match result {
        Ok(s) if s.passed() => EXIT_PASS,
        Ok(_) => EXIT_ASSERTION,
        Err(_) => EXIT_ERROR,
    }
}

/// Runs the scenario, then writes `manifest.json` whatever the outcome.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let start = Instant::now();
    fs::create_dir_all(&opts.out)?;
    let result = dispatch(scenario, opts);
    let code = exit_code(&result);
    let mut manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "name": scenario.name,
        "command": scenario.command.as_str(),
        "config_hash": config_hash(&scenario.source),
        "seed": opts.seed,
        "threads": opts.threads,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "exit_code": code,
    });
    match &result {
        Ok(s) => {
            manifest["failures"] = json!(s.failures);
            manifest["files"] = json!(s.files);
        }
        Err(e) => manifest["error"] = json!(e.to_string()),
    }
    fs::write(opts.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    result
}

/// SHA-256 of the config text, hex encoded.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn dispatch(scenario: &Scenario, opts: &RunOptions) -> Result<RunSummary, RunError> {
    if let Params::Report(p) = &scenario.params {
        return run_report(p, opts);
    }
    let spec = scenario.model.as_ref().expect("non-report scenarios carry a model");
    let model = build_model(spec)?;
    let mut out = Artifacts { dir: &opts.out, summary: RunSummary::default() };
    let outcome = match &scenario.params {
        Params::Geometry(p) => run_geometry(&model, p, &mut out),
        Params::Poisson(p) => run_poisson(&model, p, &mut out),
        Params::Flow(p) => run_flow_scenario(&model, p, &mut out),
        Params::Stability(p) => run_stability(&model, p, opts, &mut out),
        Params::Decay(p) => run_decay(&model, p, &mut out),
        Params::Riccati(p) => run_riccati(&model, spec, p, &mut out),
        Params::Report(_) => unreachable!(),
    };
    match outcome {
        Ok(()) => Ok(out.summary),
        // postcondition checks inside the core are assertions, not crashes
        Err(RunError::Core(e @ (yamabe_core::Error::Residual { .. } | yamabe_core::Error::NonMonotone { .. }))) => {
            let file = format!("{}.json", scenario.command);
            out.json(&file, &json!({ "passed": false, "error": e.to_string() }))?;
            out.summary.failures.push(e.to_string());
            Ok(out.summary)
        }
        Err(e) => Err(e),
    }
}

pub fn build_model(spec: &ModelSpec) -> Result<ManifoldModel, RunError> {
    if spec.potential == Potential::CylinderBump {
        return Ok(build_cylinder_bump_fixture(spec.h, spec.cells)?.model);
    }
    let profile = match spec.profile {
        ProfileKind::Euclidean => Profile::Euclidean,
        ProfileKind::SphereCap => Profile::SphereCap,
        ProfileKind::Cylinder => Profile::Cylinder,
        ProfileKind::FromCurvature => Profile::FromCurvature(spec.table.clone().unwrap_or_default()),
        ProfileKind::Tabulated => Profile::Tabulated(spec.table.clone().unwrap_or_default()),
    };
    let mut ps = ProfileSpec::new(profile, spec.n, spec.h, spec.cells);
    match spec.potential {
        Potential::Geometric | Potential::CylinderBump => {}
        Potential::Zero => ps = ps.with_potential(vec![0.0; spec.cells + 1]),
        Potential::Gaussian { amplitude, width } => {
            let r0 = (0..=spec.cells).map(|i| amplitude * (-(i as f64 * spec.h / width).powi(2)).exp()).collect();
            ps = ps.with_potential(r0);
        }
    }
    if spec.nonnegative {
        ps = ps.nonnegative();
    }
    Ok(build_profile(&ps)?)
}

struct Artifacts<'a> {
    dir: &'a Path,
    summary: RunSummary,
}

impl Artifacts<'_> {
    /// Numbers are written with 17 significant digits.
    fn csv<'r>(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = &'r [f64]>) -> io::Result<()> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            for (j, x) in row.iter().enumerate() {
                if j > 0 {
                    text.push(',');
                }
                write!(text, "{x:.16e}").expect("writing to a String");
            }
            text.push('\n');
        }
        fs::write(self.dir.join(name), text)?;
        self.summary.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<(), RunError> {
        fs::write(self.dir.join(name), serde_json::to_string_pretty(value)?)?;
        self.summary.files.push(name.to_string());
        Ok(())
    }
}

fn columns(cols: &[&[f64]]) -> Vec<Vec<f64>> {
    let len = cols.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..len).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

fn sup_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn run_geometry(model: &ManifoldModel, p: &GeometryParams, out: &mut Artifacts) -> Result<(), RunError> {
    let cd = curvature_data(model);
    let r = model.r_values();
    let rows = columns(&[&r, model.f(), model.fp(), &cd.k, &cd.k1, model.r0(), &cd.rc_radial, &cd.rc_tangential]);
    out.csv("geometry.csv", &["r", "f", "fp", "K", "K1", "R0", "Rc_r", "Rc_t"], rows.iter().map(Vec::as_slice))?;
    let n = model.n() as f64;
    let composed: Vec<f64> =
        cd.k.iter().zip(cd.k1.iter()).map(|(k, k1)| 2.0 * (n - 1.0) * k + (n - 1.0) * (n - 2.0) * k1).collect();
    let identity = cd.r0.iter().zip(&composed).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let geometric = model.mode() == yamabe_core::Mode::Geometric;
    let background = if geometric { model.r0().sup_diff(&GridFunction(composed)) } else { f64::NAN };
    out.summary.check(identity <= IDENTITY_TOL, || format!("curvature identity residual {identity:e}"));
    if geometric {
        out.summary
            .check(background <= IDENTITY_TOL, || format!("R0 differs from the curvature identity by {background:e}"));
    }
    let bishop = if p.radii.is_empty() { None } else { Some(bishop_check(model, &p.radii)?) };
    if let Some(b) = bishop.as_ref().filter(|b| b.applicable) {
        out.summary.check(b.passed, || format!("Bishop comparison fails, max ratio {}", b.max_ratio));
    }
    out.json(
        "geometry.json",
        &json!({
            "mode": model.mode().as_str(),
            "n": model.n(),
            "h": model.grid().h(),
            "N": model.grid().n_cells(),
            "identity_residual": identity,
            "background_residual": if geometric { json!(background) } else { Value::Null },
            "bishop": bishop,
            "passed": out.summary.passed(),
        }),
    )
}

fn run_poisson(model: &ManifoldModel, p: &PoissonParams, out: &mut Artifacts) -> Result<(), RunError> {
    let last_radius = *p.schedule.last().expect("schedule is non-empty");
    let last = model.grid().index_of(last_radius)?;
    let (v, metric, extra): (GridFunction, Option<ZeroMetric>, Value) = match p.mode {
        PoissonMode::M => {
            let pm = property_m_solution(model, &p.schedule, p.tol, p.decay_fraction)?;
            out.summary.check(pm.decay_ok, || "property (M) not numerically confirmed: v does not decay".into());
            out.summary.check(pm.sup_v <= 1.0 + 1e-10, || format!("sup v = {} exceeds 1", pm.sup_v));
            let zm = yamabe_zero_metric_m(model, &pm.v, last_radius)?;
            let extra = json!({
                "sup_changes": pm.exhaustion.sup_changes,
                "converged_at": pm.exhaustion.converged_at,
                "decay_flag": pm.decay_ok,
                "trivial": pm.trivial,
                "sup_v": pm.sup_v,
            });
            (pm.v, Some(zm), extra)
        }
        PoissonMode::H => {
            let phi = model.grid().sample(|r| {
                1.0 + p.phi_amplitude
                    * match p.phi {
                        PhiShape::Harmonic => 1.0 / (1.0 + r * r).sqrt(),
                        PhiShape::Exponential => (-r).exp(),
                    }
            });
            let ph = property_h_construction(model, &phi, p.theta_bound, &p.schedule, p.tol, None)?;
            out.summary.check(ph.condition1, || format!("L phi >= 0 violated (min {:e})", ph.min_f_rhs));
            out.summary.check(ph.condition2, || format!("theta = {} not below {}", ph.theta, p.theta_bound));
            let extra = json!({
                "decay_flag": ph.condition2,
                "theta": ph.theta,
                "min_f_rhs": ph.min_f_rhs,
                "sup_changes": ph.sup_changes,
            });
            (ph.u_inf, ph.metric, extra)
        }
    };
    let nodes = model.grid().len();
    let (w, residual, min_w, residual_sup, curvature_sup) = match &metric {
        Some(zm) => {
            let op = assemble_conformal_laplacian(model, last_radius)?;
            let mut lw = op.apply(&zm.w);
            lw.resize(nodes, f64::NAN);
            let rg = scalar_curvature_on(model, &zm.w, 0..last)?;
            (zm.w.to_vec(), lw, zm.min_w, zm.residual, sup_abs(&rg))
        }
        None => (vec![f64::NAN; nodes], vec![f64::NAN; nodes], f64::NAN, f64::NAN, f64::NAN),
    };
    out.summary.check(metric.is_some(), || "no zero-scalar-curvature metric produced".into());
    if metric.is_some() {
        out.summary.check(min_w > 0.0, || format!("min w = {min_w} is not positive"));
        out.summary.check(curvature_sup <= EXHAUSTION_CURVATURE_TOL, || format!("sup |R(g_w)| = {curvature_sup:e}"));
    }
    let r = model.r_values();
    let rows = columns(&[&r, &v, &w, &residual]);
    out.csv("poisson.csv", &["r", "v", "w", "residual"], rows.iter().map(Vec::as_slice))?;
    let mut summary = json!({
        "mode": match p.mode { PoissonMode::M => "M", PoissonMode::H => "H" },
        "model_mode": model.mode().as_str(),
        "n": model.n(),
        "schedule": p.schedule,
        "min_w": min_w,
        "residual_sup": residual_sup,
        "curvature_sup": curvature_sup,
        "passed": out.summary.passed(),
    });
    summary.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    out.json("poisson.json", &summary)
}

fn run_flow_scenario(model: &ManifoldModel, p: &FlowParams, out: &mut Artifacts) -> Result<(), RunError> {
    let pm = property_m_solution(model, &p.schedule, p.tol, 0.05)?;
    let limit_radius = *p.schedule.last().unwrap();
    let w = yamabe_zero_metric_m(model, &pm.v, limit_radius)?.w;
    let u0 = match p.initial {
        Initial::One => GridFunction::constant(model.grid().len(), 1.0),
        Initial::Bump => model.grid().sample(|r| 1.0 + p.amplitude * (-r * r).exp()),
        Initial::Envelope => pm.v.map(|x| 1.0 + p.amplitude * p.barrier_c * x),
    };
    let form = if p.porous_medium { FlowForm::PorousMedium } else { FlowForm::Conformal };
    let cfg = FlowConfig::new(p.dt, p.horizon).with_stride(p.stride).with_barrier(p.barrier_c).with_form(form);
    let traj = run_flow(model, &u0, &cfg)?;
    let inside = check_class_ac(&u0, &pm.v, p.barrier_c).inside;
    let barriers = if inside { Some(verify_barriers(&traj, &pm.v, p.barrier_c)?) } else { None };
    if let Some(b) = &barriers {
        out.summary.check(b.ok, || format!("trajectory leaves A_C at {:?}", b.first_breach));
    }
    let fine = check_fine_bounds(&traj);
    out.summary.check(fine.fine, || format!("fine-solution bounds fail: C1 = {}, C2 = {}", fine.c1, fine.c2));
    let conv = convergence_to_yamabe(&traj, &w)?;

    let r = model.r_values();
    let rows: Vec<[f64; 3]> =
        traj.states.iter().flat_map(|s| r.iter().zip(s.u.iter()).map(move |(&x, &u)| [s.t, x, u])).collect();
    out.csv("flow.csv", &["t", "r", "u"], rows.iter().map(|x| x.as_slice()))?;
    out.json(
        "flow.json",
        &json!({
            "mode": model.mode().as_str(),
            "n": model.n(),
            "C1": fine.c1,
            "C2": fine.c2,
            "initial_in_AC": inside,
            "in_AC": barriers.as_ref().is_some_and(|b| b.ok),
            "d_series": conv.d_series,
            "d_times": conv.times,
            "eventually_decreasing": conv.eventually_decreasing,
            "newton_stats": traj.stats,
            "passed": out.summary.passed(),
        }),
    )
}

fn run_stability(
    model: &ManifoldModel,
    p: &StabilityParams,
    opts: &RunOptions,
    out: &mut Artifacts,
) -> Result<(), RunError> {
    let u0 = GridFunction::constant(model.grid().len(), 1.0);
    let v0 = model.grid().sample(|r| 1.0 + p.amplitude * (-r * r).exp());
    let mut cfg = FlowConfig::new(p.dt, p.horizon);
    cfg.fault = p.fault_leak.map(Fault::Leak);
    let cutoff = build_cutoff(model, p.cutoff_radius, p.k)?;
    let count = (p.horizon / p.sample_step + 1e-9).floor() as usize + 1;
    // sample times snapped to the step grid
    let steps_per_sample = (p.sample_step / p.dt).round().max(1.0) as usize;
    let samples: Vec<f64> =
        (0..count).map(|i| (i * steps_per_sample) as f64 * p.dt).filter(|&t| t <= p.horizon * (1.0 + 1e-12)).collect();
    let rep = verify_stability_inequality(model, &u0, &v0, &cfg, &cutoff, &samples, opts.threads > 1)?;
    out.summary.check(rep.passed, || format!("stability inequality fails, worst slack {:e}", rep.worst_slack));

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut kato_violations = 0;
    let mut kato_worst = f64::INFINITY;
    for _ in 0..p.kato_trials {
        let a = GridFunction((0..model.grid().len()).map(|_| rng.gen_range(0.05..4.0)).collect());
        let b = GridFunction((0..model.grid().len()).map(|_| rng.gen_range(0.05..4.0)).collect());
        let k = kato_check(model, &a, &b)?;
        kato_violations += k.violations.len();
        kato_worst = kato_worst.min(k.worst_gap);
    }
    out.summary.check(kato_violations == 0, || format!("{kato_violations} Kato violations"));

    let rows = columns(&[&rep.times, &rep.f_values, &rep.f_pow, &rep.bound_rhs]);
    out.csv("stability.csv", &["t", "F", "F_pow", "bound_rhs"], rows.iter().map(Vec::as_slice))?;
    out.json(
        "stability.json",
        &json!({
            "mode": model.mode().as_str(),
            "n": model.n(),
            "cutoff_radius": p.cutoff_radius,
            "k": cutoff.k,
            "C_psi": rep.c_psi,
            "pairs_checked": rep.pairs_checked,
            "worst_slack": rep.worst_slack,
            "fault": p.fault_leak,
            "kato_trials": p.kato_trials,
            "kato_violations": kato_violations,
            "kato_worst_gap": if p.kato_trials > 0 { json!(kato_worst) } else { Value::Null },
            "passed": out.summary.passed(),
        }),
    )
}

fn run_decay(model: &ManifoldModel, p: &DecayParams, out: &mut Artifacts) -> Result<(), RunError> {
    let u0 = GridFunction::constant(model.grid().len(), 1.0);
    let cfg = FlowConfig::new(p.dt, p.t_probe);
    let rep = uniqueness_decay_experiment(model, &u0, &p.radii, p.amplitude, p.t_probe, &cfg)?;
    out.summary
        .check(rep.passed, || format!("fitted slope {} exceeds {}", rep.fitted_slope, rep.exponent_expected + 0.3));
    let rows = columns(&[&rep.radii, &rep.w_probe]);
    out.csv("decay.csv", &["R", "w_probe"], rows.iter().map(Vec::as_slice))?;
    out.json(
        "decay.json",
        &json!({
            "mode": model.mode().as_str(),
            "n": model.n(),
            "t_probe": p.t_probe,
            "fitted_slope": rep.fitted_slope,
            "exponent_expected": rep.exponent_expected,
            "numerical_zero": rep.numerical_zero,
            "data_agree_only_on_ball": true,
            "passed": rep.passed,
        }),
    )
}

fn run_riccati(
    model: &ManifoldModel,
    spec: &ModelSpec,
    p: &RiccatiParams,
    out: &mut Artifacts,
) -> Result<(), RunError> {
    let fixture = if spec.potential == Potential::CylinderBump {
        Some(build_cylinder_bump_fixture(spec.h, spec.cells)?)
    } else {
        None
    };
    let case = if p.case2 { RiccatiCase::Case2 } else { RiccatiCase::Case1 };
    let sign = if p.case2 { -1.0 } else { 1.0 };
    let a0 = match (p.a0, &fixture) {
        (Some(a), _) => a,
        (None, Some(fx)) => sign * fx.a_star[POLE_WINDOW],
        (None, None) => unreachable!("config requires a0 without the fixture"),
    };
    let v0 = p.v0.or(fixture.as_ref().map(|fx| fx.v0)).unwrap_or(1.0);
    let sol = integrate_riccati(model, a0, case)?;
    out.summary.check(!sol.blew_up, || format!("Riccati solution blows up after r = {}", model.grid().r(sol.end)));
    out.summary.check(sol.residual <= RICCATI_RESIDUAL_TOL, || format!("Riccati residual {:e}", sol.residual));
    out.summary.check(sol.asymptote_ok, || "no positive asymptote over the outer window".into());

    let nodes = model.grid().len();
    let cells = model.grid().n_cells();
    let mut r_of_gv = vec![f64::NAN; nodes];
    let (big_v, v, factorization, curvature_sup) = if sol.asymptote_ok {
        let factor = yamabe_factor_from_riccati(model, &sol, v0)?;
        let fr = factorization_residual(model, &factor.big_v);
        let rows = POLE_WINDOW..cells - POLE_WINDOW + 1;
        let rg = scalar_curvature_on(model, &factor.v, rows.clone())?;
        let sup = sup_abs(&rg);
        r_of_gv[rows].copy_from_slice(&rg);
        (factor.big_v.to_vec(), factor.v.to_vec(), fr, sup)
    } else {
        (vec![f64::NAN; nodes], vec![f64::NAN; nodes], f64::NAN, f64::NAN)
    };
    if sol.asymptote_ok {
        out.summary.check(factorization <= 10.0 * RICCATI_RESIDUAL_TOL, || {
            format!("factorization residual {factorization:e}")
        });
        out.summary.check(curvature_sup <= RICCATI_CURVATURE_TOL, || format!("sup |R(g_v)| = {curvature_sup:e}"));
    }
    let data = potential_q(model);
    let r = model.r_values();
    let rows = columns(&[&r, &data.q, &data.p, &sol.a, &big_v, &v, &r_of_gv]);
    out.csv("riccati.csv", &["r", "Q", "P", "a", "V", "v", "R_of_gv"], rows.iter().map(Vec::as_slice))?;
    out.json(
        "riccati.json",
        &json!({
            "mode": model.mode().as_str(),
            "n": model.n(),
            "case": case.as_str(),
            "a0": a0,
            "V0": v0,
            "fixture": fixture.is_some(),
            "asymptote": sol.asymptote,
            "asymptote_ok": sol.asymptote_ok,
            "blew_up": sol.blew_up,
            "residuals": {
                "riccati": sol.residual,
                "factorization": factorization,
                "curvature_sup": curvature_sup,
            },
            "passed": out.summary.passed(),
        }),
    )
}

/// Runs each listed scenario into `<out>/<name>` and tabulates exit codes.
fn run_report(p: &ReportParams, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let mut summary = RunSummary::default();
    let mut lines = String::from("scenario,command,exit_code\n");
    let mut entries = Vec::new();
    let mut worst = EXIT_PASS;
    for path in &p.scenarios {
        let scenario = crate::config::parse_config(path, None)?;
        if scenario.command == Command::Report {
            return Err(RunError::Config(crate::config::ConfigError {
                line: None,
                message: format!("{} is a report; reports do not nest", path.display()),
            }));
        }
        let sub = RunOptions { out: opts.out.join(&scenario.name), ..opts.clone() };
        let result = run_scenario(&scenario, &sub);
        let code = exit_code(&result);
        worst = match (worst, code) {
            (EXIT_ERROR, _) | (_, EXIT_ERROR) => EXIT_ERROR,
            (EXIT_ASSERTION, _) | (_, EXIT_ASSERTION) => EXIT_ASSERTION,
            _ => EXIT_PASS,
        };
        writeln!(lines, "{},{},{}", scenario.name, scenario.command, code).expect("writing to a String");
        let detail = match &result {
            Ok(s) => json!(s.failures),
            Err(e) => json!([e.to_string()]),
        };
        if code != EXIT_PASS {
            summary.failures.push(format!("{}: exit {code}", scenario.name));
        }
        entries.push(json!({ "scenario": scenario.name, "command": scenario.command.as_str(), "exit_code": code, "failures": detail }));
    }
    fs::write(opts.out.join("report.csv"), lines)?;
    summary.files.push("report.csv".into());
    fs::write(
        opts.out.join("report.json"),
        serde_json::to_string_pretty(&json!({ "scenarios": entries, "exit_code": worst }))?,
    )?;
    summary.files.push("report.json".into());
    if worst == EXIT_ERROR {
        return Err(RunError::Scenario(summary.failures.join("; ")));
    }
    Ok(summary)
}
