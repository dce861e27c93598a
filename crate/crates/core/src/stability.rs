//! Local L¹ stability of the flow written as a porous-medium equation
//! `∂t U = c_n Δ U^m - R0 U^m`, together with the discrete Kato inequality,
//! the weak subharmonicity of `|U^m - V^m|`, the mean-value bound and the
//! decay experiment behind uniqueness.
//!
//! Throughout this module `U = u^{(n+2)/(n-2)}` is the porous-medium
//! variable; flow trajectories store the conformal factor `u = U^m`.

use crate::error::{Error, Result};
use crate::flow::{run_flow, FlowConfig, FlowForm, FlowTrajectory};
use crate::geometry::{has_nonnegative_ricci, volume_of_ball, ManifoldModel};
use crate::grid::GridFunction;
use crate::laplacian::RadialLaplacian;
use crate::stencil::loglog_slope;
use serde::Serialize;

/// Slack allowed in the stability inequality.
pub const STABILITY_SLACK: f64 = 1e-9;
/// Slack allowed in the pointwise Kato inequality.
pub const KATO_SLACK: f64 = 1e-10;
/// Values below this count as numerically zero in the decay experiment.
pub const DECAY_ZERO: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PmeParams {
    pub n: u32,
    pub m: f64,
    pub alpha: f64,
    pub c_n: f64,
}

impl PmeParams {
    pub fn new(n: u32) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidConfig(format!("n must be >= 3 (got {n})")));
        }
        let nf = n as f64;
        let p =
            PmeParams { n, m: (nf - 2.0) / (nf + 2.0), alpha: (nf + 2.0) / 4.0, c_n: 4.0 * (nf - 1.0) / (nf - 2.0) };
        assert!(((1.0 - p.m) * p.alpha - 1.0).abs() < 1e-15);
        Ok(p)
    }

    /// `2 m α`, the decay exponent in `w(t, p) <= C(t) R^{-2mα}`.
    pub fn decay_exponent(&self) -> f64 {
        2.0 * self.m * self.alpha
    }

    /// `(n - 2α)(1 - m)`, the growth of `C(ψ)` with the cutoff radius on flat space.
    pub fn cutoff_exponent(&self) -> f64 {
        (self.n as f64 - 2.0 * self.alpha) * (1.0 - self.m)
    }

    /// `(1 - n/2)(1 - m)`, the radius exponent of the local bound.
    pub fn local_bound_exponent(&self) -> f64 {
        (1.0 - self.n as f64 / 2.0) * (1.0 - self.m)
    }

    pub fn default_cutoff_power(&self) -> u32 {
        2 * (2.0 * self.alpha).ceil() as u32
    }
}

/// `ψ = ψ0^k` with `ψ0 = 1` on `[0, R/2]`, `0` on `[R, ∞)` and a quintic
/// `C²` transition in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Cutoff {
    pub radius: f64,
    pub k: u32,
    pub psi0: GridFunction,
    pub psi: GridFunction,
    /// `Δψ` from the radial stencil; zero at the outer node.
    pub lap_psi: GridFunction,
}

/// Quintic smoothstep complement: `1 - (10s³ - 15s⁴ + 6s⁵)`, `s` clamped to `[0, 1]`.
pub fn quintic_cutoff(r: f64, radius: f64) -> f64 {
    let s = (2.0 * r / radius - 1.0).clamp(0.0, 1.0);
    1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

pub fn build_cutoff(model: &ManifoldModel, radius: f64, k: Option<u32>) -> Result<Cutoff> {
    let params = PmeParams::new(model.n())?;
    let k = k.unwrap_or_else(|| params.default_cutoff_power());
    if k as f64 <= 2.0 * params.alpha {
        return Err(Error::CutoffExponent { k, bound: 2.0 * params.alpha });
    }
    let grid = model.grid();
    if !(radius > 0.0 && radius <= grid.extent() * (1.0 + 1e-12)) {
        return Err(Error::RadiusOutOfRange { radius, extent: grid.extent() });
    }
    let psi0 = grid.sample(|r| quintic_cutoff(r, radius));
    let psi = psi0.map(|x| x.powi(k as i32));
    let lap = RadialLaplacian::new(model);
    let mut lap_psi = GridFunction(lap.apply(&psi, grid.n_cells()));
    lap_psi.0.push(0.0);
    Ok(Cutoff { radius, k, psi0, psi, lap_psi })
}

/// `C(ψ) = [∫ |Δψ|^α ψ^{-αm} dμ]^{1-m}`; the integrand is zero where `ψ = 0`.
pub fn stability_constant(model: &ManifoldModel, cutoff: &Cutoff) -> Result<f64> {
    let p = PmeParams::new(model.n())?;
    let mut g = Vec::with_capacity(cutoff.psi.len());
    for (i, (&psi, &lap)) in cutoff.psi.iter().zip(cutoff.lap_psi.iter()).enumerate() {
        let v = if psi > 0.0 { lap.abs().powf(p.alpha) * psi.powf(-p.alpha * p.m) } else { 0.0 };
        if !v.is_finite() {
            return Err(Error::NonFinite { node: i, context: "cutoff integrand (k too small?)".into() });
        }
        g.push(v);
    }
    let integral = model.integrate(&g, model.grid().n_cells());
    Ok(integral.powf(1.0 - p.m))
}

/// `∫ |u - v| ψ dμ` over the whole grid.
pub fn l1_functional(u: &[f64], v: &[f64], cutoff: &Cutoff, model: &ManifoldModel) -> f64 {
    let g: Vec<f64> = u.iter().zip(v).zip(cutoff.psi.iter()).map(|((a, b), p)| (a - b).abs() * p).collect();
    model.integrate(&g, model.grid().n_cells())
}

fn porous_variable(u: &[f64], n: u32) -> Vec<f64> {
    let p = (n as f64 + 2.0) / (n as f64 - 2.0);
    u.iter().map(|x| x.powf(p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub times: Vec<f64>,
    pub f_values: Vec<f64>,
    /// `F^{1-m}`.
    pub f_pow: Vec<f64>,
    /// `F(0)^{1-m} + (1-m) c_n C(ψ) t`.
    pub bound_rhs: Vec<f64>,
    pub c_psi: f64,
    pub pairs_checked: usize,
    /// `min over s < t of rhs - lhs`.
    pub worst_slack: f64,
    pub passed: bool,
}

/// Runs both flows (porous-medium stepper), samples `F` at `sample_times`
/// and checks `F(t)^{1-m} <= F(s)^{1-m} + (1-m) c_n C(ψ) (t - s)` for every
/// sampled `s < t`. A fault configured in `config` is applied to the first
/// trajectory only.
pub fn verify_stability_inequality(
    model: &ManifoldModel,
    u0: &GridFunction,
    v0: &GridFunction,
    config: &FlowConfig,
    cutoff: &Cutoff,
    sample_times: &[f64],
    parallel: bool,
) -> Result<StabilityReport> {
    let p = PmeParams::new(model.n())?;
    let cfg_u = FlowConfig { form: FlowForm::PorousMedium, stride: 1, ..config.clone() };
    let cfg_v = FlowConfig { fault: None, ..cfg_u.clone() };
    let (tu, tv) = run_pair(model, (u0, &cfg_u), (v0, &cfg_v), parallel)?;
    let c_psi = stability_constant(model, cutoff)?;
    let rate = (1.0 - p.m) * p.c_n * c_psi;

    let mut times = Vec::with_capacity(sample_times.len());
    let mut f_values = Vec::with_capacity(sample_times.len());
    for &s in sample_times {
        let (a, b) = (state_at(&tu, s)?, state_at(&tv, s)?);
        let ua = porous_variable(&a.u, model.n());
        let ub = porous_variable(&b.u, model.n());
        times.push(a.t);
        f_values.push(l1_functional(&ua, &ub, cutoff, model));
    }
    let f_pow: Vec<f64> = f_values.iter().map(|f| f.powf(1.0 - p.m)).collect();
    let bound_rhs = times.iter().map(|t| f_pow[0] + rate * (t - times[0])).collect();
    let mut pairs_checked = 0;
    let mut worst_slack = f64::INFINITY;
    for i in 0..times.len() {
        for j in i + 1..times.len() {
            pairs_checked += 1;
            worst_slack = worst_slack.min(f_pow[i] + rate * (times[j] - times[i]) - f_pow[j]);
        }
    }
    Ok(StabilityReport {
        times,
        f_values,
        f_pow,
        bound_rhs,
        c_psi,
        pairs_checked,
        passed: worst_slack >= -STABILITY_SLACK,
        worst_slack,
    })
}

fn run_pair<'a>(
    model: &'a ManifoldModel,
    a: (&GridFunction, &FlowConfig),
    b: (&GridFunction, &FlowConfig),
    parallel: bool,
) -> Result<(FlowTrajectory<'a>, FlowTrajectory<'a>)> {
    if parallel {
        std::thread::scope(|s| {
            let ha = s.spawn(|| run_flow(model, a.0, a.1));
            let tb = run_flow(model, b.0, b.1);
            let ta = ha.join().expect("flow thread panicked");
            Ok((ta?, tb?))
        })
    } else {
        Ok((run_flow(model, a.0, a.1)?, run_flow(model, b.0, b.1)?))
    }
}

fn state_at<'t>(traj: &'t FlowTrajectory, t: f64) -> Result<&'t crate::flow::FlowState> {
    let tol = 1e-9 * traj.config.dt.max(1.0);
    traj.states
        .iter()
        .find(|s| (s.t - t).abs() <= tol)
        .ok_or_else(|| Error::Precondition(format!("sample time {t} is not a step of the trajectory")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KatoReport {
    pub nodes_checked: usize,
    pub violations: Vec<usize>,
    /// `min over rows of Δ|w| - sign(a-b) Δw`, `w = a^m - b^m`.
    pub worst_gap: f64,
}

/// Pointwise discrete Kato inequality `Δ|a^m - b^m| >= sign(a-b) Δ(a^m - b^m)`
/// on rows `0..N`.
pub fn kato_check(model: &ManifoldModel, a: &GridFunction, b: &GridFunction) -> Result<KatoReport> {
    a.check_len(model.grid())?;
    b.check_len(model.grid())?;
    let m = PmeParams::new(model.n())?.m;
    let w: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x.powf(m) - y.powf(m)).collect();
    let abs_w: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    let lap = RadialLaplacian::new(model);
    let rows = model.grid().n_cells();
    let mut violations = Vec::new();
    let mut worst_gap = f64::INFINITY;
    for i in 0..rows {
        let sign = match a[i].partial_cmp(&b[i]) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => -1.0,
            _ => 0.0,
        };
        let gap = lap.apply_at(&abs_w, i) - sign * lap.apply_at(&w, i);
        worst_gap = worst_gap.min(gap);
        if gap < -KATO_SLACK {
            violations.push(i);
        }
    }
    Ok(KatoReport { nodes_checked: rows, violations, worst_gap })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubharmonicReport {
    pub pairs_checked: usize,
    /// `min over tests and pairs of rhs + tol - lhs`.
    pub worst_margin: f64,
    pub passed: bool,
}

/// Time-integrated weak form of `∂t |U - V| <= c_n Δ|U^m - V^m| - R0 |U^m - V^m|`
/// against each non-negative test function. Both trajectories must keep
/// every step; the time integral uses the implicit-Euler rule of the
/// scheme, and pairs `s < t` are taken every `stride` steps.
pub fn subharmonic_difference_check(
    model: &ManifoldModel,
    traj_u: &FlowTrajectory,
    traj_v: &FlowTrajectory,
    tests: &[GridFunction],
    stride: usize,
) -> Result<SubharmonicReport> {
    if traj_u.config.stride != 1 || traj_v.config.stride != 1 {
        return Err(Error::Precondition("weak-form check needs every step (stride 1)".into()));
    }
    if traj_u.states.len() != traj_v.states.len()
        || traj_u.states.iter().zip(&traj_v.states).any(|(a, b)| (a.t - b.t).abs() > 1e-12)
    {
        return Err(Error::Precondition("trajectories must share their times".into()));
    }
    if stride == 0 {
        return Err(Error::Precondition("stride must be positive".into()));
    }
    let n = model.n();
    let c_n = model.conformal_constant();
    let last = model.grid().n_cells();
    let mu = model.volume_weights(last);
    let lap = RadialLaplacian::new(model);
    let r0 = model.r0();
    let k = traj_u.states.len();
    let diffs: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let a = porous_variable(&traj_u.states[j].u, n);
            let b = porous_variable(&traj_v.states[j].u, n);
            a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect()
        })
        .collect();
    let powers: Vec<Vec<f64>> = (0..k)
        .map(|j| traj_u.states[j].u.iter().zip(traj_v.states[j].u.iter()).map(|(x, y)| (x - y).abs()).collect())
        .collect();
    let mut pairs_checked = 0;
    let mut worst_margin = f64::INFINITY;
    for phi in tests {
        phi.check_len(model.grid())?;
        if phi.iter().any(|&x| x < 0.0) {
            return Err(Error::Precondition("test functions must be non-negative".into()));
        }
        let t_adj = lap.weighted_adjoint(phi, &mu, last);
        let weight: Vec<f64> = (0..=last).map(|j| c_n * t_adj[j] - mu[j] * r0[j] * phi[j]).collect();
        let mass: Vec<f64> = diffs.iter().map(|d| (0..=last).map(|j| mu[j] * phi[j] * d[j]).sum()).collect();
        let flux: Vec<f64> = powers.iter().map(|y| (0..=last).map(|j| weight[j] * y[j]).sum()).collect();
        let scale = mass.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let tol = 1e-6 * scale;
        // cumulative implicit-rule integral of the flux
        let mut integral = vec![0.0; k];
        for j in 1..k {
            let dt = traj_u.states[j].t - traj_u.states[j - 1].t;
            integral[j] = integral[j - 1] + dt * flux[j];
        }
        let samples: Vec<usize> = (0..k).step_by(stride).chain(std::iter::once(k - 1)).collect();
        for (x, &s) in samples.iter().enumerate() {
            for &t in &samples[x + 1..] {
                if t == s {
                    continue;
                }
                pairs_checked += 1;
                let margin = integral[t] - integral[s] + tol - (mass[t] - mass[s]);
                worst_margin = worst_margin.min(margin);
            }
        }
    }
    Ok(SubharmonicReport { pairs_checked, passed: worst_margin >= 0.0, worst_margin })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanValueReport {
    pub applicable: bool,
    pub radii: Vec<f64>,
    /// `h(p) vol(B_R) / ∫_{B_R} h dμ`.
    pub ratios: Vec<f64>,
    /// Empirical mean-value constant, `sup` of the ratios.
    pub constant: f64,
    /// Last ratio at most twice the median.
    pub bounded: bool,
}

/// Mean-value bound for a non-negative subharmonic function.
pub fn mean_value_check(model: &ManifoldModel, hfun: &GridFunction, radii: &[f64]) -> Result<MeanValueReport> {
    hfun.check_len(model.grid())?;
    let lap = RadialLaplacian::new(model);
    let subharmonic = lap.apply(hfun, model.grid().n_cells()).iter().all(|&x| x >= -1e-10);
    let nonneg = hfun.iter().all(|&x| x >= 0.0);
    let applicable = has_nonnegative_ricci(model) && subharmonic && nonneg;
    if !applicable || radii.is_empty() {
        return Ok(MeanValueReport {
            applicable,
            radii: radii.to_vec(),
            ratios: vec![],
            constant: f64::NAN,
            bounded: false,
        });
    }
    let mut ratios = Vec::with_capacity(radii.len());
    for &r in radii {
        let last = model.grid().index_of(r)?;
        ratios.push(hfun[0] * volume_of_ball(model, r)? / model.integrate(hfun, last));
    }
    let constant = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bounded = *ratios.last().unwrap() <= 2.0 * median(&ratios);
    Ok(MeanValueReport { applicable, radii: radii.to_vec(), ratios, constant, bounded })
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// `C²` bump `(1 - (2s-1)²)³` on `s = (r - start)/width ∈ [0, 1]`.
pub fn shell_bump(r: f64, start: f64, width: f64) -> f64 {
    let s = (r - start) / width;
    if !(0.0..=1.0).contains(&s) {
        return 0.0;
    }
    let q = 1.0 - (2.0 * s - 1.0).powi(2);
    q * q * q
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub radii: Vec<f64>,
    /// `w(t_probe, p) = ∫_0^{t_probe} |u^m - v^m|(s, p) ds`.
    pub w_probe: Vec<f64>,
    pub fitted_slope: f64,
    /// `-2mα`.
    pub exponent_expected: f64,
    pub numerical_zero: bool,
    pub passed: bool,
}

/// For each `R`, flows `u0` and `u0 + amplitude·bump` (bump supported in
/// `[R, R + 2]`) on the whole grid and records `w(t_probe, p)`. The
/// fitted log-log slope must not exceed `-2mα + 0.3`.
pub fn uniqueness_decay_experiment(
    model: &ManifoldModel,
    u0: &GridFunction,
    radii: &[f64],
    amplitude: f64,
    t_probe: f64,
    config: &FlowConfig,
) -> Result<DecayReport> {
    const WIDTH: f64 = 2.0;
    let p = PmeParams::new(model.n())?;
    if radii.len() < 2 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("need at least two increasing radii".into()));
    }
    let extent = model.grid().extent();
    if radii[radii.len() - 1] + WIDTH >= extent {
        return Err(Error::RadiusOutOfRange { radius: radii[radii.len() - 1] + WIDTH, extent });
    }
    let cfg = FlowConfig { horizon: t_probe, stride: 1, ..config.clone() };
    let base = run_flow(model, u0, &cfg)?;
    let mut w_probe = Vec::with_capacity(radii.len());
    for &r in radii {
        let v0 = GridFunction(
            model.grid().nodes().zip(u0.iter()).map(|(x, u)| u + amplitude * shell_bump(x, r, WIDTH)).collect(),
        );
        let other = run_flow(model, &v0, &cfg)?;
        // in the porous-medium variable U^m is the conformal factor itself
        let g: Vec<f64> = base.states.iter().zip(&other.states).map(|(a, b)| (a.u[0] - b.u[0]).abs()).collect();
        let w: f64 = (1..g.len()).map(|j| 0.5 * (base.states[j].t - base.states[j - 1].t) * (g[j] + g[j - 1])).sum();
        w_probe.push(w);
    }
    let numerical_zero = w_probe.iter().all(|&w| w < DECAY_ZERO);
    let floored: Vec<f64> = w_probe.iter().map(|w| w.max(f64::MIN_POSITIVE)).collect();
    let fitted_slope = loglog_slope(radii, &floored);
    let exponent_expected = -p.decay_exponent();
    let passed = numerical_zero || fitted_slope <= exponent_expected + 0.3;
    Ok(DecayReport { radii: radii.to_vec(), w_probe, fitted_slope, exponent_expected, numerical_zero, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalBoundReport {
    pub applicable: bool,
    pub radii: Vec<f64>,
    /// `max_t (F(t)^{1-m} - F(0)^{1-m}) / (t R^{(1-n/2)(1-m)})` per radius;
    /// rises within [`STABILITY_SLACK`] count as zero.
    pub c_emp: Vec<f64>,
    pub exponent: f64,
    pub bounded: bool,
}

/// Empirical constant of the non-negative-Ricci local bound
/// `F(t)^{1-m} <= F(0)^{1-m} + C t R^{(1-n/2)(1-m)}` across a radius sweep.
pub fn nonneg_ricci_local_bound(
    model: &ManifoldModel,
    traj_u: &FlowTrajectory,
    traj_v: &FlowTrajectory,
    radii: &[f64],
    k: Option<u32>,
) -> Result<LocalBoundReport> {
    let p = PmeParams::new(model.n())?;
    let exponent = p.local_bound_exponent();
    let applicable = has_nonnegative_ricci(model);
    if !applicable {
        return Ok(LocalBoundReport { applicable, radii: radii.to_vec(), c_emp: vec![], exponent, bounded: false });
    }
    if traj_u.states.len() != traj_v.states.len() {
        return Err(Error::Precondition("trajectories must share their times".into()));
    }
    let n = model.n();
    let pu: Vec<Vec<f64>> = traj_u.states.iter().map(|s| porous_variable(&s.u, n)).collect();
    let pv: Vec<Vec<f64>> = traj_v.states.iter().map(|s| porous_variable(&s.u, n)).collect();
    let mut c_emp = Vec::with_capacity(radii.len());
    for &r in radii {
        let cutoff = build_cutoff(model, r, k)?;
        let f_pow: Vec<f64> =
            pu.iter().zip(&pv).map(|(a, b)| l1_functional(a, b, &cutoff, model).powf(1.0 - p.m)).collect();
        let scale = r.powf(exponent);
        let c = traj_u
            .states
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, s)| {
                let rise = f_pow[j] - f_pow[0];
                if rise <= STABILITY_SLACK {
                    0.0
                } else {
                    rise / (s.t * scale)
                }
            })
            .fold(0.0f64, f64::max);
        c_emp.push(c);
    }
    let bounded = c_emp.last().map_or(true, |&c| c <= 2.0 * median(&c_emp));
    Ok(LocalBoundReport { applicable, radii: radii.to_vec(), c_emp, exponent, bounded })
}
