//! Implicit Yamabe flow `∂t U = c_n Δ U^m - R0 U^m`, `U = u^{(n+2)/(n-2)}`,
//! `m = (n-2)/(n+2)`, on a truncated ball with the outer node frozen.
//!
//! Each step is one implicit-Euler step solved by damped Newton on a
//! tridiagonal Jacobian. Two independently coded steppers are provided:
//! [`FlowForm::Conformal`] iterates on `u`, [`FlowForm::PorousMedium`]
//! iterates on `U`. They discretize the same equation.

use crate::elliptic::{assemble_on, ConformalOperator};
use crate::error::{Error, Result};
use crate::geometry::ManifoldModel;
use crate::grid::GridFunction;
use serde::Serialize;

/// Share of the grid, counted from the pole, used for convergence tracking.
pub const INNER_WINDOW: f64 = 0.8;
const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowForm {
    Conformal,
    PorousMedium,
}

/// Deliberate corruption of accepted states, used to exercise failure
/// paths in the verifiers. `Leak(rate)` adds `rate * dt` to every interior
/// value after each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Fault {
    Leak(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub horizon: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub positivity_floor: f64,
    /// Barrier constant of the class `A_C`.
    pub barrier_c: f64,
    /// Keep every `stride`-th state (the final state is always kept).
    pub stride: usize,
    pub form: FlowForm,
    pub fault: Option<Fault>,
}

impl FlowConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        FlowConfig {
            dt,
            horizon,
            newton_tol: 1e-12,
            newton_max: 50,
            positivity_floor: 1e-8,
            barrier_c: 1.0,
            stride: 10,
            form: FlowForm::Conformal,
            fault: None,
        }
    }

    pub fn with_form(mut self, form: FlowForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_barrier(mut self, c: f64) -> Self {
        self.barrier_c = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.horizon == 0.0 || self.horizon >= self.dt) || !self.horizon.is_finite() {
            return bad(format!("horizon {} must be 0 or at least dt = {}", self.horizon, self.dt));
        }
        if !(self.newton_tol > 0.0) || self.newton_max == 0 {
            return bad("newton tolerance and iteration cap must be positive".into());
        }
        if !(self.positivity_floor > 0.0) {
            return bad("positivity floor must be positive".into());
        }
        if !(self.barrier_c >= 1.0) {
            return bad(format!("barrier constant C must be >= 1 (got {})", self.barrier_c));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowState {
    pub t: f64,
    #[serde(skip)]
    pub u: GridFunction,
    pub dt_last: f64,
    pub newton_iters: usize,
    pub step_residual: f64,
}

impl FlowState {
    pub fn initial(u0: GridFunction) -> Self {
        FlowState { t: 0.0, u: u0, dt_last: 0.0, newton_iters: 0, step_residual: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NewtonStats {
    pub steps: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
    pub dt_halvings: usize,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory<'a> {
    pub model: &'a ManifoldModel,
    pub config: FlowConfig,
    pub states: Vec<FlowState>,
    pub stats: NewtonStats,
}

impl FlowTrajectory<'_> {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &FlowState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Precomputed operator for repeated steps on one model.
pub struct FlowStepper<'a> {
    model: &'a ManifoldModel,
    op: ConformalOperator,
    config: FlowConfig,
    exponent: f64,
}

impl<'a> FlowStepper<'a> {
    pub fn new(model: &'a ManifoldModel, config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        let op = assemble_on(model, model.grid().n_cells())?;
        let n = model.n() as f64;
        Ok(FlowStepper { model, op, config: config.clone(), exponent: (n + 2.0) / (n - 2.0) })
    }

    /// One implicit step of size `config.dt` (or `dt` when given), halving
    /// the step once if Newton fails.
    pub fn step(&self, state: &FlowState, dt: Option<f64>) -> Result<(FlowState, bool)> {
        let dt = dt.unwrap_or(self.config.dt);
        state.u.check_len(self.model.grid())?;
        self.check_floor(&state.u, state.t)?;
        let (next, halved) = match self.solve(&state.u, dt, state.t) {
            Ok(out) => (out, false),
            Err(Error::NewtonDiverged { .. }) => {
                let (mid, i1, r1) = self.solve(&state.u, 0.5 * dt, state.t)?;
                let (end, i2, r2) = self.solve(&mid, 0.5 * dt, state.t + 0.5 * dt)?;
                ((end, i1 + i2, r1.max(r2)), true)
            }
            Err(e) => return Err(e),
        };
        let (mut u, iters, residual) = next;
        if let Some(Fault::Leak(rate)) = self.config.fault {
            let last = u.len() - 1;
            for x in &mut u[..last] {
                *x += rate * dt;
            }
        }
        let t = state.t + dt;
        self.check_floor(&u, t)?;
        let state = FlowState { t, u: GridFunction(u), dt_last: dt, newton_iters: iters, step_residual: residual };
        Ok((state, halved))
    }

    fn check_floor(&self, u: &[f64], t: f64) -> Result<()> {
        let floor = self.config.positivity_floor;
        match u.iter().position(|&x| !(x >= floor)) {
            Some(node) => Err(Error::PositivityFloor { t, node, value: u[node] }),
            None => Ok(()),
        }
    }

    fn solve(&self, u: &[f64], dt: f64, t: f64) -> Result<(Vec<f64>, usize, f64)> {
        match self.config.form {
            FlowForm::Conformal => self.newton_conformal(u, dt, t),
            FlowForm::PorousMedium => self.newton_porous(u, dt, t),
        }
    }

    /// Unknown `u`: `u^p - u_k^p + dt L u = 0`, Jacobian `diag(p u^{p-1}) + dt L`.
    fn newton_conformal(&self, uk: &[f64], dt: f64, t: f64) -> Result<(Vec<f64>, usize, f64)> {
        let p = self.exponent;
        let big_k: Vec<f64> = uk.iter().map(|x| x.powf(p)).collect();
        let residual = |u: &[f64]| -> Vec<f64> {
            let lu = self.op.apply(u);
            let mut r: Vec<f64> = (0..self.op.last).map(|i| u[i].powf(p) - big_k[i] + dt * lu[i]).collect();
            r.push(0.0);
            r
        };
        let jacobian = |u: &[f64]| {
            let mut j = self.op.matrix.clone();
            for i in 0..self.op.last {
                j.sub[i] *= dt;
                j.sup[i] *= dt;
                j.diag[i] = dt * j.diag[i] + p * u[i].powf(p - 1.0);
            }
            j
        };
        let scale = big_k.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        self.damped_newton(uk.to_vec(), residual, jacobian, scale, t)
    }

    /// Unknown `U`: `U - U_k + dt L(U^m) = 0`, Jacobian `I + dt L diag(m U^{m-1})`.
    fn newton_porous(&self, uk: &[f64], dt: f64, t: f64) -> Result<(Vec<f64>, usize, f64)> {
        let m = 1.0 / self.exponent;
        let big_k: Vec<f64> = uk.iter().map(|x| x.powf(self.exponent)).collect();
        let residual = |big: &[f64]| -> Vec<f64> {
            let um: Vec<f64> = big.iter().map(|x| x.powf(m)).collect();
            let lu = self.op.apply(&um);
            let mut r: Vec<f64> = (0..self.op.last).map(|i| big[i] - big_k[i] + dt * lu[i]).collect();
            r.push(0.0);
            r
        };
        let jacobian = |big: &[f64]| {
            let d: Vec<f64> = big.iter().map(|x| m * x.powf(m - 1.0)).collect();
            let mut j = self.op.matrix.clone();
            for i in 0..self.op.last {
                if i > 0 {
                    j.sub[i] *= dt * d[i - 1];
                }
                j.sup[i] *= dt * d[i + 1];
                j.diag[i] = 1.0 + dt * j.diag[i] * d[i];
            }
            j
        };
        let scale = big_k.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
        let (big, iters, res) = self.damped_newton(big_k.clone(), residual, jacobian, scale, t)?;
        Ok((big.iter().map(|x| x.powf(m)).collect(), iters, res))
    }

    fn damped_newton(
        &self,
        mut x: Vec<f64>,
        residual: impl Fn(&[f64]) -> Vec<f64>,
        jacobian: impl Fn(&[f64]) -> crate::tridiag::Tridiagonal,
        scale: f64,
        t: f64,
    ) -> Result<(Vec<f64>, usize, f64)> {
        let tol = self.config.newton_tol * scale;
        let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut r = residual(&x);
        let mut rn = norm(&r);
        for iter in 0..self.config.newton_max {
            if rn <= tol {
                return Ok((x, iter, rn));
            }
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = jacobian(&x).solve(&neg)?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + lambda * d).collect();
                if trial.iter().all(|&v| v > 0.0 && v.is_finite()) {
                    let tr = residual(&trial);
                    let tn = norm(&tr);
                    if tn < rn || tn <= tol {
                        x = trial;
                        r = tr;
                        rn = tn;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(Error::NewtonDiverged { t, residual: rn });
            }
        }
        if rn <= tol {
            Ok((x, self.config.newton_max, rn))
        } else {
            Err(Error::NewtonDiverged { t, residual: rn })
        }
    }
}

/// A single implicit step; assembles the operator on every call.
pub fn step_flow(state: &FlowState, model: &ManifoldModel, config: &FlowConfig) -> Result<FlowState> {
    FlowStepper::new(model, config)?.step(state, None).map(|(s, _)| s)
}

/// Runs the flow from `u0` to `config.horizon`, keeping every
/// `config.stride`-th state together with the initial and final ones.
pub fn run_flow<'a>(model: &'a ManifoldModel, u0: &GridFunction, config: &FlowConfig) -> Result<FlowTrajectory<'a>> {
    config.validate()?;
    u0.check_len(model.grid())?;
    if let Some(i) = u0.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NonPositive { node: i, value: u0[i], context: "initial data".into() });
    }
    let mut traj = FlowTrajectory {
        model,
        config: config.clone(),
        states: vec![FlowState::initial(u0.clone())],
        stats: NewtonStats::default(),
    };
    if config.horizon == 0.0 {
        return Ok(traj);
    }
    let stepper = FlowStepper::new(model, config)?;
    let ratio = config.horizon / config.dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 { ratio.round() } else { ratio.ceil() } as usize;
    let mut state = traj.states[0].clone();
    for k in 1..=steps {
        let target = if k == steps { config.horizon } else { k as f64 * config.dt };
        let (mut next, halved) = stepper.step(&state, Some(target - state.t))?;
        next.t = target;
        let stats = &mut traj.stats;
        stats.steps += 1;
        stats.total_iterations += next.newton_iters;
        stats.max_iterations = stats.max_iterations.max(next.newton_iters);
        stats.max_residual = stats.max_residual.max(next.step_residual);
        stats.dt_halvings += halved as usize;
        if k % config.stride == 0 || k == steps {
            traj.states.push(next.clone());
        }
        state = next;
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassAcCheck {
    pub inside: bool,
    /// `min (C v - |u - 1|)`.
    pub margin: f64,
}

/// Membership in `A_C = { |u - 1| <= C v }`.
pub fn check_class_ac(u: &[f64], v_barrier: &[f64], c: f64) -> ClassAcCheck {
    let margin = u.iter().zip(v_barrier).map(|(u, v)| c * v - (u - 1.0).abs()).fold(f64::INFINITY, f64::min);
    ClassAcCheck { inside: margin >= -1e-10, margin }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierReport {
    pub ok: bool,
    pub times: Vec<f64>,
    pub margins: Vec<f64>,
    /// `(t, node)` of the first sample leaving the class.
    pub first_breach: Option<(f64, usize)>,
}

/// Checks that every sampled state stays in `A_C` up to `1e-8`.
pub fn verify_barriers(traj: &FlowTrajectory, v_barrier: &GridFunction, c: f64) -> Result<BarrierReport> {
    const SLACK: f64 = 1e-8;
    v_barrier.check_len(traj.model.grid())?;
    if !check_class_ac(&traj.states[0].u, v_barrier, c).inside {
        return Err(Error::Precondition("initial data outside the class A_C".into()));
    }
    let mut report = BarrierReport { ok: true, times: vec![], margins: vec![], first_breach: None };
    for s in &traj.states {
        let check = check_class_ac(&s.u, v_barrier, c);
        report.times.push(s.t);
        report.margins.push(check.margin);
        if check.margin < -SLACK && report.first_breach.is_none() {
            let node = (0..s.u.len()).find(|&i| c * v_barrier[i] - (s.u[i] - 1.0).abs() < -SLACK).unwrap_or(0);
            report.first_breach = Some((s.t, node));
            report.ok = false;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FineBounds {
    /// `inf u^{4/(n-2)}` over the trajectory.
    pub c1: f64,
    /// `sup u^{4/(n-2)}` over the trajectory.
    pub c2: f64,
    pub fine: bool,
}

pub fn check_fine_bounds(traj: &FlowTrajectory) -> FineBounds {
    let q = 4.0 / (traj.model.n() as f64 - 2.0);
    let (lo, hi) = traj
        .states
        .iter()
        .flat_map(|s| s.u.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (c1, c2) = (lo.powf(q), hi.powf(q));
    FineBounds { c1, c2, fine: c1 > 0.0 && c2.is_finite() && c1 <= c2 }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    /// `sup |u(t) - w*|` over the inner window.
    pub d_series: Vec<f64>,
    /// The second half of the series is non-increasing.
    pub eventually_decreasing: bool,
    pub terminal: f64,
}

pub fn convergence_to_yamabe(traj: &FlowTrajectory, w_star: &GridFunction) -> Result<ConvergenceReport> {
    w_star.check_len(traj.model.grid())?;
    let window = (traj.model.grid().n_cells() as f64 * INNER_WINDOW).floor() as usize;
    let d_series: Vec<f64> =
        traj.states.iter().map(|s| (0..=window).fold(0.0f64, |m, i| m.max((s.u[i] - w_star[i]).abs()))).collect();
    let tail = &d_series[d_series.len() / 2..];
    let eventually_decreasing = tail.windows(2).all(|w| w[1] <= w[0] + 1e-14);
    Ok(ConvergenceReport {
        times: traj.times(),
        terminal: *d_series.last().expect("nonempty trajectory"),
        eventually_decreasing,
        d_series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_profile, Profile, ProfileSpec};

    fn gaussian(h: f64, cells: usize) -> ManifoldModel {
        let r0: Vec<f64> = (0..=cells).map(|i| (-(i as f64 * h).powi(2)).exp()).collect();
        build_profile(&ProfileSpec::new(Profile::Euclidean, 3, h, cells).with_potential(r0)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::new(0.0, 1.0).validate().is_err());
        assert!(FlowConfig::new(0.1, 0.05).validate().is_err());
        assert!(FlowConfig::new(0.1, 0.0).validate().is_ok());
        assert!(FlowConfig::new(0.1, 1.0).with_barrier(0.5).validate().is_err());
        assert!(FlowConfig::new(0.1, 1.0).with_stride(0).validate().is_err());
    }

    #[test]
    fn constants_are_steady_without_curvature() {
        let e = build_profile(&ProfileSpec::new(Profile::Euclidean, 3, 0.05, 100)).unwrap();
        for form in [FlowForm::Conformal, FlowForm::PorousMedium] {
            let cfg = FlowConfig::new(0.05, 1.0).with_form(form);
            let traj = run_flow(&e, &GridFunction::constant(101, 1.0), &cfg).unwrap();
            assert!(traj.states.iter().all(|s| s.u.iter().all(|&x| x == 1.0)));
            assert!(traj.states.iter().all(|s| s.step_residual <= 1e-12));
            assert_eq!(traj.stats.steps, 20);
            assert_eq!(traj.states.len(), 3);
        }
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let g = gaussian(0.05, 100);
        let u0 = g.grid().sample(|r| 1.0 + 0.1 * (-r * r).exp());
        let traj = run_flow(&g, &u0, &FlowConfig::new(0.05, 0.0)).unwrap();
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.states[0].u, u0);
    }

    #[test]
    fn forms_agree() {
        let g = gaussian(0.05, 160);
        let u0 = g.grid().sample(|r| 1.0 + 0.2 * (-r * r).exp());
        let s0 = FlowState::initial(u0);
        let a = step_flow(&s0, &g, &FlowConfig::new(0.05, 1.0)).unwrap();
        let b = step_flow(&s0, &g, &FlowConfig::new(0.05, 1.0).with_form(FlowForm::PorousMedium)).unwrap();
        assert!(a.u.sup_diff(&b.u) <= 1e-10, "{}", a.u.sup_diff(&b.u));
        assert_eq!(a.u[160], s0.u[160]);
    }

    #[test]
    fn positive_curvature_lowers_u_at_steady_boundary() {
        let g = gaussian(0.05, 160);
        let traj = run_flow(&g, &GridFunction::constant(161, 1.0), &FlowConfig::new(0.05, 1.0)).unwrap();
        let u = &traj.last().u;
        assert!(u[0] < 1.0 && u[160] == 1.0);
        assert!(u.iter().all(|&x| x <= 1.0));
    }

    #[test]
    fn positivity_floor_is_fatal() {
        let g = gaussian(0.05, 100);
        let mut u0 = GridFunction::constant(101, 1.0);
        u0[10] = 1e-9;
        let err = step_flow(&FlowState::initial(u0), &g, &FlowConfig::new(0.05, 1.0)).unwrap_err();
        assert!(matches!(err, Error::PositivityFloor { node: 10, .. }));
    }

    #[test]
    fn class_ac_membership() {
        let v = vec![0.5, 0.25, 0.0];
        let c = 2.0;
        let inside = check_class_ac(&[1.0, 1.0, 1.0], &v, c);
        assert!(inside.inside && inside.margin == 0.0);
        let edge: Vec<f64> = v.iter().map(|x| 1.0 + c * x).collect();
        let on = check_class_ac(&edge, &v, c);
        assert!(on.inside && on.margin.abs() < 1e-15);
        let out: Vec<f64> = v.iter().map(|x| 1.0 + 1.01 * c * x).collect();
        assert!(!check_class_ac(&out, &v, c).inside);
    }

    #[test]
    fn fine_bounds_of_constant_run() {
        let e = build_profile(&ProfileSpec::new(Profile::Euclidean, 3, 0.05, 100)).unwrap();
        let traj = run_flow(&e, &GridFunction::constant(101, 1.0), &FlowConfig::new(0.05, 0.5)).unwrap();
        let fb = check_fine_bounds(&traj);
        assert_eq!((fb.c1, fb.c2, fb.fine), (1.0, 1.0, true));
    }

    #[test]
    fn leak_fault_corrupts_states() {
        let e = build_profile(&ProfileSpec::new(Profile::Euclidean, 3, 0.05, 100)).unwrap();
        let mut cfg = FlowConfig::new(0.05, 0.5);
        cfg.fault = Some(Fault::Leak(1.0));
        let traj = run_flow(&e, &GridFunction::constant(101, 1.0), &cfg).unwrap();
        assert!(traj.last().u[0] > 1.4);
    }
}
