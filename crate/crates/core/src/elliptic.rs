//! Conformal Laplacian `L = -c_n Δ + R0`, Dirichlet problems on balls,
//! domain exhaustion, and the zero-scalar-curvature factors built from the
//! Poisson problems `L v = R0` and `L u = L φ`.

use crate::error::{Error, Result};
use crate::geometry::ManifoldModel;
use crate::grid::GridFunction;
use crate::laplacian::RadialLaplacian;
use crate::tridiag::Tridiagonal;
use serde::Serialize;

/// Fraction of the domain treated as "near infinity".
pub const OUTER_WINDOW: f64 = 0.10;
/// Bound on `‖L w‖∞` accepted for a zero-scalar-curvature factor.
pub const ZERO_RESIDUAL_TOL: f64 = 1e-8;
const MONOTONE_TOL: f64 = 1e-12;

/// Discrete conformal Laplacian on the ball `[0, r_last]`: rows `0..last`
/// discretize `-c_n Δ + R0` (Neumann reflection at the pole), row `last`
/// is the Dirichlet closure.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalOperator {
    pub matrix: Tridiagonal,
    pub last: usize,
    pub c_n: f64,
    laplacian: RadialLaplacian,
    r0: Vec<f64>,
}

pub fn assemble_conformal_laplacian(model: &ManifoldModel, radius: f64) -> Result<ConformalOperator> {
    let last = model.grid().index_of(radius)?;
    assemble_on(model, last)
}

pub(crate) fn assemble_on(model: &ManifoldModel, last: usize) -> Result<ConformalOperator> {
    let c_n = model.conformal_constant();
    let laplacian = RadialLaplacian::new(model);
    let r0 = model.r0().values()[..=last].to_vec();
    let mut m = Tridiagonal::zeros(last + 1);
    for i in 0..last {
        let (a, b) = (laplacian.upper[i], laplacian.lower[i]);
        m.sup[i] = -c_n * a;
        m.sub[i] = if i == 0 { 0.0 } else { -c_n * b };
        m.diag[i] = c_n * (a + b) + r0[i];
        if m.sup[i] > 0.0 || m.sub[i] > 0.0 || !(m.diag[i] > 0.0) {
            return Err(Error::NotMMatrix {
                node: i,
                detail: format!("sub {:e}, diag {:e}, sup {:e}", m.sub[i], m.diag[i], m.sup[i]),
            });
        }
    }
    m.diag[last] = 1.0;
    Ok(ConformalOperator { matrix: m, last, c_n, laplacian, r0 })
}

impl ConformalOperator {
    /// `(L u)_i` for rows `0..last`, in difference form so that constants
    /// map exactly to `R0 * const`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.last).map(|i| self.r0[i] * u[i] - self.c_n * self.laplacian.apply_at(u, i)).collect()
    }

    /// Row-sum norm of the matrix.
    pub fn norm_inf(&self) -> f64 {
        let m = &self.matrix;
        (0..m.len()).map(|i| m.sub[i].abs() + m.diag[i].abs() + m.sup[i].abs()).fold(0.0, f64::max)
    }

    pub fn laplacian(&self) -> &RadialLaplacian {
        &self.laplacian
    }

    /// `‖L u - rhs‖∞` over rows `0..last`.
    pub fn residual(&self, u: &[f64], rhs: &[f64]) -> f64 {
        self.apply(u).iter().zip(rhs).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Solves `L u = rhs` on `[0, R]` with `u(R) = boundary_value`. The result
/// lives on the sub-grid `0..=R/h`.
pub fn solve_dirichlet_ball(
    model: &ManifoldModel,
    rhs: &GridFunction,
    radius: f64,
    boundary_value: f64,
) -> Result<GridFunction> {
    rhs.check_len(model.grid())?;
    let op = assemble_conformal_laplacian(model, radius)?;
    solve_with(&op, rhs, boundary_value)
}

fn solve_with(op: &ConformalOperator, rhs: &[f64], boundary_value: f64) -> Result<GridFunction> {
    let last = op.last;
    let mut b = rhs[..=last].to_vec();
    b[last] = boundary_value;
    let mut u = op.matrix.solve(&b)?;
    let scale = rhs[..last].iter().fold(0.0f64, |m, x| m.max(x.abs())) + 1.0;
    let u_norm = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // requested accuracy plus the floor set by rounding u itself
    let bound = 1e-12 * scale + 2.0 * f64::EPSILON * op.norm_inf() * u_norm;
    // iterative refinement against the difference-form residual
    let mut residual = op.residual(&u, &rhs[..last]);
    for _ in 0..3 {
        if residual <= 0.1 * bound {
            break;
        }
        let mut r: Vec<f64> = op.apply(&u).iter().zip(&rhs[..last]).map(|(a, b)| b - a).collect();
        r.push(boundary_value - u[last]);
        let du = op.matrix.solve(&r)?;
        for (x, d) in u.iter_mut().zip(du) {
            *x += d;
        }
        residual = op.residual(&u, &rhs[..last]);
    }
    if residual > bound {
        return Err(Error::Residual { residual, bound, context: "dirichlet ball solve".into() });
    }
    Ok(GridFunction(u))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExhaustionResult {
    pub radii: Vec<f64>,
    #[serde(skip)]
    pub stages: Vec<GridFunction>,
    /// Last solved stage, extended by zero to the full grid.
    #[serde(skip)]
    pub limit: GridFunction,
    pub limit_radius: f64,
    /// `sup |u_k - u_{k-1}|` on the innermost ball, one per stage after the first.
    pub sup_changes: Vec<f64>,
    /// Stage index at which the change dropped below the tolerance.
    pub converged_at: Option<usize>,
    /// Whether the last recorded change is smaller than the one before it.
    pub changes_decreasing: bool,
    pub residual: f64,
}

/// Doubling schedule `r_min * 2^k` capped by `r_max`.
pub fn doubling_schedule(r_min: f64, r_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = r_min;
    while r < r_max * (1.0 - 1e-12) {
        out.push(r);
        r *= 2.0;
    }
    out.push(r_max);
    out
}

/// Solves `L u_R = rhs`, `u_R(R) = 0` on a growing sequence of balls and
/// checks the monotone ordering `u_R <= u_R'` stage by stage.
pub fn exhaust_poisson(model: &ManifoldModel, rhs: &GridFunction, radii: &[f64], tol: f64) -> Result<ExhaustionResult> {
    rhs.check_len(model.grid())?;
    if radii.is_empty() {
        return Err(Error::Precondition("empty exhaustion schedule".into()));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("exhaustion radii must increase strictly".into()));
    }
    let lasts = radii.iter().map(|&r| model.grid().index_of(r)).collect::<Result<Vec<_>>>()?;
    let inner = lasts[0];
    let mut stages: Vec<GridFunction> = Vec::new();
    let mut sup_changes = Vec::new();
    let mut converged_at = None;
    let mut op = None;
    for (k, &last) in lasts.iter().enumerate() {
        let stage_op = assemble_on(model, last)?;
        let u = solve_with(&stage_op, rhs, 0.0)?;
        if let Some(prev) = stages.last() {
            let plast = prev.len() - 1;
            for i in 0..=plast {
                let drop = prev[i] - u[i];
                if drop > MONOTONE_TOL {
                    return Err(Error::NonMonotone { stage: k, node: i, drop });
                }
            }
            let change = (0..=inner).fold(0.0f64, |m, i| m.max((u[i] - prev[i]).abs()));
            sup_changes.push(change);
            stages.push(u);
            op = Some(stage_op);
            if change < tol {
                converged_at = Some(k);
                break;
            }
        } else {
            stages.push(u);
            op = Some(stage_op);
        }
    }
    let op = op.expect("at least one stage");
    let last_stage = stages.last().expect("at least one stage");
    let residual = op.residual(last_stage, &rhs[..op.last]);
    let mut limit = GridFunction::zeros(model.grid().len());
    limit[..last_stage.len()].copy_from_slice(last_stage);
    let changes_decreasing = match sup_changes.len() {
        0 | 1 => true,
        k => sup_changes[k - 1] < sup_changes[k - 2],
    };
    Ok(ExhaustionResult {
        radii: radii[..stages.len()].to_vec(),
        limit_radius: radii[stages.len() - 1],
        stages,
        limit,
        sup_changes,
        converged_at,
        changes_decreasing,
        residual,
    })
}

fn outer_window(last: usize) -> std::ops::RangeInclusive<usize> {
    let start = ((last as f64) * (1.0 - OUTER_WINDOW)).floor() as usize;
    start..=last
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyM {
    #[serde(skip)]
    pub v: GridFunction,
    /// `R0 ≡ 0`, so `v ≡ 0`.
    pub trivial: bool,
    pub sup_v: f64,
    /// Largest value of `v` on the outer window of the limit ball.
    pub outer_max: f64,
    pub decay_threshold: f64,
    /// False means "property (M) not numerically confirmed".
    pub decay_ok: bool,
    pub exhaustion: ExhaustionResult,
}

/// Decaying positive solution of `L v = R0` via domain exhaustion.
/// `decay_fraction` sets the outer-window threshold `δ = decay_fraction·max v`.
pub fn property_m_solution(
    model: &ManifoldModel,
    schedule: &[f64],
    tol: f64,
    decay_fraction: f64,
) -> Result<PropertyM> {
    let r0 = model.r0();
    if let Some(i) = r0.iter().position(|&x| x < 0.0) {
        return Err(Error::Precondition(format!("R0 < 0 at node {i}")));
    }
    let exhaustion = exhaust_poisson(model, r0, schedule, tol)?;
    let v = exhaustion.limit.clone();
    let last = model.grid().index_of(exhaustion.limit_radius)?;
    if r0.iter().all(|&x| x == 0.0) {
        return Ok(PropertyM {
            v,
            trivial: true,
            sup_v: 0.0,
            outer_max: 0.0,
            decay_threshold: 0.0,
            decay_ok: true,
            exhaustion,
        });
    }
    if let Some(i) = (0..last).find(|&i| !(v[i] > 0.0)) {
        return Err(Error::NonPositive { node: i, value: v[i], context: "property (M) solution".into() });
    }
    let sup_v = v.max();
    if sup_v > 1.0 + 1e-10 {
        return Err(Error::Precondition(format!("sup v = {sup_v} exceeds 1")));
    }
    let outer_max = outer_window(last).map(|i| v[i]).fold(0.0, f64::max);
    let decay_threshold = decay_fraction * sup_v;
    Ok(PropertyM {
        v,
        trivial: false,
        sup_v,
        outer_max,
        decay_threshold,
        decay_ok: outer_max < decay_threshold,
        exhaustion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroMetric {
    #[serde(skip)]
    pub w: GridFunction,
    pub min_w: f64,
    /// `‖L w‖∞` over the interior rows of the ball.
    pub residual: f64,
    /// `max |w - 1|` over the outer window.
    pub outer_deviation: f64,
}

/// `w = 1 - v`, the zero-scalar-curvature factor of a property-(M) solution.
/// `radius` is the ball the solution was computed on.
pub fn yamabe_zero_metric_m(model: &ManifoldModel, v: &GridFunction, radius: f64) -> Result<ZeroMetric> {
    v.check_len(model.grid())?;
    let w = v.map(|x| 1.0 - x);
    finish_zero_metric(model, w, radius)
}

fn finish_zero_metric(model: &ManifoldModel, w: GridFunction, radius: f64) -> Result<ZeroMetric> {
    if let Some(i) = w.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NonPositive { node: i, value: w[i], context: "zero-curvature factor".into() });
    }
    let op = assemble_conformal_laplacian(model, radius)?;
    let residual = op.apply(&w).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if residual > ZERO_RESIDUAL_TOL {
        return Err(Error::Residual { residual, bound: ZERO_RESIDUAL_TOL, context: "L w = 0".into() });
    }
    let outer_deviation = outer_window(op.last).map(|i| (w[i] - 1.0).abs()).fold(0.0, f64::max);
    Ok(ZeroMetric { min_w: w.min(), residual, outer_deviation, w })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyH {
    /// `L φ` on the interior rows (zero at the outer node, which is unused).
    #[serde(skip)]
    pub f_rhs: GridFunction,
    #[serde(skip)]
    pub u_inf: GridFunction,
    pub sup_changes: Vec<f64>,
    pub min_f_rhs: f64,
    /// `L φ >= 0` up to 1e-12.
    pub condition1: bool,
    /// Maximum of `u_∞/φ` over the outer window.
    pub theta: f64,
    pub condition2: bool,
    /// `u_∞ <= ū` for the supplied super-solution, when one was given.
    pub below_supersolution: Option<bool>,
    /// Only produced when both conditions hold.
    pub metric: Option<ZeroMetric>,
}

/// Zero-scalar-curvature factor `w = φ - u_∞`, where `u_∞` is the
/// exhaustion limit of `L u = L φ`.
pub fn property_h_construction(
    model: &ManifoldModel,
    phi: &GridFunction,
    theta_bound: f64,
    schedule: &[f64],
    tol: f64,
    supersolution: Option<&GridFunction>,
) -> Result<PropertyH> {
    phi.check_len(model.grid())?;
    if !(theta_bound > 0.0 && theta_bound < 1.0) {
        return Err(Error::Precondition(format!("theta bound {theta_bound} outside (0, 1)")));
    }
    if let Some(i) = phi.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NonPositive { node: i, value: phi[i], context: "phi".into() });
    }
    let full = assemble_on(model, model.grid().n_cells())?;
    let mut f_rhs = GridFunction::zeros(model.grid().len());
    f_rhs[..full.last].copy_from_slice(&full.apply(phi));
    let min_f_rhs = f_rhs[..full.last].iter().copied().fold(f64::INFINITY, f64::min);
    let condition1 = min_f_rhs >= -1e-12;

    let exhaustion = exhaust_poisson(model, &f_rhs, schedule, tol)?;
    let u_inf = exhaustion.limit.clone();
    let last = model.grid().index_of(exhaustion.limit_radius)?;
    let theta = outer_window(last).map(|i| u_inf[i] / phi[i]).fold(f64::NEG_INFINITY, f64::max);
    let condition2 = theta < theta_bound;
    let below_supersolution = supersolution.map(|ub| u_inf.iter().zip(ub.iter()).all(|(a, b)| *a <= b + 1e-10));
    let metric = if condition1 && condition2 {
        let w = phi.zip_map(&u_inf, |p, u| p - u);
        Some(finish_zero_metric(model, w, exhaustion.limit_radius)?)
    } else {
        None
    };
    let sup_changes = exhaustion.sup_changes;
    Ok(PropertyH { f_rhs, u_inf, sup_changes, min_f_rhs, condition1, theta, condition2, below_supersolution, metric })
}

/// `R(g) = u^{-(n+2)/(n-2)} L u` on rows `0..N`; the outer node is NaN.
pub fn scalar_curvature_of_conformal(model: &ManifoldModel, u: &GridFunction) -> Result<GridFunction> {
    u.check_len(model.grid())?;
    if let Some(i) = u.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::NonPositive { node: i, value: u[i], context: "conformal factor".into() });
    }
    let rows = model.grid().n_cells();
    let mut out = scalar_curvature_on(model, u, 0..rows)?;
    out.push(f64::NAN);
    Ok(GridFunction(out))
}

/// `R(g)` on the given rows; `u` only needs to be positive and finite on
/// the stencil support of those rows.
pub fn scalar_curvature_on(model: &ManifoldModel, u: &[f64], rows: std::ops::Range<usize>) -> Result<Vec<f64>> {
    let support = rows.start.saturating_sub(1)..=rows.end.min(model.grid().n_cells());
    if let Some(i) = support.clone().find(|&i| !(u[i] > 0.0) || !u[i].is_finite()) {
        return Err(Error::NonPositive { node: i, value: u[i], context: "conformal factor".into() });
    }
    let n = model.n() as f64;
    let exponent = -(n + 2.0) / (n - 2.0);
    let c_n = model.conformal_constant();
    let lap = RadialLaplacian::new(model);
    let r0 = model.r0();
    Ok(rows
        .map(|i| {
            let lu = r0[i] * u[i] - c_n * lap.apply_at(u, i);
            u[i].powf(exponent) * lu
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessCheck {
    pub schedule: Vec<f64>,
    pub perturbed: Vec<f64>,
    pub max_difference: f64,
    pub agrees: bool,
}

/// Re-runs the exhaustion with every intermediate radius pulled in by a
/// quarter (snapped to the grid) and compares the limits.
pub fn check_uniqueness(
    model: &ManifoldModel,
    rhs: &GridFunction,
    schedule: &[f64],
    tol: f64,
) -> Result<UniquenessCheck> {
    let h = model.grid().h();
    let k = schedule.len();
    let mut perturbed: Vec<f64> = schedule[..k - 1].iter().map(|&r| ((0.75 * r / h).round().max(1.0)) * h).collect();
    perturbed.dedup();
    perturbed.push(schedule[k - 1]);
    let a = exhaust_poisson(model, rhs, schedule, 0.0)?;
    let b = exhaust_poisson(model, rhs, &perturbed, 0.0)?;
    let max_difference = a.limit.sup_diff(&b.limit);
    Ok(UniquenessCheck { schedule: schedule.to_vec(), perturbed, max_difference, agrees: max_difference <= 10.0 * tol })
}
