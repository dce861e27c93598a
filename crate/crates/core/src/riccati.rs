//! Schrödinger reduction and Riccati factorization of the radial equation
//! `-(v'' + (n-1)(f'/f) v') + R0 v / c_n = 0`.
//!
//! With `k = (n-1)/2` and `V = f^k v` the equation becomes
//! `-V'' + P V = 0`, `P = Q + R0/c_n`,
//! `Q = (n-1)(n-3)/4 (f'/f)² - (n-1)/2 K`. A solution of
//!
//! * case 1: `a' = -a² + P` factors it as `(d/dr + a)(d/dr - a) V = 0`,
//!   so `V = V(0) exp(∫a)`;
//! * case 2: `a' = a² - P` factors it as `(d/dr - a)(d/dr + a) V = 0`,
//!   so `V = V(0) exp(-∫a)`.

use crate::error::{Error, Result};
use crate::geometry::{build_profile, radial_curvature, ManifoldModel, Profile, ProfileSpec, POLE_WINDOW};
use crate::grid::GridFunction;
use crate::stencil::{self, cumulative_trapezoid, first_derivative, midpoints, rk4_step, Parity, Stage};
use serde::Serialize;

/// Bound on the Riccati residual measured by finite differences.
pub const RICCATI_RESIDUAL_TOL: f64 = 1e-8;
/// Outer share of the integrated range used to detect the asymptote.
pub const ASYMPTOTE_WINDOW: f64 = 0.2;
/// Largest relative drift over the window accepted as convergence.
pub const ASYMPTOTE_DRIFT: f64 = 0.01;
const BLOW_UP: f64 = 1e100;

#[derive(Debug, Clone, PartialEq)]
pub struct SchrodingerData {
    /// First node where `Q` is trusted (0 for `n = 3`, else the pole window).
    pub first: usize,
    /// `Q`; NaN at the pole when `n != 3`.
    pub q: GridFunction,
    pub p: GridFunction,
}

fn half_power(model: &ManifoldModel) -> f64 {
    (model.n() as f64 - 1.0) / 2.0
}

pub fn potential_q(model: &ManifoldModel) -> SchrodingerData {
    let n = model.n() as f64;
    let k = radial_curvature(model);
    let c = (n - 1.0) * (n - 3.0) / 4.0;
    let (f, fp) = (model.f(), model.fp());
    let q: Vec<f64> = (0..f.len())
        .map(|i| {
            if model.n() == 3 {
                -k[i]
            } else if i == 0 {
                f64::NAN
            } else {
                let ratio = fp[i] / f[i];
                c * ratio * ratio - (n - 1.0) / 2.0 * k[i]
            }
        })
        .collect();
    let c_n = model.conformal_constant();
    let p = q.iter().zip(model.r0().iter()).map(|(q, r0)| q + r0 / c_n).collect();
    SchrodingerData { first: if model.n() == 3 { 0 } else { POLE_WINDOW }, q: GridFunction(q), p: GridFunction(p) }
}

/// `V = f^{(n-1)/2} v`.
pub fn to_schrodinger(v: &GridFunction, model: &ManifoldModel) -> Result<GridFunction> {
    v.check_len(model.grid())?;
    let k = half_power(model);
    Ok(v.zip_map(model.f(), |v, f| f.powf(k) * v))
}

/// `v = f^{-(n-1)/2} V` for `r >= 5h`; the pole window is filled by quartic
/// extrapolation from the next five nodes.
pub fn from_schrodinger(big_v: &GridFunction, model: &ManifoldModel) -> Result<GridFunction> {
    big_v.check_len(model.grid())?;
    let k = half_power(model);
    let mut v = big_v.zip_map(model.f(), |bv, f| bv / f.powf(k));
    extrapolate_pole(&mut v, POLE_WINDOW);
    Ok(v)
}

/// Fills `values[..first]` with the quartic through `values[first..first + 5]`.
fn extrapolate_pole(values: &mut [f64], first: usize) {
    let xs: Vec<f64> = (first..first + 5).map(|j| j as f64).collect();
    let ys: Vec<f64> = values[first..first + 5].to_vec();
    for i in 0..first {
        let x = i as f64;
        values[i] = (0..5)
            .map(|a| {
                let basis: f64 = (0..5).filter(|&b| b != a).map(|b| (x - xs[b]) / (xs[a] - xs[b])).product();
                ys[a] * basis
            })
            .sum();
    }
}

/// Integrates the radial Yamabe equation from the pole with `v(0) = v0`,
/// `v'(0) = v1`. A regular start needs `v1 = 0`; with `singular_start`
/// the integration begins at the first node from `v0 + v1 h`.
pub fn solve_radial_yamabe_ode(model: &ManifoldModel, v0: f64, v1: f64, singular_start: bool) -> Result<GridFunction> {
    if !(v0 > 0.0) {
        return Err(Error::Precondition(format!("v(0) must be positive (got {v0})")));
    }
    if v1 != 0.0 && !singular_start {
        return Err(Error::IrregularStart(v1));
    }
    let grid = model.grid();
    let h = grid.h();
    let n = model.n() as f64;
    let c_n = model.conformal_constant();
    let (f, fp, r0) = (model.f(), model.fp(), model.r0());
    let (fm, fpm, r0m) = (midpoints(f, Parity::Odd), midpoints(fp, Parity::Even), midpoints(r0, Parity::Even));
    let mut v = vec![0.0; grid.len()];
    v[0] = v0;
    let (start, mut y) = if v1 == 0.0 {
        (0, [v0, 0.0])
    } else {
        v[1] = v0 + v1 * h;
        (1, [v[1], v1])
    };
    for i in start..grid.n_cells() {
        y = rk4_step(grid.r(i), y, h, |stage, r, y| {
            let (fv, fpv, s) = match stage {
                Stage::Start => (f[i], fp[i], r0[i]),
                Stage::Mid => (fm[i], fpm[i], r0m[i]),
                Stage::End => (f[i + 1], fp[i + 1], r0[i + 1]),
            };
            if r == 0.0 {
                [y[1], s * y[0] / (n * c_n)]
            } else {
                [y[1], -(n - 1.0) * fpv / fv * y[1] + s * y[0] / c_n]
            }
        });
        if !(y[0].abs() < BLOW_UP) {
            return Err(Error::BlowUp { radius: grid.r(i + 1) });
        }
        v[i + 1] = y[0];
    }
    Ok(GridFunction(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RiccatiCase {
    Case1,
    Case2,
}

impl RiccatiCase {
    /// `(s, t)` with `a' = s a² + t P`.
    fn signs(self) -> (f64, f64) {
        match self {
            RiccatiCase::Case1 => (-1.0, 1.0),
            RiccatiCase::Case2 => (1.0, -1.0),
        }
    }

    /// Sign of `∫a` in the exponent of `V`.
    fn exponent_sign(self) -> f64 {
        match self {
            RiccatiCase::Case1 => 1.0,
            RiccatiCase::Case2 => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiccatiCase::Case1 => "case1",
            RiccatiCase::Case2 => "case2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiSolution {
    #[serde(skip)]
    pub a: GridFunction,
    /// `a'` from the equation, on the same nodes as `a`.
    #[serde(skip)]
    pub da: GridFunction,
    pub case: RiccatiCase,
    pub start: usize,
    /// Last node reached; smaller than `N` after a blow-up.
    pub end: usize,
    pub blew_up: bool,
    /// Limit of `f^{-(n-1)/2} exp(±∫a)` read off the outer window.
    pub asymptote: f64,
    pub asymptote_ok: bool,
    /// `sup |a' - rhs|` with `a'` from fourth-order differences.
    pub residual: f64,
}

/// RK4 for the Riccati equation from `r = 5h` with `a(5h) = a0`.
pub fn integrate_riccati(model: &ManifoldModel, a0: f64, case: RiccatiCase) -> Result<RiccatiSolution> {
    if !a0.is_finite() {
        return Err(Error::Precondition(format!("a0 must be finite (got {a0})")));
    }
    let data = potential_q(model);
    let grid = model.grid();
    let h = grid.h();
    let nodes = grid.len();
    let start = POLE_WINDOW;
    let p = &data.p;
    let pm = midpoints(p, Parity::None);
    let (s, t) = case.signs();
    let mut a = vec![f64::NAN; nodes];
    a[start] = a0;
    let mut y = [a0];
    let mut end = start;
    let mut blew_up = false;
    for i in start..grid.n_cells() {
        y = rk4_step(grid.r(i), y, h, |stage, _, y| {
            let pv = match stage {
                Stage::Start => p[i],
                Stage::Mid => pm[i],
                Stage::End => p[i + 1],
            };
            [s * y[0] * y[0] + t * pv]
        });
        if !(y[0].abs() < BLOW_UP) {
            blew_up = true;
            break;
        }
        a[i + 1] = y[0];
        end = i + 1;
    }
    let rhs = |i: usize, a: f64| s * a * a + t * p[i];
    let da_num = first_derivative(&a[start..=end], h, Parity::None);
    let residual = (start..=end).fold(0.0f64, |m, i| m.max((da_num[i - start] - rhs(i, a[i])).abs()));
    extrapolate_pole(&mut a, start);
    let mut da: Vec<f64> = (0..nodes).map(|i| if i >= start && i <= end { rhs(i, a[i]) } else { f64::NAN }).collect();
    let da_pole = first_derivative(&a[..=start + 4], h, Parity::None);
    da[..start].copy_from_slice(&da_pole[..start]);

    let (asymptote, asymptote_ok) = if blew_up {
        (f64::NAN, false)
    } else {
        let k = half_power(model);
        let integral = cumulative_trapezoid(&a, h, Some(&da));
        let sign = case.exponent_sign();
        let from = ((end as f64) * (1.0 - ASYMPTOTE_WINDOW)).floor() as usize;
        let g: Vec<f64> = (from..=end).map(|i| (sign * integral[i]).exp() / model.f()[i].powf(k)).collect();
        let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &x| (l.min(x), u.max(x)));
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let last = *g.last().unwrap();
        (last, last > 0.0 && mean > 0.0 && (hi - lo) / mean < ASYMPTOTE_DRIFT)
    };
    Ok(RiccatiSolution {
        a: GridFunction(a),
        da: GridFunction(da),
        case,
        start,
        end,
        blew_up,
        asymptote,
        asymptote_ok,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct YamabeFactor {
    pub big_v: GridFunction,
    /// `v = f^{-(n-1)/2} V`, behaving like `V(0) r^{-(n-1)/2}` at the pole.
    pub v: GridFunction,
}

/// `V = V0 exp(±∫_0^r a)` and the conformal factor `v = f^{-(n-1)/2} V`.
/// Refuses solutions without a positive asymptote.
pub fn yamabe_factor_from_riccati(model: &ManifoldModel, sol: &RiccatiSolution, v0: f64) -> Result<YamabeFactor> {
    if !sol.asymptote_ok {
        return Err(Error::NoAsymptote);
    }
    if !(v0 > 0.0) {
        return Err(Error::Precondition(format!("V(0) must be positive (got {v0})")));
    }
    let integral = cumulative_trapezoid(&sol.a, model.grid().h(), Some(&sol.da));
    let sign = sol.case.exponent_sign();
    let big_v = GridFunction(integral.iter().map(|x| v0 * (sign * x).exp()).collect());
    let v = from_schrodinger(&big_v, model)?;
    if let Some(i) = (1..v.len()).find(|&i| !(v[i] > 0.0)) {
        return Err(Error::NonPositive { node: i, value: v[i], context: "Riccati conformal factor".into() });
    }
    Ok(YamabeFactor { big_v, v })
}

/// `sup |-V'' + P V|` on `[5h, R - 5h]`, with `V''` from fourth-order differences.
pub fn factorization_residual(model: &ManifoldModel, big_v: &GridFunction) -> f64 {
    let data = potential_q(model);
    let h = model.grid().h();
    let d2 = stencil::second_derivative(big_v, h, Parity::None);
    let last = model.grid().n_cells() - POLE_WINDOW;
    (POLE_WINDOW..=last).fold(0.0f64, |m, i| m.max((-d2[i] + data.p[i] * big_v[i]).abs()))
}

/// Sup of the difference between `(L₁ + R0/c_n) V` (fourth-order stencil)
/// and `f^{(n-1)/2} L(f^{-(n-1)/2} V) / c_n` (conformal operator) over the
/// nodes of `window`, clipped to `[5h, R - 5h]`. Near the pole `v` grows
/// like `r^{-(n-1)/2}`, so refinement studies use a window away from it.
pub fn conjugation_discrepancy(
    model: &ManifoldModel,
    big_v: &GridFunction,
    window: std::ops::RangeInclusive<f64>,
) -> Result<f64> {
    let data = potential_q(model);
    let h = model.grid().h();
    let k = half_power(model);
    let c_n = model.conformal_constant();
    let d2 = stencil::second_derivative(big_v, h, Parity::None);
    let v = from_schrodinger(big_v, model)?;
    let op = crate::elliptic::assemble_on(model, model.grid().n_cells())?;
    let lv = op.apply(&v);
    let first = ((window.start() / h - 1e-9).ceil().max(0.0) as usize).max(POLE_WINDOW);
    let last = ((window.end() / h + 1e-9).floor() as usize).min(model.grid().n_cells() - POLE_WINDOW);
    if first > last {
        return Err(Error::Precondition(format!("empty window {window:?}")));
    }
    Ok((first..=last).fold(0.0f64, |m, i| {
        let schrodinger = -d2[i] + data.p[i] * big_v[i];
        let conformal = model.f()[i].powf(k) * lv[i] / c_n;
        m.max((schrodinger - conformal).abs())
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderBumpFixture {
    pub model: ManifoldModel,
    /// `a* = V'/V = -e^{-r}/(2 + e^{-r})`.
    pub a_star: GridFunction,
    /// `V = 2 + e^{-r}`.
    pub big_v: GridFunction,
    /// `v = (2 + e^{-r}) / tanh r`; infinite at the pole.
    pub v: GridFunction,
    pub v0: f64,
    pub asymptote: f64,
}

/// Three-dimensional model with `f = tanh r` and the potential
/// `R0 = c_n (V''/V - Q)` that makes `V = 2 + e^{-r}` a case-1 solution.
pub fn build_cylinder_bump_fixture(h: f64, n_cells: usize) -> Result<CylinderBumpFixture> {
    let c_n = 8.0;
    let sech2 = |r: f64| 1.0 / r.cosh().powi(2);
    let r0: Vec<f64> = (0..=n_cells)
        .map(|i| {
            let r = i as f64 * h;
            let e = (-r).exp();
            c_n * (e / (2.0 + e) + 2.0 * sech2(r))
        })
        .collect();
    let model = build_profile(&ProfileSpec::new(Profile::Cylinder, 3, h, n_cells).with_potential(r0))?;
    let grid = model.grid();
    let a_star = grid.sample(|r| -(-r).exp() / (2.0 + (-r).exp()));
    let big_v = grid.sample(|r| 2.0 + (-r).exp());
    let v = grid.sample(|r| (2.0 + (-r).exp()) / r.tanh());
    Ok(CylinderBumpFixture { model, a_star, big_v, v, v0: 3.0, asymptote: 2.0 / 3.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: u32, h: f64, cells: usize) -> ManifoldModel {
        build_profile(&ProfileSpec::new(Profile::Euclidean, n, h, cells)).unwrap()
    }

    #[test]
    fn potentials_in_closed_form() {
        let q3 = potential_q(&flat(3, 0.01, 500));
        assert!(q3.q.iter().all(|&x| x == 0.0));
        let q5 = potential_q(&flat(5, 0.01, 500));
        assert!(q5.q[0].is_nan());
        for i in 5..=500 {
            let r = i as f64 * 0.01;
            assert!((q5.q[i] - 2.0 / (r * r)).abs() < 1e-9 * q5.q[i]);
        }
        let cyl = build_profile(&ProfileSpec::new(Profile::Cylinder, 3, 0.01, 1000)).unwrap();
        let qc = potential_q(&cyl);
        for i in 0..=1000 {
            let r = i as f64 * 0.01;
            assert!((qc.q[i] + 2.0 / r.cosh().powi(2)).abs() < 1e-6, "r = {r}");
        }
    }

    #[test]
    fn schrodinger_substitution() {
        let m = build_profile(&ProfileSpec::new(Profile::SphereCap, 4, 0.01, 300)).unwrap();
        let v = m.f().map(|f| f.powf(-1.5));
        let big = to_schrodinger(&v, &m).unwrap();
        assert!(big.iter().skip(1).all(|x| (x - 1.0).abs() < 1e-12));
        let w = m.grid().sample(|r| 1.0 + r * r.cos());
        let back = from_schrodinger(&to_schrodinger(&w, &m).unwrap(), &m).unwrap();
        for i in POLE_WINDOW..=300 {
            assert!((back[i] - w[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn harmonic_profile_becomes_linear() {
        let m = flat(3, 0.01, 1000);
        let v = m.grid().sample(|r| if r > 0.0 { 2.0 + 3.0 / r } else { f64::INFINITY });
        let big = to_schrodinger(&v, &m).unwrap();
        for i in 100..=1000 {
            let r = i as f64 * 0.01;
            assert!((big[i] - (2.0 * r + 3.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn radial_ode_trivial_and_irregular_starts() {
        let m = flat(3, 0.01, 300);
        let v = solve_radial_yamabe_ode(&m, 1.0, 0.0, false).unwrap();
        assert!(v.iter().all(|&x| x == 1.0));
        assert_eq!(solve_radial_yamabe_ode(&m, 1.0, 1.0, false), Err(Error::IrregularStart(1.0)));
        assert!(solve_radial_yamabe_ode(&m, 1.0, 1.0, true).is_ok());
        assert!(solve_radial_yamabe_ode(&m, 0.0, 0.0, false).is_err());
    }

    #[test]
    fn radial_ode_reports_blow_up() {
        let m = build_profile(&ProfileSpec::new(Profile::Euclidean, 3, 0.05, 2000).with_potential(vec![800.0; 2001]))
            .unwrap();
        assert!(matches!(solve_radial_yamabe_ode(&m, 1.0, 0.0, false), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn radial_ode_on_sphere_refines_at_fourth_order() {
        let run = |h: f64| {
            let cells = (2.4 / h).round() as usize;
            let m =
                build_profile(&ProfileSpec::new(Profile::SphereCap, 3, h, cells).with_potential(vec![6.0; cells + 1]))
                    .unwrap();
            solve_radial_yamabe_ode(&m, 1.0, 0.0, false).unwrap()
        };
        let (a, b, c) = (run(0.02), run(0.01), run(0.000625));
        let e1 = (0..=120).map(|i| (a[i] - c[32 * i]).abs()).fold(0.0, f64::max);
        let e2 = (0..=240).map(|i| (b[i] - c[16 * i]).abs()).fold(0.0, f64::max);
        let order = (e1 / e2).log2();
        assert!(order >= 3.8, "order {order}");
        assert!(e2 <= 1e-8, "{e2}");
    }

    #[test]
    fn riccati_closed_forms() {
        let h = 0.01;
        let m = flat(3, h, 1000);
        let sol = integrate_riccati(&m, 1.0, RiccatiCase::Case1).unwrap();
        let err = (5..=1000).map(|i| (sol.a[i] - 1.0 / (i as f64 * h - 5.0 * h + 1.0)).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "{err}");
        let zero = integrate_riccati(&m, 0.0, RiccatiCase::Case1).unwrap();
        assert!(zero.a.iter().all(|&x| x == 0.0));
        let blow = integrate_riccati(&m, 1.0, RiccatiCase::Case2).unwrap();
        assert!(blow.blew_up && !blow.asymptote_ok && blow.end < 1000);
    }

    #[test]
    fn degenerate_factor_on_flat_space() {
        let m = flat(3, 0.01, 1000);
        let sol = integrate_riccati(&m, 0.0, RiccatiCase::Case1).unwrap();
        // f^{-1} exp(0) = 1/r has no positive limit
        assert!(!sol.asymptote_ok);
        assert_eq!(yamabe_factor_from_riccati(&m, &sol, 1.0), Err(Error::NoAsymptote));
    }

    #[test]
    fn cylinder_fixture_end_to_end() {
        let fx = build_cylinder_bump_fixture(0.01, 2000).unwrap();
        assert!((fx.a_star[0] + 1.0 / 3.0).abs() < 1e-15);
        assert!(fx.model.r0().iter().all(|&x| x > 0.0));
        let sol = integrate_riccati(&fx.model, fx.a_star[POLE_WINDOW], RiccatiCase::Case1).unwrap();
        assert!(sol.residual <= RICCATI_RESIDUAL_TOL, "{}", sol.residual);
        assert!(sol.asymptote_ok && (sol.asymptote - fx.asymptote).abs() < 1e-4);
        let inner = (POLE_WINDOW..=2000).map(|i| (sol.a[i] - fx.a_star[i]).abs()).fold(0.0, f64::max);
        let pole = (0..POLE_WINDOW).map(|i| (sol.a[i] - fx.a_star[i]).abs()).fold(0.0, f64::max);
        assert!(inner < 1e-7 && pole < 1e-7, "{inner} {pole}");
        let factor = yamabe_factor_from_riccati(&fx.model, &sol, fx.v0).unwrap();
        for i in POLE_WINDOW..=2000 {
            assert!((factor.v[i] - fx.v[i]).abs() <= 1e-6 * fx.v[i]);
        }
        assert!(factorization_residual(&fx.model, &factor.big_v) <= 10.0 * RICCATI_RESIDUAL_TOL);
    }

    #[test]
    fn case_two_factorization() {
        // a = -a* solves a' = a² - P, and exp(-∫a) reproduces V
        let fx = build_cylinder_bump_fixture(0.01, 2000).unwrap();
        let sol = integrate_riccati(&fx.model, -fx.a_star[POLE_WINDOW], RiccatiCase::Case2).unwrap();
        assert!(sol.residual <= RICCATI_RESIDUAL_TOL);
        assert!(sol.asymptote_ok);
        let factor = yamabe_factor_from_riccati(&fx.model, &sol, fx.v0).unwrap();
        assert!(factorization_residual(&fx.model, &factor.big_v) <= 10.0 * RICCATI_RESIDUAL_TOL);
    }
}
