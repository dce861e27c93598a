//! Warped-product model manifolds `g0 = dr² + f(r)² dσ²` on `R^n` and their
//! curvature.

use crate::error::{Error, Result};
use crate::grid::{GridFunction, RadialGrid};
use crate::stencil::{self, Parity, Stage};
use serde::{Deserialize, Serialize};

/// Radius below which quantities of the form `0/0` switch to their series
/// expansions, in units of `h`.
pub const POLE_WINDOW: usize = 5;

/// Sign tolerance used when deciding whether computed curvatures are
/// non-negative.
pub const CURVATURE_SIGN_TOL: f64 = 1e-8;

/// Built-in warp-function families.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `f(r) = r`
    Euclidean,
    /// `f(r) = sin r`, grid must stay below `π`.
    SphereCap,
    /// `f(r) = tanh r`
    Cylinder,
    /// `f'' = -K f` integrated from `f(0) = 0, f'(0) = 1`. The table is
    /// sampled either on the grid nodes (`N + 1` values, midpoints are
    /// interpolated) or on the half grid (`2N + 1` values).
    FromCurvature(Vec<f64>),
    /// Warp sampled on the grid nodes; `f'` is taken by finite differences.
    Tabulated(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `R0` is the scalar curvature of `g0`.
    Geometric,
    /// `R0` is a prescribed potential, independent of `f`.
    Coefficient,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Geometric => "geometric",
            Mode::Coefficient => "coefficient",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSpec {
    pub profile: Profile,
    pub n: u32,
    pub h: f64,
    pub n_cells: usize,
    /// Prescribed `R0`; selects coefficient mode when present.
    pub potential: Option<Vec<f64>>,
    /// Reject models whose `R0` dips below zero.
    pub require_nonnegative_r0: bool,
}

impl ProfileSpec {
    pub fn new(profile: Profile, n: u32, h: f64, n_cells: usize) -> Self {
        ProfileSpec { profile, n, h, n_cells, potential: None, require_nonnegative_r0: false }
    }

    pub fn with_potential(mut self, r0: Vec<f64>) -> Self {
        self.potential = Some(r0);
        self
    }

    pub fn nonnegative(mut self) -> Self {
        self.require_nonnegative_r0 = true;
        self
    }
}

/// A validated radial model: dimension, grid, warp, its derivative and the
/// zeroth-order coefficient `R0` of the conformal Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldModel {
    n: u32,
    grid: RadialGrid,
    f: GridFunction,
    fp: GridFunction,
    r0: GridFunction,
    mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureData {
    pub k: GridFunction,
    pub k1: GridFunction,
    pub r0: GridFunction,
    pub rc_radial: GridFunction,
    pub rc_tangential: GridFunction,
}

pub fn build_profile(spec: &ProfileSpec) -> Result<ManifoldModel> {
    if spec.n < 3 {
        return Err(Error::InvalidProfile(format!("dimension must be >= 3, got {}", spec.n)));
    }
    let grid = RadialGrid::new(spec.h, spec.n_cells)?;
    let (f, fp, fp_tol) = match &spec.profile {
        Profile::Euclidean => (grid.sample(|r| r), GridFunction::constant(grid.len(), 1.0), 1e-12),
        Profile::SphereCap => {
            if grid.extent() >= std::f64::consts::PI {
                return Err(Error::InvalidProfile("sphere cap grid must stay below r = pi".to_string()));
            }
            (grid.sample(f64::sin), grid.sample(f64::cos), 1e-12)
        }
        Profile::Cylinder => (
            grid.sample(f64::tanh),
            grid.sample(|r| {
                let c = r.cosh();
                1.0 / (c * c)
            }),
            1e-12,
        ),
        Profile::FromCurvature(k) => {
            let (f, fp) = integrate_warp(&grid, k)?;
            (f, fp, 1e-12)
        }
        Profile::Tabulated(f) => {
            let f = GridFunction(f.clone());
            f.check_len(&grid)?;
            let fp = GridFunction(stencil::first_derivative(&f, grid.h(), Parity::Odd));
            (f, fp, 1e-6)
        }
    };
    f.check_finite("warp function")?;
    fp.check_finite("warp derivative")?;
    if f[0].abs() > 1e-12 {
        return Err(Error::InvalidProfile(format!("f(0) must vanish, got {:e}", f[0])));
    }
    if (fp[0] - 1.0).abs() > fp_tol {
        return Err(Error::InvalidProfile(format!("f'(0) must equal 1, got {}", fp[0])));
    }
    if let Some(i) = (1..grid.len()).find(|&i| f[i] <= 0.0) {
        return Err(Error::InvalidProfile(format!("f must be positive away from the pole; f(r_{i}) = {:e}", f[i])));
    }
    let mut model =
        ManifoldModel { n: spec.n, grid, f, fp, r0: GridFunction::zeros(grid.len()), mode: Mode::Geometric };
    match &spec.potential {
        None => model.r0 = scalar_curvature_background(&model),
        Some(r0) => {
            let r0 = GridFunction(r0.clone());
            r0.check_len(&grid)?;
            r0.check_finite("potential")?;
            model.r0 = r0;
            model.mode = Mode::Coefficient;
        }
    }
    if spec.require_nonnegative_r0 {
        if let Some(i) = model.r0.iter().position(|&x| x < -CURVATURE_SIGN_TOL) {
            return Err(Error::InvalidProfile(format!("R0 is negative at r = {}: {:e}", grid.r(i), model.r0[i])));
        }
    }
    Ok(model)
}

/// RK4 for `f'' = -K f`, `f(0) = 0`, `f'(0) = 1`.
fn integrate_warp(grid: &RadialGrid, k: &[f64]) -> Result<(GridFunction, GridFunction)> {
    let n = grid.len();
    let (nodes, mids): (Vec<f64>, Vec<f64>) = if k.len() == n {
        (k.to_vec(), stencil::midpoints(k, Parity::Even))
    } else if k.len() == 2 * n - 1 {
        (k.iter().step_by(2).copied().collect(), k.iter().skip(1).step_by(2).copied().collect())
    } else {
        return Err(Error::LengthMismatch { expected: n, got: k.len() });
    };
    let h = grid.h();
    let mut f = vec![0.0; n];
    let mut fp = vec![1.0; n];
    let mut y = [0.0, 1.0];
    for i in 0..n - 1 {
        y = stencil::rk4_step(grid.r(i), y, h, |stage, _, y| {
            let kv = match stage {
                Stage::Start => nodes[i],
                Stage::Mid => mids[i],
                Stage::End => nodes[i + 1],
            };
            [y[1], -kv * y[0]]
        });
        f[i + 1] = y[0];
        fp[i + 1] = y[1];
    }
    Ok((GridFunction(f), GridFunction(fp)))
}

impl ManifoldModel {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn f(&self) -> &GridFunction {
        &self.f
    }

    pub fn fp(&self) -> &GridFunction {
        &self.fp
    }

    pub fn r0(&self) -> &GridFunction {
        &self.r0
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// `c_n = 4(n-1)/(n-2)`.
    pub fn conformal_constant(&self) -> f64 {
        let n = self.n as f64;
        4.0 * (n - 1.0) / (n - 2.0)
    }

    /// Same model with a prescribed potential (coefficient mode).
    pub fn with_potential(&self, r0: GridFunction) -> Result<Self> {
        r0.check_len(&self.grid)?;
        r0.check_finite("potential")?;
        Ok(ManifoldModel { r0, mode: Mode::Coefficient, ..self.clone() })
    }

    /// Trapezoid weights of `dμ = ω_{n-1} f^{n-1} dr` on nodes `0..=last`.
    pub fn volume_weights(&self, last: usize) -> Vec<f64> {
        let omega = stencil::unit_sphere_area(self.n);
        let h = self.grid.h();
        (0..=last)
            .map(|i| {
                let end = if i == 0 || i == last { 0.5 } else { 1.0 };
                end * h * omega * self.f[i].powi(self.n as i32 - 1)
            })
            .collect()
    }

    /// `∫_{B_{r_last}} g dμ` by the composite trapezoid rule.
    pub fn integrate(&self, g: &[f64], last: usize) -> f64 {
        self.volume_weights(last).iter().zip(g).map(|(w, v)| w * v).sum()
    }

    pub fn r_values(&self) -> GridFunction {
        self.grid.sample(|r| r)
    }
}

/// Per-node choice between differencing `f` and `f - r` (the stencils
/// annihilate the linear part), whichever has the smaller magnitude.
fn warp_second_derivative(model: &ManifoldModel) -> Vec<f64> {
    let h = model.grid.h();
    let f = &model.f;
    let g: Vec<f64> = f.iter().zip(model.grid.nodes()).map(|(fv, r)| fv - r).collect();
    let d2f = stencil::second_derivative(f, h, Parity::Odd);
    let d2g = stencil::second_derivative(&g, h, Parity::Odd);
    (0..f.len()).map(|i| if g[i].abs() < f[i].abs() || g[i] == 0.0 { d2g[i] } else { d2f[i] }).collect()
}

/// Radial curvature `K = -f''/f`; at the pole `K(0) = -f'''(0)`.
pub fn radial_curvature(model: &ManifoldModel) -> GridFunction {
    let h = model.grid.h();
    let d2 = warp_second_derivative(model);
    let g: Vec<f64> = model.f.iter().zip(model.grid.nodes()).map(|(fv, r)| fv - r).collect();
    let mut k: Vec<f64> = (0..d2.len()).map(|i| if i == 0 { 0.0 } else { -d2[i] / model.f[i] }).collect();
    k[0] = -stencil::third_derivative_at_pole_odd(&g, h);
    GridFunction(k)
}

/// Tangential curvature `K1 = (1 - f'^2)/f^2`, with the even series
/// `K1 = K(0) + c r^2` inside the pole window.
pub fn tangent_curvature(model: &ManifoldModel) -> GridFunction {
    let k0 = radial_curvature(model)[0];
    tangent_curvature_with_pole(model, k0)
}

fn tangent_curvature_with_pole(model: &ManifoldModel, k0: f64) -> GridFunction {
    let h = model.grid.h();
    let formula = |i: usize| {
        let fp = model.fp[i];
        let f = model.f[i];
        (1.0 - fp) * (1.0 + fp) / (f * f)
    };
    let anchor = POLE_WINDOW.min(model.grid.n_cells());
    let ra = model.grid.r(anchor);
    let c2 = (formula(anchor) - k0) / (ra * ra);
    GridFunction(
        (0..model.grid.len())
            .map(|i| {
                if i < anchor {
                    let r = i as f64 * h;
                    k0 + c2 * r * r
                } else {
                    formula(i)
                }
            })
            .collect(),
    )
}

/// `R0 = 2(n-1) K + (n-1)(n-2) K1`.
pub fn scalar_curvature_background(model: &ManifoldModel) -> GridFunction {
    let k = radial_curvature(model);
    let k1 = tangent_curvature_with_pole(model, k[0]);
    combine_scalar(model.n, &k, &k1)
}

fn combine_scalar(n: u32, k: &GridFunction, k1: &GridFunction) -> GridFunction {
    let n = n as f64;
    k.zip_map(k1, |a, b| 2.0 * (n - 1.0) * a + (n - 1.0) * (n - 2.0) * b)
}

pub fn curvature_data(model: &ManifoldModel) -> CurvatureData {
    let n = model.n as f64;
    let k = radial_curvature(model);
    let k1 = tangent_curvature_with_pole(model, k[0]);
    let r0 = combine_scalar(model.n, &k, &k1);
    let rc_radial = k.map(|a| (n - 1.0) * a);
    let rc_tangential = k.zip_map(&k1, |a, b| a + (n - 2.0) * b);
    CurvatureData { k, k1, r0, rc_radial, rc_tangential }
}

/// `vol(B_R) = ω_{n-1} ∫_0^R f^{n-1} dr`; the last partial cell uses linear
/// interpolation of the integrand.
pub fn volume_of_ball(model: &ManifoldModel, radius: f64) -> Result<f64> {
    let grid = model.grid;
    let extent = grid.extent();
    if !(radius > 0.0 && radius <= extent * (1.0 + 1e-12)) {
        return Err(Error::RadiusOutOfRange { radius, extent });
    }
    let p = model.n as i32 - 1;
    let g: Vec<f64> = model.f.iter().map(|x| x.powi(p)).collect();
    let j = grid.floor_index(radius);
    let mut integral = stencil::trapezoid(&g, grid.h(), j);
    let rest = radius - grid.r(j);
    if rest > 0.0 && j < grid.n_cells() {
        let g_end = g[j] + (g[j + 1] - g[j]) * rest / grid.h();
        integral += 0.5 * rest * (g[j] + g_end);
    }
    Ok(stencil::unit_sphere_area(model.n) * integral)
}

pub fn euclidean_ball_volume(n: u32, radius: f64) -> f64 {
    stencil::unit_sphere_area(n) * radius.powi(n as i32) / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BishopReport {
    /// False when a Ricci eigenvalue is negative somewhere on the grid.
    pub applicable: bool,
    pub radii: Vec<f64>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub passed: bool,
}

/// Whether both Ricci eigenvalues are non-negative on the grid.
pub fn has_nonnegative_ricci(model: &ManifoldModel) -> bool {
    let c = curvature_data(model);
    c.rc_radial.min() >= -CURVATURE_SIGN_TOL && c.rc_tangential.min() >= -CURVATURE_SIGN_TOL
}

/// Bishop comparison `vol(B_R) <= ω_{n-1} R^n / n` at each sampled radius.
pub fn bishop_check(model: &ManifoldModel, radii: &[f64]) -> Result<BishopReport> {
    let applicable = has_nonnegative_ricci(model);
    let mut ratios = Vec::with_capacity(radii.len());
    for &r in radii {
        ratios.push(volume_of_ball(model, r)? / euclidean_ball_volume(model.n, r));
    }
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // the trapezoid rule overestimates r^{n-1} by n(n-1)h²/(12R²) relative
    let n = model.n as f64;
    let h = model.grid.h();
    let passed = radii.iter().zip(&ratios).all(|(&r, &q)| q <= 1.0 + n * (n - 1.0) * h * h / (12.0 * r * r) + 1e-12);
    Ok(BishopReport { applicable, radii: radii.to_vec(), passed: applicable && passed, ratios, max_ratio })
}
