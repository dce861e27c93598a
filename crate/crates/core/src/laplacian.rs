//! Three-point radial Laplacian `Δu = u'' + (n-1)(f'/f) u'` with
//! non-negative neighbour weights.
//!
//! Interior rows use the centered second-order formula, which is exact on
//! quadratics. Where a centered weight would turn negative (close to the
//! pole for `n >= 4`, or where `f'/f` is large) the row switches to the
//! flux form `f^{1-n} (f^{n-1} u')'` with midpoint warps, which keeps both
//! weights positive. The pole row is the even reflection `Δu(0) = n u''(0)`.

use crate::geometry::ManifoldModel;

#[derive(Debug, Clone, PartialEq)]
pub struct RadialLaplacian {
    /// Weight of `u_{i+1} - u_i`.
    pub upper: Vec<f64>,
    /// Weight of `u_{i-1} - u_i`.
    pub lower: Vec<f64>,
    /// Rows that use the flux form.
    pub flux_rows: Vec<usize>,
}

impl RadialLaplacian {
    /// Weights for rows `0..N`; the outer node has no row.
    pub fn new(model: &ManifoldModel) -> Self {
        let grid = model.grid();
        let n = model.n() as f64;
        let h = grid.h();
        let h2 = h * h;
        let rows = grid.n_cells();
        let f = model.f();
        let fp = model.fp();
        let mut upper = vec![0.0; rows];
        let mut lower = vec![0.0; rows];
        let mut flux_rows = Vec::new();
        upper[0] = 2.0 * n / h2;
        for i in 1..rows {
            let drift = (n - 1.0) * fp[i] / (2.0 * h * f[i]);
            let (a, b) = (1.0 / h2 + drift, 1.0 / h2 - drift);
            if a >= 0.0 && b >= 0.0 {
                upper[i] = a;
                lower[i] = b;
            } else {
                let p = model.n() as i32 - 1;
                let fu = 0.5 * (f[i] + f[i + 1]);
                let fl = 0.5 * (f[i] + f[i - 1]);
                upper[i] = (fu / f[i]).powi(p) / h2;
                lower[i] = (fl / f[i]).powi(p) / h2;
                flux_rows.push(i);
            }
        }
        RadialLaplacian { upper, lower, flux_rows }
    }

    pub fn rows(&self) -> usize {
        self.upper.len()
    }

    /// `Δu` at row `i` in difference form (exact zero on constants).
    pub fn apply_at(&self, u: &[f64], i: usize) -> f64 {
        let up = self.upper[i] * (u[i + 1] - u[i]);
        if i == 0 {
            up
        } else {
            up + self.lower[i] * (u[i - 1] - u[i])
        }
    }

    /// `Δu` on rows `0..last`.
    pub fn apply(&self, u: &[f64], last: usize) -> Vec<f64> {
        (0..last).map(|i| self.apply_at(u, i)).collect()
    }

    /// Discrete Green's identity partner: `T_j = Σ_i μ_i φ_i Δ_{ij}` so that
    /// `Σ_i μ_i φ_i (Δg)_i = Σ_j T_j g_j` for any `g`, summing rows `0..last`.
    pub fn weighted_adjoint(&self, phi: &[f64], mu: &[f64], last: usize) -> Vec<f64> {
        let mut t = vec![0.0; last + 1];
        for i in 0..last {
            let s = mu[i] * phi[i];
            if s == 0.0 {
                continue;
            }
            t[i + 1] += s * self.upper[i];
            t[i] -= s * self.upper[i];
            if i > 0 {
                t[i - 1] += s * self.lower[i];
                t[i] -= s * self.lower[i];
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_profile, Profile, ProfileSpec};

    #[test]
    fn exact_on_quadratics_in_three_dimensions() {
        let m = build_profile(&ProfileSpec::new(Profile::Euclidean, 3, 0.01, 100)).unwrap();
        let lap = RadialLaplacian::new(&m);
        assert!(lap.flux_rows.is_empty());
        let u: Vec<f64> = m.grid().nodes().map(|r| r * r).collect();
        for (i, d) in lap.apply(&u, 100).iter().enumerate() {
            assert!((d - 6.0).abs() < 1e-8, "row {i}: {d}");
        }
    }

    #[test]
    fn weights_stay_nonnegative_in_higher_dimensions() {
        for n in 3..=12 {
            let m = build_profile(&ProfileSpec::new(Profile::Euclidean, n, 0.1, 50)).unwrap();
            let lap = RadialLaplacian::new(&m);
            assert!(lap.upper.iter().chain(&lap.lower).all(|&w| w >= 0.0));
            assert_eq!(lap.flux_rows.is_empty(), n <= 3);
        }
    }

    #[test]
    fn adjoint_matches_green_identity() {
        let m = build_profile(&ProfileSpec::new(Profile::Cylinder, 4, 0.05, 60)).unwrap();
        let lap = RadialLaplacian::new(&m);
        let last = 60;
        let mu = m.volume_weights(last);
        let phi: Vec<f64> = m.grid().nodes().map(|r| (-(r * r) / 4.0).exp()).collect();
        let g: Vec<f64> = m.grid().nodes().map(|r| (r).sin() + 2.0).collect();
        let lhs: f64 = lap.apply(&g, last).iter().enumerate().map(|(i, d)| mu[i] * phi[i] * d).sum();
        let t = lap.weighted_adjoint(&phi, &mu, last);
        let rhs: f64 = t.iter().zip(&g).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
