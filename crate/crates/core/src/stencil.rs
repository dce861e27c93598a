//! Fourth-order finite-difference stencils, midpoint interpolation and
//! quadrature on a uniform radial grid.
//!
//! Near `r = 0` the stencils use ghost values from the function's parity
//! (warp functions are odd, radial fields are even). Near the outer end
//! they switch to one-sided formulas of the same order.

use std::f64::consts::PI;

/// Reflection rule used to populate ghost nodes at `r < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    /// `f(-r) = -f(r)`
    Odd,
    /// `f(-r) = f(r)`
    Even,
    /// No reflection; use one-sided stencils at the pole.
    None,
}

fn ghost(values: &[f64], k: usize, parity: Parity) -> f64 {
    match parity {
        Parity::Odd => -values[k],
        Parity::Even => values[k],
        Parity::None => unreachable!("one-sided stencil expected"),
    }
}

fn at(values: &[f64], i: isize, parity: Parity) -> f64 {
    if i >= 0 {
        values[i as usize]
    } else {
        ghost(values, (-i) as usize, parity)
    }
}

/// Fourth-order second derivative at node `i`.
pub fn second_derivative_at(values: &[f64], h: f64, i: usize, parity: Parity) -> f64 {
    let n = values.len() - 1;
    let h2 = 12.0 * h * h;
    if i + 2 <= n && (i >= 2 || parity != Parity::None) {
        let i = i as isize;
        let f = |k: isize| at(values, i + k, parity);
        return (-f(2) + 16.0 * f(1) - 30.0 * f(0) + 16.0 * f(-1) - f(-2)) / h2;
    }
    if i < 2 {
        let f = &values[0..6];
        return if i == 0 {
            (45.0 * f[0] - 154.0 * f[1] + 214.0 * f[2] - 156.0 * f[3] + 61.0 * f[4] - 10.0 * f[5]) / h2
        } else {
            (10.0 * f[0] - 15.0 * f[1] - 4.0 * f[2] + 14.0 * f[3] - 6.0 * f[4] + f[5]) / h2
        };
    }
    // backward one-sided, g[0] is the last node
    let g = |k: usize| values[n - k];
    if i == n {
        (45.0 * g(0) - 154.0 * g(1) + 214.0 * g(2) - 156.0 * g(3) + 61.0 * g(4) - 10.0 * g(5)) / h2
    } else {
        (10.0 * g(0) - 15.0 * g(1) - 4.0 * g(2) + 14.0 * g(3) - 6.0 * g(4) + g(5)) / h2
    }
}

/// Fourth-order first derivative at node `i`.
pub fn first_derivative_at(values: &[f64], h: f64, i: usize, parity: Parity) -> f64 {
    let n = values.len() - 1;
    let d = 12.0 * h;
    if i + 2 <= n && (i >= 2 || parity != Parity::None) {
        let i = i as isize;
        let f = |k: isize| at(values, i + k, parity);
        return (f(-2) - 8.0 * f(-1) + 8.0 * f(1) - f(2)) / d;
    }
    if i < 2 {
        let f = &values[0..5];
        return if i == 0 {
            (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / d
        } else {
            (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / d
        };
    }
    let g = |k: usize| values[n - k];
    if i == n {
        (25.0 * g(0) - 48.0 * g(1) + 36.0 * g(2) - 16.0 * g(3) + 3.0 * g(4)) / d
    } else {
        (3.0 * g(0) + 10.0 * g(1) - 18.0 * g(2) + 6.0 * g(3) - g(4)) / d
    }
}

pub fn second_derivative(values: &[f64], h: f64, parity: Parity) -> Vec<f64> {
    (0..values.len()).map(|i| second_derivative_at(values, h, i, parity)).collect()
}

pub fn first_derivative(values: &[f64], h: f64, parity: Parity) -> Vec<f64> {
    (0..values.len()).map(|i| first_derivative_at(values, h, i, parity)).collect()
}

/// Fourth-order third derivative at `r = 0` of an odd function.
pub fn third_derivative_at_pole_odd(values: &[f64], h: f64) -> f64 {
    (-values[3] + 8.0 * values[2] - 13.0 * values[1]) / (4.0 * h * h * h)
}

/// Cubic interpolation of the values at the cell midpoints `r_i + h/2`,
/// `i = 0..N-1`.
pub fn midpoints(values: &[f64], parity: Parity) -> Vec<f64> {
    let n = values.len() - 1;
    (0..n)
        .map(|i| {
            if i >= 1 && i + 2 <= n {
                (-values[i - 1] + 9.0 * values[i] + 9.0 * values[i + 1] - values[i + 2]) / 16.0
            } else if i == 0 && parity != Parity::None {
                let gm = ghost(values, 1, parity);
                (-gm + 9.0 * values[0] + 9.0 * values[1] - values[2]) / 16.0
            } else if i == 0 {
                (5.0 * values[0] + 15.0 * values[1] - 5.0 * values[2] + values[3]) / 16.0
            } else {
                (values[n - 3] - 5.0 * values[n - 2] + 15.0 * values[n - 1] + 5.0 * values[n]) / 16.0
            }
        })
        .collect()
}

/// Composite trapezoid over `values[0..=last]`.
pub fn trapezoid(values: &[f64], h: f64, last: usize) -> f64 {
    if last == 0 {
        return 0.0;
    }
    let inner: f64 = values[1..last].iter().sum();
    h * (0.5 * values[0] + inner + 0.5 * values[last])
}

/// Cumulative trapezoid `I_j = ∫_0^{r_j} a`, optionally with the
/// Euler-Maclaurin end correction `-h²/12 (a'(r_j) - a'(0))` which lifts the
/// rule to fourth order when the derivative samples are accurate.
pub fn cumulative_trapezoid(values: &[f64], h: f64, derivative: Option<&[f64]>) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..values.len() {
        acc += 0.5 * h * (values[i - 1] + values[i]);
        out.push(acc);
    }
    if let Some(d) = derivative {
        let c = h * h / 12.0;
        for (j, o) in out.iter_mut().enumerate() {
            *o -= c * (d[j] - d[0]);
        }
    }
    out
}

/// Gamma function at a positive half-integer `x = k/2`.
fn gamma_half_integer(twice_x: u32) -> f64 {
    assert!(twice_x >= 1);
    let (mut g, mut x) = if twice_x % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    let target = twice_x as f64 / 2.0;
    while x < target - 0.25 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Area of the unit `(n-1)`-sphere in `R^n`: `2 π^{n/2} / Γ(n/2)`.
pub fn unit_sphere_area(n: u32) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half_integer(n)
}

/// Least-squares slope of `y` against `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Least-squares slope in log-log coordinates.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    least_squares_slope(&lx, &ly)
}

/// Classical fourth-order Runge-Kutta step for an autonomous-in-form
/// system `y' = rhs(r, y)` where the caller supplies the right-hand side
/// evaluated at `r`, `r + h/2` and `r + h`.
pub fn rk4_step<const D: usize>(
    r: f64,
    y: [f64; D],
    h: f64,
    mut rhs: impl FnMut(Stage, f64, &[f64; D]) -> [f64; D],
) -> [f64; D] {
    let add = |a: &[f64; D], b: &[f64; D], s: f64| {
        let mut o = *a;
        for k in 0..D {
            o[k] += s * b[k];
        }
        o
    };
    let k1 = rhs(Stage::Start, r, &y);
    let k2 = rhs(Stage::Mid, r + 0.5 * h, &add(&y, &k1, 0.5 * h));
    let k3 = rhs(Stage::Mid, r + 0.5 * h, &add(&y, &k2, 0.5 * h));
    let k4 = rhs(Stage::End, r + h, &add(&y, &k3, h));
    let mut out = y;
    for k in 0..D {
        out[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    }
    out
}

/// Which RK4 stage is being evaluated, so tabulated coefficients can be
/// looked up at the node or at the cell midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Start,
    Mid,
    End,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(r: f64) -> f64 {
        1.0 - 2.0 * r + 0.5 * r * r - 0.3 * r.powi(3) + 0.1 * r.powi(4)
    }

    #[test]
    fn stencils_exact_on_quartics() {
        let h = 0.1;
        let v: Vec<f64> = (0..=20).map(|i| poly(i as f64 * h)).collect();
        for i in 0..=20 {
            let r = i as f64 * h;
            let d1 = -2.0 + r - 0.9 * r * r + 0.4 * r.powi(3);
            let d2 = 1.0 - 1.8 * r + 1.2 * r * r;
            assert!((first_derivative_at(&v, h, i, Parity::None) - d1).abs() < 1e-10, "d1 at {i}");
            assert!((second_derivative_at(&v, h, i, Parity::None) - d2).abs() < 1e-9, "d2 at {i}");
        }
    }

    #[test]
    fn parity_ghosts() {
        let h = 0.05;
        let odd: Vec<f64> = (0..=40).map(|i| (i as f64 * h).sin()).collect();
        let even: Vec<f64> = (0..=40).map(|i| (i as f64 * h).cos()).collect();
        assert!((first_derivative_at(&odd, h, 0, Parity::Odd) - 1.0).abs() < 1e-6);
        assert!(second_derivative_at(&odd, h, 0, Parity::Odd).abs() < 1e-14);
        assert!((second_derivative_at(&even, h, 1, Parity::Even) + h.cos()).abs() < 1e-6);
        assert!((third_derivative_at_pole_odd(&odd, h) + 1.0).abs() < 1e-6);
    }

    #[test]
    fn midpoint_interpolation_is_cubic_exact() {
        let h = 0.2;
        let c = |r: f64| 2.0 + r - r * r + 0.25 * r.powi(3);
        let v: Vec<f64> = (0..=10).map(|i| c(i as f64 * h)).collect();
        let m = midpoints(&v, Parity::None);
        for (i, x) in m.iter().enumerate() {
            assert!((x - c((i as f64 + 0.5) * h)).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_areas() {
        assert!((unit_sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((unit_sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((unit_sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn corrected_trapezoid_is_fourth_order() {
        let err = |n: usize| {
            let h = 2.0 / n as f64;
            let a: Vec<f64> = (0..=n).map(|i| (i as f64 * h).exp()).collect();
            let c = cumulative_trapezoid(&a, h, Some(&a));
            (c[n] - (2f64.exp() - 1.0)).abs()
        };
        let order = (err(20) / err(40)).log2();
        assert!(order > 3.8, "order {order}");
    }

    #[test]
    fn slope_fit() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
