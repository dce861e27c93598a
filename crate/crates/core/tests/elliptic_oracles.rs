use proptest::prelude::*;
use yamabe_core::elliptic::{
    doubling_schedule, exhaust_poisson, property_m_solution, scalar_curvature_of_conformal, solve_dirichlet_ball,
    yamabe_zero_metric_m,
};
use yamabe_core::{build_profile, GridFunction, Profile, ProfileSpec};

/// Linear shooting for `-c (v'' + 2 v'/r) + q v = s` on `[0, R]`, `v'(0) = 0`,
/// `v(R) = 0`, with RK4 at step `h`. Returns samples every `stride` steps.
fn shoot(q: impl Fn(f64) -> f64, s: impl Fn(f64) -> f64, radius: f64, h: f64, stride: usize) -> Vec<f64> {
    let c = 8.0;
    let steps = (radius / h).round() as usize;
    let rhs = |r: f64, y: [f64; 4]| -> [f64; 4] {
        // y = [particular, particular', homogeneous, homogeneous']
        if r == 0.0 {
            [y[1], (q(0.0) * y[0] - s(0.0)) / (3.0 * c), y[3], q(0.0) * y[2] / (3.0 * c)]
        } else {
            [y[1], -2.0 * y[1] / r + (q(r) * y[0] - s(r)) / c, y[3], -2.0 * y[3] / r + q(r) * y[2] / c]
        }
    };
    let mut y = [0.0, 0.0, 1.0, 0.0];
    let mut samples = vec![y];
    for k in 0..steps {
        let r = k as f64 * h;
        let add =
            |a: [f64; 4], b: [f64; 4], t: f64| [a[0] + t * b[0], a[1] + t * b[1], a[2] + t * b[2], a[3] + t * b[3]];
        let k1 = rhs(r, y);
        let k2 = rhs(r + h / 2.0, add(y, k1, h / 2.0));
        let k3 = rhs(r + h / 2.0, add(y, k2, h / 2.0));
        let k4 = rhs(r + h, add(y, k3, h));
        for j in 0..4 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if (k + 1) % stride == 0 {
            samples.push(y);
        }
    }
    let end = samples.last().unwrap();
    let shift = -end[0] / end[2];
    samples.iter().map(|y| y[0] + shift * y[2]).collect()
}

#[test]
fn shooting_oracle_reproduces_closed_form() {
    // -8 Δv = 1 on B_2: v = (4 - r²)/48
    let v = shoot(|_| 0.0, |_| 1.0, 2.0, 0.001, 10);
    for (i, x) in v.iter().enumerate() {
        let r = i as f64 * 0.01;
        assert!((x - (4.0 - r * r) / 48.0).abs() < 1e-12);
    }
}

#[test]
fn exhaustion_limit_matches_shooting() {
    let h = 0.01;
    let cells = 3200;
    let r0: Vec<f64> = (0..=cells).map(|i| (-(i as f64 * h).powi(2)).exp()).collect();
    let model = build_profile(&ProfileSpec::new(Profile::Euclidean, 3, h, cells).with_potential(r0)).unwrap();
    let pm = property_m_solution(&model, &doubling_schedule(4.0, 32.0), 1e-6, 0.05).unwrap();
    let oracle = shoot(|r| (-r * r).exp(), |r| (-r * r).exp(), 32.0, h / 16.0, 16);
    let err = (0..=cells).map(|i| (pm.v[i] - oracle[i]).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-5, "{err}");
    let zm = yamabe_zero_metric_m(&model, &pm.v, 32.0).unwrap();
    assert!(zm.min_w > 0.0 && zm.residual <= 1e-8);
    let rg = scalar_curvature_of_conformal(&model, &zm.w).unwrap();
    assert!(rg.sup_norm_on(0..cells) <= 1e-6);
}

#[test]
fn finite_difference_solution_converges_at_second_order() {
    let solve = |h: f64| {
        let cells = (8.0 / h).round() as usize;
        let r0: Vec<f64> = (0..=cells).map(|i| (-(i as f64 * h).powi(2)).exp()).collect();
        let m = build_profile(&ProfileSpec::new(Profile::Euclidean, 3, h, cells).with_potential(r0.clone())).unwrap();
        solve_dirichlet_ball(&m, &GridFunction(r0), 8.0, 0.0).unwrap()
    };
    let oracle = shoot(|r| (-r * r).exp(), |r| (-r * r).exp(), 8.0, 0.0025, 4);
    let err = |v: &GridFunction, step: usize| (0..v.len()).map(|i| (v[i] - oracle[i * step]).abs()).fold(0.0, f64::max);
    let (coarse, fine) = (solve(0.04), solve(0.02));
    let order = (err(&coarse, 4) / err(&fine, 2)).log2();
    assert!(order > 1.9, "order {order}");
}

fn random_problem(
    seed: [f64; 6],
    n: u32,
    cells: usize,
    profile: u8,
) -> (yamabe_core::ManifoldModel, GridFunction, f64) {
    let h = 0.02 + 0.08 * seed[0];
    let profile = match profile {
        0 => Profile::Euclidean,
        1 => Profile::Cylinder,
        _ => Profile::Euclidean,
    };
    let (a, w, c) = (5.0 * seed[1], 0.2 + 3.0 * seed[2], seed[3] * h * cells as f64);
    let r0: Vec<f64> = (0..=cells).map(|i| a * (-((i as f64 * h - c) / w).powi(2)).exp()).collect();
    let rhs: Vec<f64> =
        (0..=cells).map(|i| if (i as f64 * h) < seed[4] * h * cells as f64 { 1.0 + seed[5] } else { 0.0 }).collect();
    let m = build_profile(&ProfileSpec::new(profile, n, h, cells).with_potential(r0)).unwrap();
    (m, GridFunction(rhs), seed[5])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maximum_principle(seed in prop::array::uniform6(0.0f64..1.0), n in 3u32..7, cells in 16usize..200, profile in 0u8..2) {
        let (m, rhs, boundary) = random_problem(seed, n, cells, profile);
        let radius = m.grid().extent();
        let u = solve_dirichlet_ball(&m, &rhs, radius, boundary).unwrap();
        prop_assert!(u.iter().all(|&x| x >= -1e-12));
    }

    #[test]
    fn comparison_of_right_hand_sides(seed in prop::array::uniform6(0.0f64..1.0), bump in 0.0f64..2.0) {
        let (m, rhs, _) = random_problem(seed, 3, 120, 0);
        let radius = m.grid().extent();
        let bigger = GridFunction(rhs.iter().enumerate().map(|(i, x)| x + bump * (-(i as f64) / 40.0).exp()).collect());
        let a = solve_dirichlet_ball(&m, &rhs, radius, 0.0).unwrap();
        let b = solve_dirichlet_ball(&m, &bigger, radius, 0.0).unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| *x <= y + 1e-12));
    }

    #[test]
    fn exhaustion_stages_increase(seed in prop::array::uniform6(0.0f64..1.0)) {
        let (m, rhs, _) = random_problem(seed, 3, 160, 1);
        let extent = m.grid().extent();
        let h = m.grid().h();
        let radii: Vec<f64> = [0.25, 0.5, 1.0].iter().map(|f| ((f * extent / h).round().max(1.0)) * h).collect();
        let res = exhaust_poisson(&m, &rhs, &radii, 0.0).unwrap();
        for pair in res.stages.windows(2) {
            prop_assert!(pair[0].iter().zip(pair[1].iter()).all(|(a, b)| *a <= b + 1e-12));
        }
    }
}
