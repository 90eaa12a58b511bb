use std::f64::consts::PI;

use diskflow::dynbc_heat::*;
use diskflow::radial_grid::{build_grid, RadialGrid};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(g: &RadialGrid, seed: u64, smooth: bool) -> ScalarModeState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<f64> = if smooth {
        let (c, w, a) = (rng.gen_range(1.5..6.0), rng.gen_range(0.3..2.0), rng.gen_range(-2.0..2.0));
        g.nodes.iter().map(|r| a * (-((r - c) / w).powi(2)).exp()).collect()
    } else {
        // compact support keeps the far-field flux negligible
        g.nodes.iter().map(|&r| if r < 10.0 { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect()
    };
    let ell = if smooth { y[0] } else { rng.gen_range(-1.0..1.0) };
    ScalarModeState { y, ell, t: 0.0 }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn unit_kick_self_similar_boundary() {
    let g = build_grid(2048, 120.0, 3.0).unwrap();
    let p = DynBCParams::dynamic(0, 2.0, 1.0).unwrap();
    let mut s0 = ScalarModeState::zeros(g.n_points);
    s0.ell = 1.0;
    let m = mass(&s0, &p, &g).unwrap();
    assert!((m - PI).abs() < 1e-15);
    let s = evolve(&g, &s0, &p, 100.0, 0.05, &mut |_| Ok(())).unwrap();
    let ratio = 4.0 * PI * 100.0 * s.ell / m;
    assert!((ratio - 1.0).abs() <= 0.1, "ratio {ratio}");
}

#[test]
fn evolve_zero_steps_is_identity() {
    let g = build_grid(64, 10.0, 1.0).unwrap();
    let p = DynBCParams::dynamic(0, 1.0, 1.0).unwrap();
    let s0 = random_state(&g, 3, true);
    let mut calls = 0;
    let s = evolve(&g, &s0, &p, 0.0, 0.1, &mut |_| {
        calls += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(s, s0);
    assert_eq!(calls, 0);
}

#[test]
fn l2_nonincreasing_along_evolution() {
    let g = build_grid(512, 40.0, 2.0).unwrap();
    for (k, alpha) in [(0u32, 1.3), (1, 2.0)] {
        let p = DynBCParams::dynamic(k, alpha, 1.0).unwrap();
        let s0 = random_state(&g, 11 + k as u64, true);
        let mut prev = lp_functional(&g, &s0, &p, 2.0);
        evolve(&g, &s0, &p, 20.0, 0.05, &mut |s| {
            let v = lp_functional(&g, s, &p, 2.0);
            assert!(v <= prev * (1.0 + 1e-12));
            prev = v;
            Ok(())
        })
        .unwrap();
    }
}

#[test]
fn w_system_boundary_decay_rate() {
    let g = build_grid(2048, 120.0, 3.0).unwrap();
    let p = DynBCParams::dynamic(1, 2.0, 1.0).unwrap();
    let y: Vec<f64> = g.nodes.iter().map(|r| r * (-(r - 1.0) * (r - 1.0)).exp()).collect();
    let s0 = ScalarModeState::from_profile(y, 0.0);
    let mut series = Vec::new();
    let mut s = s0;
    let mut t = 10.0;
    s = evolve(&g, &s, &p, t, 0.02, &mut |_| Ok(())).unwrap();
    series.push((t, s.ell.abs()));
    while t < 100.0 - 1e-9 {
        t = (t * 2f64.powf(0.25)).min(100.0);
        s = evolve(&g, &s, &p, t, (0.02 * s.t).max(0.02), &mut |_| Ok(())).unwrap();
        series.push((t, s.ell.abs()));
    }
    let fit = diskflow::analysis::fit_decay(&series, (10.0, 100.0), false).unwrap();
    assert!((fit.exponent + 2.0).abs() <= 0.2, "{}", fit.exponent);
}

#[test]
fn self_similar_attraction() {
    let g = build_grid(2048, 120.0, 3.0).unwrap();
    let p = DynBCParams::dynamic(0, 4.0 * PI / (3.0 * PI), 1.0).unwrap();
    let y: Vec<f64> = g.nodes.iter().map(|r| (-(r - 2.0) * (r - 2.0)).exp()).collect();
    let s0 = ScalarModeState::from_profile(y, 0.0);
    let m = mass(&s0, &p, &g).unwrap();
    let l1_dist = |s: &ScalarModeState| {
        let gauss = gaussian_profile(&g, s.t, 1.0).unwrap();
        let d: Vec<f64> = s.y.iter().zip(&gauss).map(|(a, b)| (a - m * b).abs()).collect();
        2.0 * PI * g.integrate(&d)
    };
    let s10 = evolve(&g, &s0, &p, 10.0, 0.02, &mut |_| Ok(())).unwrap();
    let s100 = evolve(&g, &s10, &p, 100.0, 0.1, &mut |_| Ok(())).unwrap();
    assert!(l1_dist(&s100) <= 0.5 * l1_dist(&s10), "{} {}", l1_dist(&s100), l1_dist(&s10));
}

#[test]
fn gaussian_profile_facts() {
    let g = build_grid(8192, 60.0, 2.0).unwrap();
    let v = gaussian_profile(&g, 5.0, 1.0).unwrap();
    assert!((v[0] - (-1.0f64 / 20.0).exp() / (20.0 * PI)).abs() < 1e-16);
    // plane integral: the disk contributes ∫₀¹ G r dr in closed form
    let inner = (1.0 - (-1.0f64 / 20.0).exp()) / (2.0 * PI);
    let total = 2.0 * PI * (g.integrate(&v) + inner);
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn gaussian_point_value_and_zero_state() {
    let g = RadialGrid::from_nodes(vec![1.0, 5.0, 10.0, 20.0], 1.0).unwrap();
    let v = gaussian_profile(&g, 25.0, 1.0).unwrap();
    assert!((v[2] - (-1.0f64).exp() / (100.0 * PI)).abs() < 1e-18);
    assert!((v[2] - 1.1709e-3).abs() < 1e-7);
    assert!(gaussian_profile(&g, 0.0, 1.0).is_err());
    let g = build_grid(64, 10.0, 1.0).unwrap();
    let p = DynBCParams::dynamic(0, 1.0, 1.0).unwrap();
    let z = step(&g, &ScalarModeState::zeros(64), &p, 0.3).unwrap();
    assert!(z.y.iter().all(|v| *v == 0.0) && z.ell == 0.0);
}

#[test]
fn gaussian_mass_against_quadrature_oracle() {
    let g = build_grid(4096, 30.0, 2.0).unwrap();
    let p = DynBCParams::dynamic(0, 1.0, 1.0).unwrap();
    let f = |r: f64| (-(r - 3.0) * (r - 3.0)).exp();
    let s = ScalarModeState { y: g.nodes.iter().map(|&r| f(r)).collect(), ell: 0.0, t: 0.0 };
    let oracle = 2.0 * PI * simpson(|r| f(r) * r, 1.0, 30.0, 400_000);
    let m = mass(&s, &p, &g).unwrap();
    assert!((m - oracle).abs() / oracle < 1e-6, "{m} {oracle}");
}

#[test]
fn neutral_mass_matches_ball_formula() {
    // m = π gives α̃ = 2, so the ball term is (2π/α̃)ℓ = πℓ = (π + m)ℓ/2
    let g = build_grid(64, 10.0, 1.0).unwrap();
    let alpha = 4.0 * PI / (PI + PI);
    let p = DynBCParams::dynamic(0, alpha, 1.0).unwrap();
    let mut s = ScalarModeState::zeros(64);
    s.ell = 0.7;
    assert!((mass(&s, &p, &g).unwrap() - (PI + PI) * 0.7 / 2.0).abs() < 1e-14);
}

// Exact-in-time propagation of the same semi-discrete Dirichlet system, with its
// matrices assembled here from the finite-volume formulas.
fn dirichlet_oracle(g: &RadialGrid, k: u32, y0: &[f64], t: f64) -> Vec<f64> {
    let n = g.n_points;
    let m = n - 2;
    let mut mass: DVector<f64> = DVector::zeros(m);
    let mut stiff: DMatrix<f64> = DMatrix::zeros(m, m);
    for u in 0..m {
        let i = u + 1;
        let (hl, hr) = (g.nodes[i] - g.nodes[i - 1], g.nodes[i + 1] - g.nodes[i]);
        mass[u] = g.nodes[i] * (hl + hr) / 2.0;
        let (a, b, c) = (g.nodes[i - 1], g.nodes[i], g.nodes[i + 1]);
        let hat_over_r = simpson(|r| (r - a) / (b - a) / r, a, b, 200) + simpson(|r| (c - r) / (c - b) / r, b, c, 200);
        stiff[(u, u)] += (k * k) as f64 * hat_over_r;
    }
    for j in 0..n - 1 {
        let kappa = 0.5 * (g.nodes[j] + g.nodes[j + 1]) / (g.nodes[j + 1] - g.nodes[j]);
        let (a, b) = (j as isize - 1, j as isize);
        if a >= 0 && (a as usize) < m {
            stiff[(a as usize, a as usize)] += kappa;
        }
        if b >= 0 && (b as usize) < m {
            stiff[(b as usize, b as usize)] += kappa;
        }
        if a >= 0 && (b as usize) < m {
            stiff[(a as usize, b as usize)] -= kappa;
            stiff[(b as usize, a as usize)] -= kappa;
        }
    }
    let s = DMatrix::from_fn(m, m, |i, j| stiff[(i, j)] / (mass[i] * mass[j]).sqrt());
    let eig = SymmetricEigen::new(s);
    let x0: DVector<f64> = DVector::from_fn(m, |i, _| y0[i + 1] * mass[i].sqrt());
    let coeff: DVector<f64> = eig.eigenvectors.transpose() * x0;
    let decayed: DVector<f64> = DVector::from_fn(m, |i, _| coeff[i] * (-eig.eigenvalues[i] * t).exp());
    let x = &eig.eigenvectors * decayed;
    let mut y = vec![0.0_f64; n];
    for i in 0..m {
        y[i + 1] = x[i] / mass[i].sqrt();
    }
    y
}

#[test]
fn dirichlet_matches_dense_exponential() {
    let g = build_grid(24, 5.0, 1.0).unwrap();
    for k in [1u32, 2, 4] {
        let p = DynBCParams::dirichlet(k, 1.0).unwrap();
        let y0: Vec<f64> = g.nodes.iter().map(|r| (r - 1.0) * (5.0 - r) * (-(r - 2.0) * (r - 2.0)).exp()).collect();
        let mut s = ScalarModeState { y: y0.clone(), ell: 0.0, t: 0.0 };
        let dt = 5e-5;
        for _ in 0..1000 {
            s = step(&g, &s, &p, dt).unwrap();
        }
        let oracle = dirichlet_oracle(&g, k, &y0, 0.05);
        let scale = oracle.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let err = s.y.iter().zip(&oracle).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(err <= 1e-8 * scale.max(1.0), "k={k} err {err:.3e}");
    }
}

// v = y/r for k = 1 solves the radial heat equation of R⁴, v_t = v_rr + 3v_r/r, with
// v(1) = ℓ and ℓ' = α̃ v_r(1). Discretized here by its own finite-volume scheme.
fn four_dim_solution(g: &RadialGrid, alpha: f64, v0: &[f64], t_end: f64, dt: f64) -> Vec<f64> {
    let n = g.n_points;
    let m = n - 1;
    let mut mass = vec![0.0; m];
    for i in 0..m {
        let hl = if i > 0 { g.nodes[i] - g.nodes[i - 1] } else { 0.0 };
        let hr = g.nodes[i + 1] - g.nodes[i];
        mass[i] = g.nodes[i].powi(3) * (hl + hr) / 2.0;
    }
    mass[0] += 1.0 / alpha;
    let kappa: Vec<f64> = (0..n - 1).map(|j| (0.5 * (g.nodes[j] + g.nodes[j + 1])).powi(3) / (g.nodes[j + 1] - g.nodes[j])).collect();
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let mut s = kappa[i] * (v[i] - if i + 1 < m { v[i + 1] } else { 0.0 });
                if i > 0 {
                    s += kappa[i - 1] * (v[i] - v[i - 1]);
                }
                s
            })
            .collect()
    };
    let mut v: Vec<f64> = v0[..m].to_vec();
    let steps = (t_end / dt).round() as usize;
    for j in 0..steps {
        let theta = if j < STARTUP_STEPS { 1.0 } else { 0.5 };
        let kv = apply(&v);
        let mut rhs: Vec<f64> = (0..m).map(|i| mass[i] * v[i] - (1.0 - theta) * dt * kv[i]).collect();
        // Thomas sweep for (M + θ dt K) v = rhs
        let diag: Vec<f64> = (0..m).map(|i| mass[i] + theta * dt * (kappa[i] + if i > 0 { kappa[i - 1] } else { 0.0 })).collect();
        let off: Vec<f64> = (0..m).map(|i| -theta * dt * kappa[i]).collect();
        let mut c = vec![0.0_f64; m];
        let mut d = diag.clone();
        for i in 1..m {
            let w = off[i - 1] / d[i - 1];
            d[i] -= w * off[i - 1];
            rhs[i] -= w * rhs[i - 1];
            c[i - 1] = off[i - 1];
        }
        v[m - 1] = rhs[m - 1] / d[m - 1];
        for i in (0..m - 1).rev() {
            v[i] = (rhs[i] - c[i] * v[i + 1]) / d[i];
        }
    }
    v.push(0.0);
    v
}

#[test]
fn change_of_dimension() {
    let g = build_grid(4096, 20.0, 1.0).unwrap();
    let alpha = 2.0;
    let p = DynBCParams::dynamic(1, alpha, 1.0).unwrap();
    let v0: Vec<f64> = g.nodes.iter().map(|r| (-(r - 2.0) * (r - 2.0)).exp()).collect();
    let y0: Vec<f64> = v0.iter().zip(&g.nodes).map(|(v, r)| v * r).collect();
    let s = evolve(&g, &ScalarModeState::from_profile(y0, 0.0), &p, 1.0, 1e-3, &mut |_| Ok(())).unwrap();
    let v = four_dim_solution(&g, alpha, &v0, 1.0, 1e-3);
    let err = s.y.iter().zip(&g.nodes).zip(&v).fold(0.0_f64, |a, ((y, r), v)| a.max((y / r - v).abs()));
    assert!(err <= 1e-4, "err {err:.3e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_invariant_under_step(seed in any::<u64>(), alpha in 0.2f64..5.0, dt in 1e-4f64..5.0, smooth in any::<bool>()) {
        let g = build_grid(256, 80.0, 2.0).unwrap();
        let p = DynBCParams::dynamic(0, alpha, 1.0).unwrap();
        let s = random_state(&g, seed, smooth);
        let m0 = mass(&s, &p, &g).unwrap();
        let s1 = step(&g, &s, &p, dt).unwrap();
        let scale = 2.0 * PI * (g.integrate_cells(&s.y.iter().map(|v| v.abs()).collect::<Vec<_>>()) + s.ell.abs() / alpha);
        prop_assert!((mass(&s1, &p, &g).unwrap() - m0).abs() <= 1e-12 * scale);
        prop_assert!((s1.y[0] - s1.ell).abs() <= 1e-12);
    }

    #[test]
    fn lyapunov_functionals_decrease(seed in any::<u64>(), alpha in 0.2f64..5.0, k in 0u32..2) {
        let g = build_grid(128, 30.0, 2.0).unwrap();
        let p = DynBCParams::dynamic(k, alpha, 1.0).unwrap();
        let mut s = random_state(&g, seed, true);
        for j in 0..40 {
            let next = step(&g, &s, &startup_params(&p, j), 0.05).unwrap();
            for q in [1.0, 2.0, 4.0, 8.0] {
                let (a, b) = (lp_functional(&g, &s, &p, q), lp_functional(&g, &next, &p, q));
                prop_assert!(b <= a * (1.0 + 1e-10), "p={} {} -> {}", q, a, b);
            }
            s = next;
        }
    }

    #[test]
    fn maximum_principle(seed in any::<u64>(), alpha in 0.2f64..5.0) {
        let g = build_grid(128, 30.0, 2.0).unwrap();
        let p = DynBCParams::dynamic(0, alpha, 1.0).unwrap();
        let s0 = random_state(&g, seed, true);
        let hi = s0.y.iter().fold(s0.ell.max(0.0), |a, v| a.max(*v));
        let lo = s0.y.iter().fold(s0.ell.min(0.0), |a, v| a.min(*v));
        evolve(&g, &s0, &p, 5.0, 0.05, &mut |s| {
            for v in s.y.iter().chain(std::iter::once(&s.ell)) {
                assert!(*v <= hi + 1e-10 && *v >= lo - 1e-10);
            }
            Ok(())
        }).unwrap();
    }
}
