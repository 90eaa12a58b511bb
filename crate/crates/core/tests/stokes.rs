use std::f64::consts::PI;
use std::sync::Arc;

use diskflow::dynbc_heat::{mass, DynBCParams};
use diskflow::elliptic::{z_transform, z_transform_k, Sign, StreamPair};
use diskflow::fields::{added_mass_pairing, field_norm, fluid_norm, ModeDecomposition, RigidState};
use diskflow::radial_grid::{build_grid, PhysicalParams, RadialGrid};
use diskflow::stokes::*;

fn grid(n: usize, r_max: f64, stretch: f64) -> Arc<RadialGrid> {
    Arc::new(build_grid(n, r_max, stretch).unwrap())
}

fn bump(r: f64, c: f64, w: f64) -> f64 {
    (-((r - c) / w).powi(2)).exp()
}

/// Compact data on modes 0, 1 and 3 with `ℓ₀ = (l1, l2)`, `ω₀ = om`.
fn compact_data(g: &Arc<RadialGrid>, l1: f64, l2: f64, om: f64, k_max: usize) -> ModeDecomposition {
    let mut d = ModeDecomposition::zeros(g.clone(), k_max);
    for (i, &r) in g.nodes.iter().enumerate() {
        d.w[i] = om * r * bump(r, 1.0, 1.0);
        d.psi[i] = l2 * r * bump(r, 1.0, 0.5);
        d.phi[i] = -l1 * r * bump(r, 1.0, 0.5);
        if k_max >= 3 {
            d.higher[1][0][i] = (r - 1.0).powi(2) * bump(r, 2.5, 0.8);
        }
    }
    d.sync_rigid();
    d
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn params(m: f64) -> PhysicalParams {
    PhysicalParams::homogeneous(1.0, m).unwrap()
}

fn consistency_error(s: &StokesState) -> f64 {
    let g = &s.decomp.grid;
    let zp = z_transform(&StreamPair::new(s.decomp.psi.clone()), g, Sign::Plus).unwrap();
    let zf = z_transform(&StreamPair::new(s.decomp.phi.clone()), g, Sign::Minus).unwrap();
    let scale = s.z_psi.y.iter().chain(&s.z_phi.y).fold(1e-300_f64, |m, v| m.max(v.abs()));
    max_diff(&zp.y, &s.z_psi.y).max(max_diff(&zf.y, &s.z_phi.y)) / scale
}

#[test]
fn zero_and_harmonic_initialization() {
    let g = grid(256, 20.0, 2.0);
    let s = init_stokes(&ModeDecomposition::zeros(g.clone(), 3), &params(2.0 * PI)).unwrap();
    assert!(s.z_psi.y.iter().chain(&s.z_phi.y).all(|v| *v == 0.0));
    assert_eq!(step_stokes(&s, 0.1).unwrap().decomp.max_abs(), 0.0);
    let mut d = ModeDecomposition::zeros(g.clone(), 1);
    d.phi = g.nodes.iter().map(|r| -1.0 / r).collect();
    d.sync_rigid();
    assert_eq!(d.rigid.ell, [1.0, 0.0]);
    let s = init_stokes(&d, &params(2.0 * PI)).unwrap();
    assert!(s.z_phi.y.iter().all(|v| v.abs() < 1e-12));
    assert_eq!(s.z_phi.ell, 2.0);
}

#[test]
fn consistency_invariant() {
    let g = grid(1024, 30.0, 2.0);
    let d = compact_data(&g, 0.7, -0.4, 0.5, 3);
    let s0 = init_stokes(&d, &params(2.0 * PI)).unwrap();
    assert!(consistency_error(&s0) <= 1e-10, "{}", consistency_error(&s0));
    assert_eq!(s0.z_psi.ell, 2.0 * d.rigid.ell[1]);
    assert_eq!(s0.z_phi.ell, 2.0 * d.rigid.ell[0]);
    let mut worst = 0.0_f64;
    evolve_stokes(&s0, 2.0, 0.05, &mut |s| {
        worst = worst.max(consistency_error(s));
        assert!((s.z_phi.ell - 2.0 * s.decomp.rigid.ell[0]).abs() < 1e-14);
        assert!((s.z_psi.ell - 2.0 * s.decomp.rigid.ell[1]).abs() < 1e-14);
        Ok(())
    })
    .unwrap();
    assert!(worst <= 1e-10, "{worst}");
}

#[test]
fn higher_mode_stays_decoupled() {
    let g = grid(512, 30.0, 2.0);
    let mut d = ModeDecomposition::zeros(g.clone(), 4);
    d.higher[1][1] = g.nodes.iter().map(|&r| (r - 1.0).powi(2) * bump(r, 3.0, 1.0)).collect();
    let s0 = init_stokes(&d, &params(2.0 * PI)).unwrap();
    let mut prev = field_norm(&s0.decomp, 2.0, 2.0).unwrap();
    evolve_stokes(&s0, 5.0, 0.05, &mut |s| {
        let d = &s.decomp;
        let leak = d.w.iter().chain(&d.psi).chain(&d.phi).chain(&d.higher[0][0]).chain(&d.higher[0][1]).chain(&d.higher[1][0]).chain(&d.higher[2][0]).chain(&d.higher[2][1]);
        assert!(leak.fold(0.0_f64, |m, v| m.max(v.abs())) <= 1e-14);
        let now = field_norm(d, 2.0, 2.0).unwrap();
        assert!(now <= prev * (1.0 + 1e-9), "{now} > {prev}");
        prev = now;
        Ok(())
    })
    .unwrap();
}

#[test]
fn semigroup_property() {
    let g = grid(512, 30.0, 2.0);
    let s0 = init_stokes(&compact_data(&g, 1.0, 0.3, -0.6, 3), &params(2.0 * PI)).unwrap();
    let once = evolve_stokes(&s0, 3.0, 0.05, &mut |_| Ok(())).unwrap();
    let mid = evolve_stokes(&s0, 1.0, 0.05, &mut |_| Ok(())).unwrap();
    let twice = evolve_stokes(&mid, 3.0, 0.05, &mut |_| Ok(())).unwrap();
    for (a, b) in once.decomp.profiles().iter().zip(twice.decomp.profiles()) {
        assert!(max_diff(a, b) <= 1e-10);
    }
    assert!((once.t - twice.t).abs() < 1e-12);
}

#[test]
fn energy_nonincreasing_and_invariants_along_run() {
    let g = grid(1024, 40.0, 2.0);
    let p = params(2.0 * PI);
    let s0 = init_stokes(&compact_data(&g, 1.0, -0.5, 0.8, 3), &p).unwrap();
    let zp = DynBCParams::dynamic(0, p.alpha0, 1.0).unwrap();
    let (m_phi, m_psi) = (mass(&s0.z_phi, &zp, &g).unwrap(), mass(&s0.z_psi, &zp, &g).unwrap());
    let mut prev = field_norm(&s0.decomp, 2.0, p.m / PI).unwrap();
    evolve_stokes(&s0, 10.0, 0.05, &mut |s| {
        let now = field_norm(&s.decomp, 2.0, p.m / PI).unwrap();
        assert!(now <= prev * (1.0 + 1e-9));
        prev = now;
        assert!((mass(&s.z_phi, &zp, &g).unwrap() - m_phi).abs() <= 1e-12 * m_phi.abs().max(1.0), "{} {} t={}", mass(&s.z_phi, &zp, &g).unwrap(), m_phi, s.t);
        assert!((mass(&s.z_psi, &zp, &g).unwrap() - m_psi).abs() <= 1e-12 * m_psi.abs().max(1.0));
        let l1 = s.decomp.rigid.ell[0];
        assert!((added_mass_pairing(&s.decomp) + PI * l1).abs() <= 1e-8 * l1.abs().max(1e-300));
        Ok(())
    })
    .unwrap();
}

#[test]
fn viscosity_rescaling() {
    let g = grid(512, 30.0, 2.0);
    let d = compact_data(&g, 0.5, 0.5, 0.5, 3);
    let a = evolve_stokes(&init_stokes(&d, &PhysicalParams::homogeneous(2.0, 2.0 * PI).unwrap()).unwrap(), 1.0, 0.05, &mut |_| Ok(())).unwrap();
    let b = evolve_stokes(&init_stokes(&d, &params(2.0 * PI)).unwrap(), 2.0, 0.1, &mut |_| Ok(())).unwrap();
    for (x, y) in a.decomp.profiles().iter().zip(b.decomp.profiles()) {
        assert!(max_diff(x, y) <= 1e-13);
    }
}

#[test]
fn lamb_oseen_profiles() {
    let g = build_grid(4096, 400.0, 3.0).unwrap();
    let zero = lamb_oseen_profile(&g, 3.0, 1.0, [0.0, 0.0]).unwrap();
    assert_eq!(zero.max_abs(), 0.0);
    assert!(lamb_oseen_profile(&g, 0.0, 1.0, [1.0, 0.0]).is_err());
    let u = lamb_oseen_profile(&g, 2.0, 1.0, [PI, 0.0]).unwrap();
    for (i, &r) in g.nodes.iter().enumerate().step_by(97) {
        let psi_t = (1.0 - (-r * r / 8.0).exp()) / (2.0 * PI * r);
        assert!((u.phi[i] + PI * psi_t).abs() < 1e-15 && u.psi[i] == 0.0);
    }
    for p in [2.0, 4.0] {
        let scaled = |t: f64| t.powf(1.0 - 1.0 / p) * fluid_norm(&lamb_oseen_profile(&g, t, 1.0, [1.0, 0.0]).unwrap(), p).unwrap();
        let (a, b, c) = (scaled(25.0), scaled(100.0), scaled(400.0));
        assert!(a <= b && b <= c, "p={p}: {a} {b} {c}");
        assert!((b / c - 1.0).abs() <= 0.05, "p={p}: {b} {c}");
    }
    // ψ̃ − ψ̂ is a pure dipole of size O(t⁻²)
    let gap = |t: f64| {
        let a = lamb_oseen_profile(&g, t, 1.0, [1.0, 0.0]).unwrap();
        let b = lamb_oseen_corrected_profile(&g, t, 1.0, [1.0, 0.0]).unwrap();
        t * t * fluid_norm(&a.difference(&b), 2.0).unwrap()
    };
    let (g10, g40) = (gap(10.0), gap(40.0));
    assert!(g10.is_finite() && (g40 / g10 - 1.0).abs() < 0.1, "{g10} {g40}");
    let s: f64 = 4.0 * 3.0;
    let hat = lamb_oseen_corrected_profile(&g, 3.0, 1.0, [0.0, 1.0]).unwrap();
    let r = g.nodes[100];
    assert!((hat.psi[100] - ((-1.0 / s).exp() - (-r * r / s).exp() + 1.0 / s) / (2.0 * PI * r)).abs() < 1e-16);
}

#[test]
fn pressure_recovery() {
    let g = grid(2048, 30.0, 2.0);
    let p = params(2.0 * PI);
    let s0 = init_stokes(&ModeDecomposition::zeros(g.clone(), 1), &p).unwrap();
    assert_eq!(recover_mode1_pressure(&step_stokes(&s0, 0.1).unwrap()), (0.0, 0.0));
    // steady harmonic translation with the disk held: z vanishes in the fluid and ℓ' = 0
    let s = init_stokes(&compact_data(&g, 1.0, 0.6, 0.0, 1), &p).unwrap();
    let s = evolve_stokes(&s, 2.0, 0.002, &mut |_| Ok(())).unwrap();
    let (first, second) = pressure_both_ways(&s);
    for c in 0..2 {
        let scale = first[c].abs().max(second[c].abs());
        assert!(scale > 0.0);
        assert!((first[c] - second[c]).abs() <= 1e-6 * scale, "channel {c}: {} vs {}", first[c], second[c]);
    }
    assert_eq!(recover_mode1_pressure(&s), (first[0], first[1]));
}

#[test]
fn trajectory_reconstruction() {
    let dt = 0.01;
    let series: Vec<RigidState> = (0..=500).map(|_| RigidState { ell: [1.0, 0.0], omega: 2.0, ..Default::default() }).collect();
    let out = reconstruct_trajectory(&series, dt);
    for (j, s) in out.iter().enumerate() {
        let t = j as f64 * dt;
        assert!((s.h[0] - t).abs() < 1e-12 && s.h[1] == 0.0 && (s.theta - 2.0 * t).abs() < 1e-12);
    }
    // ℓ = 𝓜/(8πt) for t ≥ 1: the disk drifts like log t
    let m = PI;
    let series: Vec<RigidState> = (0..=99_000).map(|j| {
        let t = 1.0 + j as f64 * 1e-3;
        RigidState { ell: [m / (8.0 * PI * t), 0.0], ..Default::default() }
    }).collect();
    let out = reconstruct_trajectory(&series, 1e-3);
    let h_end = out.last().unwrap().h[0];
    assert!((h_end - m / (8.0 * PI) * 100f64.ln()).abs() < 1e-6);
}

#[test]
fn momenta() {
    let g = grid(4096, 30.0, 2.0);
    let d = compact_data(&g, 1.0, 0.0, 0.0, 1);
    let mm = asymptotic_momenta(&init_stokes(&d, &params(2.0 * PI)).unwrap()).unwrap();
    assert!((mm.m_vec[0] - PI).abs() < 1e-15 && mm.m_vec[1] == 0.0);
    assert!((mm.m_phi - PI).abs() <= 1e-6 * PI, "{}", mm.m_phi);
    assert!(mm.m_psi.abs() <= 1e-10);
    let neutral = asymptotic_momenta(&init_stokes(&compact_data(&g, 0.8, -0.3, 0.0, 1), &params(PI)).unwrap()).unwrap();
    assert_eq!(neutral.m_vec, [0.0, 0.0]);
    assert!(neutral.m_phi.abs() < 1e-6 && neutral.m_psi.abs() < 1e-6);
    let still = asymptotic_momenta(&init_stokes(&compact_data(&g, 0.0, 0.0, 0.4, 3), &params(5.0)).unwrap()).unwrap();
    assert_eq!(still.m_vec, [0.0, 0.0]);
    let mixed = asymptotic_momenta(&init_stokes(&compact_data(&g, 0.3, -0.7, 0.0, 1), &params(3.0 * PI)).unwrap()).unwrap();
    assert!((mixed.m_phi - 2.0 * PI * 0.3).abs() < 1e-6 && (mixed.m_psi + 2.0 * PI * 0.7).abs() < 1e-6);
}

#[test]
fn higher_mode_transform_is_dirichlet() {
    let g = grid(256, 20.0, 2.0);
    let psi: Vec<f64> = g.nodes.iter().map(|&r| (r - 1.0).powi(2) * bump(r, 2.0, 1.0)).collect();
    let mut d = ModeDecomposition::zeros(g.clone(), 3);
    d.higher[1][0] = psi.clone();
    let s = init_stokes(&d, &params(2.0 * PI)).unwrap();
    assert_eq!(s.z_higher[1][0][0], 0.0);
    assert_eq!(s.z_higher[1][0], z_transform_k(&psi, &g, 3).unwrap());
}

#[test]
fn geometric_schedule() {
    let t = geometric_times(10.0, 100.0, SAMPLE_RATIO).unwrap();
    assert_eq!(t[0], 10.0);
    assert_eq!(*t.last().unwrap(), 100.0);
    assert_eq!(t.len(), 15);
    assert!(geometric_times(0.0, 1.0, 2.0).is_err());
}
