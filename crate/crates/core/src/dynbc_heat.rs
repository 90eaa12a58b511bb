//! Radial heat equations with a dynamic boundary condition,
//! `y_t = ν((1/r)(r y')' − k² y/r²)`, `y(1) = ℓ`, `ℓ' = α̃ ν (y'(1) − k y(1))`,
//! and the homogeneous Dirichlet variant used by the higher angular modes.
//!
//! The spatial operator is a vertex-centred finite-volume scheme with the control-volume
//! weights of the grid (trapezoid on `r y`). Node 0 carries the boundary unknown with mass
//! `c_0 + 1/α̃`, so the flux seen by `ℓ` is the flux leaving the first cell and the discrete
//! mass `2π Σ c_i y_i + (2π/α̃) ℓ` telescopes exactly for `k = 0`.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;
use crate::output::sci;
use crate::radial_grid::RadialGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Dynamic,
    Dirichlet,
}

/// θ-method selector. Crank–Nicolson is the default.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scheme {
    CrankNicolson,
    ImplicitEuler,
}

impl Scheme {
    pub fn theta(self) -> f64 {
        match self {
            Scheme::CrankNicolson => 0.5,
            Scheme::ImplicitEuler => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynBCParams {
    pub k: u32,
    pub alpha_tilde: f64,
    pub nu: f64,
    pub variant: Variant,
    pub scheme: Scheme,
}

impl DynBCParams {
    pub fn dynamic(k: u32, alpha_tilde: f64, nu: f64) -> Result<Self> {
        let p = Self { k, alpha_tilde, nu, variant: Variant::Dynamic, scheme: Scheme::CrankNicolson };
        p.validate()?;
        Ok(p)
    }

    /// Dirichlet variant; `k` is the index entering `k²/r²` (mode `k + 1` of the remainder).
    pub fn dirichlet(k: u32, nu: f64) -> Result<Self> {
        let p = Self { k, alpha_tilde: 1.0, nu, variant: Variant::Dirichlet, scheme: Scheme::CrankNicolson };
        p.validate()?;
        Ok(p)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) {
            return Err(Error::InvalidArgument(format!("nu must be positive, got {}", self.nu)));
        }
        match self.variant {
            Variant::Dynamic => {
                if self.k > 1 {
                    return Err(Error::UnsupportedVariant(format!("dynamic boundary needs k in {{0,1}}, got {}", self.k)));
                }
                if !(self.alpha_tilde > 0.0) {
                    return Err(Error::InvalidArgument(format!("alpha_tilde must be positive, got {}", self.alpha_tilde)));
                }
            }
            Variant::Dirichlet => {
                if self.k < 1 {
                    return Err(Error::UnsupportedVariant("dirichlet variant needs k >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Radial profile on the fluid grid together with its boundary value.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarModeState {
    pub y: Vec<f64>,
    pub ell: f64,
    pub t: f64,
}

impl ScalarModeState {
    pub fn zeros(n: usize) -> Self {
        Self { y: vec![0.0; n], ell: 0.0, t: 0.0 }
    }

    /// State with a consistent trace `y[0] = ell`.
    pub fn from_profile(y: Vec<f64>, t: f64) -> Self {
        let ell = y[0];
        Self { y, ell, t }
    }
}

/// Explicit forcing added over one step: per-node values and the boundary ODE forcing.
#[derive(Clone, Debug, PartialEq)]
pub struct Source {
    pub y: Vec<f64>,
    pub ell: f64,
}

struct Assembled {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    mass: Vec<f64>,
    offset: usize,
}

/// Stiffness (tridiagonal, symmetric) and lumped mass restricted to the unknowns.
fn assemble(grid: &RadialGrid, params: &DynBCParams) -> Assembled {
    let n = grid.n_points;
    let offset = match params.variant {
        Variant::Dynamic => 0,
        Variant::Dirichlet => 1,
    };
    let m = n - 1 - offset;
    let nu = params.nu;
    let k2 = (params.k * params.k) as f64;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut mass = vec![0.0; m];
    for u in 0..m {
        let i = u + offset;
        mass[u] = grid.cell_weights[i];
        diag[u] = nu * k2 * grid.recip_weights[i];
    }
    for j in 0..n - 1 {
        let kappa = nu * 0.5 * (grid.nodes[j] + grid.nodes[j + 1]) / grid.h(j);
        let a = j as isize - offset as isize;
        let b = a + 1;
        if a >= 0 && (a as usize) < m {
            diag[a as usize] += kappa;
        }
        if b >= 0 && (b as usize) < m {
            diag[b as usize] += kappa;
        }
        if a >= 0 && (b as usize) < m {
            upper[a as usize] = -kappa;
            lower[b as usize] = -kappa;
        }
    }
    if params.variant == Variant::Dynamic {
        mass[0] += 1.0 / params.alpha_tilde;
        diag[0] += nu * params.k as f64;
    }
    Assembled { lower, diag, upper, mass, offset }
}

/// Applies the stiffness matrix to the unknown vector.
fn apply_stiffness(a: &Assembled, u: &[f64]) -> Vec<f64> {
    let m = u.len();
    (0..m)
        .map(|i| {
            let mut s = a.diag[i] * u[i];
            if i > 0 {
                s += a.lower[i] * u[i - 1];
            }
            if i + 1 < m {
                s += a.upper[i] * u[i + 1];
            }
            s
        })
        .collect()
}

/// Boundary value after merging a trace mismatch `y[0] ≠ ℓ` so that the mass is unchanged.
fn reconciled_trace(grid: &RadialGrid, state: &ScalarModeState, params: &DynBCParams) -> f64 {
    let w0 = grid.cell_weights[0];
    let ia = 1.0 / params.alpha_tilde;
    if state.y[0] == state.ell {
        state.ell
    } else {
        (w0 * state.y[0] + ia * state.ell) / (w0 + ia)
    }
}

/// One θ-method step.
pub fn step(grid: &RadialGrid, state: &ScalarModeState, params: &DynBCParams, dt: f64) -> Result<ScalarModeState> {
    step_with_source(grid, state, params, dt, None)
}

/// One θ-method step with an explicit source held constant over the step.
pub fn step_with_source(
    grid: &RadialGrid,
    state: &ScalarModeState,
    params: &DynBCParams,
    dt: f64,
    source: Option<&Source>,
) -> Result<ScalarModeState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if state.y.len() != grid.n_points {
        return Err(Error::GridMismatch);
    }
    params.validate()?;
    let theta = params.scheme.theta();
    let a = assemble(grid, params);
    let m = a.mass.len();
    let mut u: Vec<f64> = state.y[a.offset..a.offset + m].to_vec();
    if params.variant == Variant::Dynamic {
        u[0] = reconciled_trace(grid, state, params);
    }
    let ku = apply_stiffness(&a, &u);
    let mut rhs: Vec<f64> = (0..m).map(|i| a.mass[i] * u[i] - (1.0 - theta) * dt * ku[i]).collect();
    if let Some(s) = source {
        if s.y.len() != grid.n_points {
            return Err(Error::GridMismatch);
        }
        for (i, r) in rhs.iter_mut().enumerate() {
            *r += dt * grid.cell_weights[i + a.offset] * s.y[i + a.offset];
        }
        if params.variant == Variant::Dynamic {
            rhs[0] += dt * s.ell / params.alpha_tilde;
        }
    }
    let lower: Vec<f64> = a.lower.iter().map(|v| theta * dt * v).collect();
    let upper: Vec<f64> = a.upper.iter().map(|v| theta * dt * v).collect();
    let diag: Vec<f64> = (0..m).map(|i| a.mass[i] + theta * dt * a.diag[i]).collect();
    solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
    let mut y = vec![0.0; grid.n_points];
    y[a.offset..a.offset + m].copy_from_slice(&rhs);
    let ell = match params.variant {
        Variant::Dynamic => y[0],
        Variant::Dirichlet => 0.0,
    };
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure("non-finite values after step".into()));
    }
    Ok(ScalarModeState { y, ell, t: state.t + dt })
}

/// Number of uniform steps and the step actually used to land on `span`.
pub fn step_count(span: f64, dt: f64) -> (usize, f64) {
    if span <= 0.0 {
        return (0, dt);
    }
    let n = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    (n, span / n as f64)
}

/// Implicit-Euler steps taken before Crank–Nicolson when evolving from rough data.
/// Without them the CN amplification factor near −1 leaves an oscillating
/// boundary layer that breaks the monotonicity of the `Lᵖ` functionals.
pub const STARTUP_STEPS: usize = 4;

/// Scheme for the `j`-th step of an evolution.
pub fn startup_params(params: &DynBCParams, j: usize) -> DynBCParams {
    if j < STARTUP_STEPS {
        params.with_scheme(Scheme::ImplicitEuler)
    } else {
        *params
    }
}

/// Repeated `step` up to `t_end` (with the implicit startup); the observer sees every new state.
pub fn evolve(
    grid: &RadialGrid,
    state0: &ScalarModeState,
    params: &DynBCParams,
    t_end: f64,
    dt: f64,
    observer: &mut dyn FnMut(&ScalarModeState) -> Result<()>,
) -> Result<ScalarModeState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let (n, h) = step_count(t_end - state0.t, dt);
    let mut s = state0.clone();
    for j in 0..n {
        let mut next = step(grid, &s, &startup_params(params, j), h)?;
        next.t = state0.t + (j + 1) as f64 * h;
        observer(&next)?;
        s = next;
    }
    Ok(s)
}

/// `2π Σ w_i |y_i|^p + (2π/α̃) |ℓ|^p`; for the Dirichlet variant the boundary term is absent.
pub fn lp_functional(grid: &RadialGrid, state: &ScalarModeState, params: &DynBCParams, p: f64) -> f64 {
    let fluid: f64 = grid.cell_weights.iter().zip(&state.y).map(|(w, v)| w * v.abs().powf(p)).sum();
    let ball = match params.variant {
        Variant::Dynamic => state.ell.abs().powf(p) / params.alpha_tilde,
        Variant::Dirichlet => 0.0,
    };
    2.0 * PI * (fluid + ball)
}

/// Norm of the pair `(y, ℓ)`; `p = ∞` gives `max(|y|, |ℓ|)`.
pub fn pair_norm(grid: &RadialGrid, state: &ScalarModeState, params: &DynBCParams, p: f64) -> f64 {
    if p.is_infinite() {
        let m = state.y.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        return m.max(state.ell.abs());
    }
    lp_functional(grid, state, params, p).powf(1.0 / p)
}

/// Conserved mass `2π Σ w_i y_i + (2π/α̃) ℓ` of the `k = 0` dynamic system.
pub fn mass(state: &ScalarModeState, params: &DynBCParams, grid: &RadialGrid) -> Result<f64> {
    if params.variant != Variant::Dynamic || params.k != 0 {
        return Err(Error::UnsupportedVariant("mass is defined for the k = 0 dynamic system only".into()));
    }
    Ok(2.0 * PI * (grid.integrate_cells(&state.y) + state.ell / params.alpha_tilde))
}

/// Heat kernel `exp(−r²/4νt)/(4πνt)` sampled at the grid nodes.
pub fn gaussian_profile(grid: &RadialGrid, t: f64, nu: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    let s = 4.0 * nu * t;
    Ok(grid.nodes.iter().map(|r| (-r * r / s).exp() / (PI * s)).collect())
}

/// Records `(t, ℓ, norms)` at scheduled output times.
#[derive(Clone, Debug)]
pub struct TimeSeriesSink {
    pub ps: Vec<f64>,
    pub rows: Vec<(f64, f64, Vec<f64>)>,
}

impl TimeSeriesSink {
    pub fn new(ps: Vec<f64>) -> Self {
        Self { ps, rows: Vec::new() }
    }

    pub fn record(&mut self, grid: &RadialGrid, state: &ScalarModeState, params: &DynBCParams) {
        let norms = self.ps.iter().map(|&p| pair_norm(grid, state, params, p)).collect();
        self.rows.push((state.t, state.ell, norms));
    }

    /// Columnar text: `t, ell, norm_p…` with a header naming the exponents.
    pub fn write(&self, out: &mut dyn Write) -> std::io::Result<()> {
        let mut header = String::from("t, ell");
        for p in &self.ps {
            header.push_str(&format!(", norm_{}", crate::output::p_label(*p)));
        }
        writeln!(out, "{header}")?;
        for (t, ell, norms) in &self.rows {
            let mut line = format!("{}, {}", sci(*t), sci(*ell));
            for v in norms {
                line.push_str(&format!(", {}", sci(*v)));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_grid::build_grid;

    #[test]
    fn zero_state_stays_zero() {
        let g = build_grid(64, 10.0, 1.0).unwrap();
        let p = DynBCParams::dynamic(0, 2.0, 1.0).unwrap();
        let s = step(&g, &ScalarModeState::zeros(64), &p, 0.1).unwrap();
        assert!(s.y.iter().all(|v| *v == 0.0) && s.ell == 0.0);
    }

    #[test]
    fn mass_formula() {
        let g = build_grid(64, 10.0, 1.0).unwrap();
        let p = DynBCParams::dynamic(0, 2.0, 1.0).unwrap();
        let s = ScalarModeState { y: vec![0.0; 64], ell: 1.0, t: 0.0 };
        assert!((mass(&s, &p, &g).unwrap() - PI).abs() < 1e-15);
        let w = DynBCParams::dynamic(1, 2.0, 1.0).unwrap();
        assert!(mass(&s, &w, &g).is_err());
    }

    #[test]
    fn gaussian_point_value() {
        let g = RadialGrid::from_nodes(vec![1.0, 5.0, 10.0], 0.0).unwrap();
        let v = gaussian_profile(&g, 25.0, 1.0).unwrap();
        assert!((v[2] - (-1.0f64).exp() / (100.0 * PI)).abs() < 1e-17);
        assert!(gaussian_profile(&g, 0.0, 1.0).is_err());
    }

    #[test]
    fn variant_rules() {
        assert!(DynBCParams::dynamic(2, 1.0, 1.0).is_err());
        assert!(DynBCParams::dirichlet(0, 1.0).is_err());
        assert!(DynBCParams::dirichlet(3, 1.0).is_ok());
    }

    #[test]
    fn dirichlet_trace_is_zero() {
        let g = build_grid(64, 10.0, 1.0).unwrap();
        let p = DynBCParams::dirichlet(2, 1.0).unwrap();
        let y: Vec<f64> = g.nodes.iter().map(|r| (r - 1.0) * (-(r - 3.0) * (r - 3.0)).exp()).collect();
        let s = step(&g, &ScalarModeState { y, ell: 0.0, t: 0.0 }, &p, 0.05).unwrap();
        assert_eq!(s.y[0], 0.0);
        assert_eq!(s.ell, 0.0);
    }
}
