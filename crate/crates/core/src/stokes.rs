//! Linear fluid–disk evolution `S(t)`. Mode 0 is the dynamic-boundary system for
//! `(W, ω)`; mode 1 evolves the transformed pairs `Z_Ψ`, `Z_Φ` (pressure-free, `k = 0`);
//! modes `k ≥ 2` evolve `z_k = r^{−k}(r^kψ_k)'` with homogeneous Dirichlet data and
//! index `k − 1`. The decomposition is rebuilt from these unknowns after every step.
//!
//! Viscosity enters only as the product `ν dt`: every subsystem runs at unit viscosity
//! with the rescaled step.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::dynbc_heat::{self, DynBCParams, ScalarModeState, Source};
use crate::elliptic::{invert_z, invert_z_k, z_transform, z_transform_k, Sign, StreamPair};
use crate::error::{Error, Result};
use crate::fields::{field_norm, fluid_norm, ModeDecomposition, RigidState};
use crate::output::{p_label, sci};
use crate::radial_grid::{PhysicalParams, RadialGrid};

/// Geometric ratio of the default output schedule.
pub const SAMPLE_RATIO: f64 = 1.189_207_115_002_721; // 2^{1/4}

#[derive(Clone, Debug)]
pub struct StokesState {
    pub decomp: ModeDecomposition,
    pub z_psi: ScalarModeState,
    pub z_phi: ScalarModeState,
    /// `[cos, sin]` channels of modes `k = 2..=k_max`.
    pub z_higher: Vec<[Vec<f64>; 2]>,
    pub t: f64,
    pub params: PhysicalParams,
    /// Steps taken so far; the first few use implicit Euler.
    pub steps: usize,
    /// Data from before the last step, for the mode-1 pressure.
    pub previous: Option<PreviousStep>,
}

/// What the pressure recovery needs from the start of the last step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreviousStep {
    pub t: f64,
    pub ell: [f64; 2],
    /// `z_1 − z_0` of the Ψ and Φ channels.
    pub jump: [f64; 2],
    /// θ of the step taken.
    pub theta: f64,
}

/// Masses of the two mode-1 transformed systems and `𝓜 = (m − π)ℓ₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsymptoticMomenta {
    pub m_vec: [f64; 2],
    pub m_phi: f64,
    pub m_psi: f64,
}

fn w_params(p: &PhysicalParams) -> Result<DynBCParams> {
    DynBCParams::dynamic(1, p.alpha_w, 1.0)
}

fn z_params(p: &PhysicalParams) -> Result<DynBCParams> {
    DynBCParams::dynamic(0, p.alpha0, 1.0)
}

fn higher_params(k: usize) -> Result<DynBCParams> {
    DynBCParams::dirichlet((k - 1) as u32, 1.0)
}

pub fn init_stokes(decomp: &ModeDecomposition, params: &PhysicalParams) -> Result<StokesState> {
    let g = &decomp.grid;
    let mut z_psi = z_transform(&StreamPair::new(decomp.psi.clone()), g, Sign::Plus)?;
    let mut z_phi = z_transform(&StreamPair::new(decomp.phi.clone()), g, Sign::Minus)?;
    z_psi.t = 0.0;
    z_phi.t = 0.0;
    // the far-field node carries the Dirichlet value the solver imposes there
    for z in [&mut z_psi, &mut z_phi] {
        if let Some(last) = z.y.last_mut() {
            *last = 0.0;
        }
    }
    let mut z_higher = Vec::with_capacity(decomp.higher.len());
    for (idx, pair) in decomp.higher.iter().enumerate() {
        let k = (idx + 2) as u32;
        z_higher.push([z_transform_k(&pair[0], g, k)?, z_transform_k(&pair[1], g, k)?]);
    }
    let mut d = decomp.clone();
    d.sync_rigid();
    Ok(StokesState { decomp: d, z_psi, z_phi, z_higher, t: 0.0, params: *params, steps: 0, previous: None })
}

/// Explicit forcing for every subsystem, held constant over one step.
#[derive(Clone, Debug)]
pub struct StokesSources {
    pub w: Source,
    pub z_psi: Source,
    pub z_phi: Source,
    pub higher: Vec<[Vec<f64>; 2]>,
}

impl StokesSources {
    /// Transformed sources of a forcing given as a decomposition (e.g. a projected convection term).
    /// The returned sources are for the unit-viscosity subsystems, so they are divided by `ν`.
    pub fn from_forcing(f: &ModeDecomposition, nu: f64) -> Result<Self> {
        let g = &f.grid;
        let s = 1.0 / nu;
        let scale = |v: Vec<f64>| v.into_iter().map(|x| s * x).collect::<Vec<f64>>();
        let zp = z_transform(&StreamPair::new(f.psi.clone()), g, Sign::Plus)?;
        let zf = z_transform(&StreamPair::new(f.phi.clone()), g, Sign::Minus)?;
        let mut higher = Vec::new();
        for (idx, pair) in f.higher.iter().enumerate() {
            let k = (idx + 2) as u32;
            higher.push([scale(z_transform_k(&pair[0], g, k)?), scale(z_transform_k(&pair[1], g, k)?)]);
        }
        Ok(Self {
            w: Source { y: scale(f.w.clone()), ell: s * f.w[0] },
            z_psi: Source { y: scale(zp.y), ell: s * zp.ell },
            z_phi: Source { y: scale(zf.y), ell: s * zf.ell },
            higher,
        })
    }
}

enum Job<'a> {
    W(&'a ScalarModeState),
    Z(&'a ScalarModeState, Option<&'a Source>),
    Higher(usize, usize),
}

enum Done {
    W(ScalarModeState),
    Z(ScalarModeState),
    Higher(usize, usize, Vec<f64>),
}

pub fn step_stokes(state: &StokesState, dt: f64) -> Result<StokesState> {
    step_stokes_with_sources(state, dt, None)
}

/// One step of every subsystem, optionally with explicit forcing.
pub fn step_stokes_with_sources(state: &StokesState, dt: f64, sources: Option<&StokesSources>) -> Result<StokesState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let p = &state.params;
    let g: &RadialGrid = &state.decomp.grid;
    let h = dt * p.nu;
    let j = state.steps;
    let wp = dynbc_heat::startup_params(&w_params(p)?, j);
    let zp = dynbc_heat::startup_params(&z_params(p)?, j);
    let w_state = ScalarModeState { y: state.decomp.w.clone(), ell: state.decomp.rigid.omega, t: state.t };
    let mut jobs = vec![
        Job::W(&w_state),
        Job::Z(&state.z_psi, sources.map(|s| &s.z_psi)),
        Job::Z(&state.z_phi, sources.map(|s| &s.z_phi)),
    ];
    for idx in 0..state.z_higher.len() {
        jobs.push(Job::Higher(idx, 0));
        jobs.push(Job::Higher(idx, 1));
    }
    let done: Vec<Result<Done>> = jobs
        .par_iter()
        .map(|job| match job {
            Job::W(s) => dynbc_heat::step_with_source(g, s, &wp, h, sources.map(|x| &x.w)).map(Done::W),
            Job::Z(s, src) => dynbc_heat::step_with_source(g, s, &zp, h, *src).map(Done::Z),
            Job::Higher(idx, ch) => {
                let hp = dynbc_heat::startup_params(&higher_params(idx + 2)?, j);
                let y = state.z_higher[*idx][*ch].clone();
                let s = ScalarModeState { y, ell: 0.0, t: state.t };
                let src = sources.map(|x| Source { y: x.higher[*idx][*ch].clone(), ell: 0.0 });
                dynbc_heat::step_with_source(g, &s, &hp, h, src.as_ref()).map(|n| Done::Higher(*idx, *ch, n.y))
            }
        })
        .collect();
    let mut out = state.clone();
    out.previous = Some(PreviousStep {
        t: state.t,
        ell: state.decomp.rigid.ell,
        jump: [state.z_psi.y[1] - state.z_psi.y[0], state.z_phi.y[1] - state.z_phi.y[0]],
        theta: zp.scheme.theta(),
    });
    let mut z_seen = 0;
    for d in done {
        match d? {
            Done::W(s) => {
                out.decomp.w = s.y;
                out.decomp.rigid.omega = s.ell;
            }
            Done::Z(s) => {
                if z_seen == 0 {
                    out.z_psi = s;
                } else {
                    out.z_phi = s;
                }
                z_seen += 1;
            }
            Done::Higher(idx, ch, y) => out.z_higher[idx][ch] = y,
        }
    }
    out.t = state.t + dt;
    out.z_psi.t = out.t;
    out.z_phi.t = out.t;
    out.steps = state.steps + 1;
    rebuild(&mut out)?;
    let (old, new) = (state.decomp.rigid, out.decomp.rigid);
    out.decomp.rigid.h = [
        old.h[0] + 0.5 * dt * (old.ell[0] + new.ell[0]),
        old.h[1] + 0.5 * dt * (old.ell[1] + new.ell[1]),
    ];
    out.decomp.rigid.theta = old.theta + 0.5 * dt * (old.omega + new.omega);
    Ok(out)
}

impl StokesState {
    /// `self += a · f` for a field given as a decomposition (same grid and truncation),
    /// applied to the evolved unknowns; the decomposition is rebuilt afterwards.
    pub fn add_field(&mut self, a: f64, f: &ModeDecomposition) -> Result<()> {
        if !f.grid.same_as(&self.decomp.grid) || f.k_max != self.decomp.k_max {
            return Err(Error::GridMismatch);
        }
        let src = StokesSources::from_forcing(f, 1.0)?;
        let add = |x: &mut [f64], y: &[f64]| x.iter_mut().zip(y).for_each(|(u, v)| *u += a * v);
        add(&mut self.decomp.w, &src.w.y);
        self.decomp.rigid.omega += a * src.w.ell;
        add(&mut self.z_psi.y, &src.z_psi.y);
        self.z_psi.ell += a * src.z_psi.ell;
        add(&mut self.z_phi.y, &src.z_phi.y);
        self.z_phi.ell += a * src.z_phi.ell;
        for (mine, theirs) in self.z_higher.iter_mut().zip(&src.higher) {
            add(&mut mine[0], &theirs[0]);
            add(&mut mine[1], &theirs[1]);
        }
        rebuild(self)
    }
}

/// Rebuilds `Ψ, Φ, ψ_k, φ_k` and `ℓ` from the evolved unknowns.
fn rebuild(s: &mut StokesState) -> Result<()> {
    let g = s.decomp.grid.clone();
    s.decomp.psi = invert_z(&s.z_psi, &g, Sign::Plus)?.psi;
    s.decomp.phi = invert_z(&s.z_phi, &g, Sign::Minus)?.psi;
    for (idx, pair) in s.z_higher.iter().enumerate() {
        let k = (idx + 2) as u32;
        s.decomp.higher[idx] = [invert_z_k(&pair[0], &g, k)?, invert_z_k(&pair[1], &g, k)?];
    }
    s.decomp.rigid.ell = [-s.decomp.phi[0], s.decomp.psi[0]];
    Ok(())
}

/// Steps to `t_end` with a uniform step close to `dt`; the observer sees every new state.
pub fn evolve_stokes(
    state0: &StokesState,
    t_end: f64,
    dt: f64,
    observer: &mut dyn FnMut(&StokesState) -> Result<()>,
) -> Result<StokesState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let (n, h) = dynbc_heat::step_count(t_end - state0.t, dt);
    let mut s = state0.clone();
    for j in 0..n {
        let mut next = step_stokes(&s, h)?;
        next.t = state0.t + (j + 1) as f64 * h;
        observer(&next)?;
        s = next;
    }
    Ok(s)
}

/// Steps through the increasing `times`, landing on each exactly; the step used on the
/// segment that starts at `t` is `dt_at(t)`. The observer is called at every sample time.
pub fn evolve_sampled(
    state0: &StokesState,
    times: &[f64],
    dt_at: &dyn Fn(f64) -> f64,
    observer: &mut dyn FnMut(&StokesState) -> Result<()>,
) -> Result<StokesState> {
    let mut s = state0.clone();
    for &t in times {
        if t < s.t - 1e-12 {
            return Err(Error::InvalidArgument("sample times must be increasing".into()));
        }
        s = evolve_stokes(&s, t, dt_at(s.t), &mut |_| Ok(()))?;
        observer(&s)?;
    }
    Ok(s)
}

/// `t₀ ρ^j` up to and including `t_end` (the last sample is clamped to `t_end`).
pub fn geometric_times(t0: f64, t_end: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(t0 > 0.0) || !(t_end >= t0) || !(ratio > 1.0) {
        return Err(Error::InvalidArgument(format!("bad schedule t0={t0}, t_end={t_end}, ratio={ratio}")));
    }
    let mut out = Vec::new();
    let mut t = t0;
    while t < t_end * (1.0 - 1e-12) {
        out.push(t);
        t *= ratio;
    }
    out.push(t_end);
    Ok(out)
}

fn lamb_profile(grid: &RadialGrid, t: f64, nu: f64, m_vec: [f64; 2], f: impl Fn(f64) -> f64) -> Result<ModeDecomposition> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime(t));
    }
    let _ = nu;
    let mut d = ModeDecomposition::zeros(std::sync::Arc::new(grid.clone()), 1);
    let base: Vec<f64> = grid.nodes.iter().map(|&r| f(r)).collect();
    d.psi = base.iter().map(|v| m_vec[1] * v).collect();
    d.phi = base.iter().map(|v| -m_vec[0] * v).collect();
    d.sync_rigid();
    Ok(d)
}

/// Mode-1 decomposition of the Lamb–Oseen type profile `U_𝓜(t)`:
/// `ψ̃ = (1 − e^{−r²/4νt})/(2πr)`, weighted `M₂` in the Ψ channel and `−M₁` in the Φ channel.
pub fn lamb_oseen_profile(grid: &RadialGrid, t: f64, nu: f64, m_vec: [f64; 2]) -> Result<ModeDecomposition> {
    let s = 4.0 * nu * t;
    lamb_profile(grid, t, nu, m_vec, |r| (1.0 - (-r * r / s).exp()) / (2.0 * PI * r))
}

/// Variant with the disk correction, `ψ̂ = (e^{−1/4νt} − e^{−r²/4νt} + 1/4νt)/(2πr)`.
pub fn lamb_oseen_corrected_profile(grid: &RadialGrid, t: f64, nu: f64, m_vec: [f64; 2]) -> Result<ModeDecomposition> {
    let s = 4.0 * nu * t;
    lamb_profile(grid, t, nu, m_vec, |r| ((-1.0 / s).exp() - (-r * r / s).exp() + 1.0 / s) / (2.0 * PI * r))
}

/// Mode-1 pressure coefficients `(β_q, β_p)` with `q₁ = β_q/r` (Ψ channel) and `p₁ = β_p/r`
/// (Φ channel), from `β = ℓ' − ν ∂_r z(1)`. `ℓ'` is the time difference over the last step.
pub fn recover_mode1_pressure(state: &StokesState) -> (f64, f64) {
    let (b, _) = pressure_both_ways(state);
    (b[0], b[1])
}

/// `β` from `ℓ' − ν∂_r z(1)` and from `−(m/π)ℓ' + ν∂_r z(1)`, for both channels.
/// `∂_r z(1)` is read off the scheme's half-cell balance `κ₀(z₁ − z₀) − w₀ ∂_t z(1)`,
/// time-centred like the step, so that it sits at the same time level as the differenced `ℓ'`.
pub fn pressure_both_ways(state: &StokesState) -> ([f64; 2], [f64; 2]) {
    let Some(prev) = state.previous else {
        return ([0.0; 2], [0.0; 2]);
    };
    let g = &state.decomp.grid;
    let dt = state.t - prev.t;
    if dt <= 0.0 {
        return ([0.0; 2], [0.0; 2]);
    }
    let nu = state.params.nu;
    let m = state.params.m;
    let ell = state.decomp.rigid.ell;
    let kappa = 0.5 * (g.nodes[0] + g.nodes[1]) / g.h(0);
    let w0 = g.cell_weights[0];
    // Ψ channel pairs with ℓ₂; the Φ channel with ℓ₁.
    let rates = [(ell[1] - prev.ell[1]) / dt, (ell[0] - prev.ell[0]) / dt];
    let jumps = [state.z_psi.y[1] - state.z_psi.y[0], state.z_phi.y[1] - state.z_phi.y[0]];
    let mut first = [0.0; 2];
    let mut second = [0.0; 2];
    for c in 0..2 {
        let flux = kappa * (prev.theta * jumps[c] + (1.0 - prev.theta) * prev.jump[c]);
        let nu_dz = nu * flux - w0 * 2.0 * rates[c];
        first[c] = rates[c] - nu_dz;
        second[c] = -(m / PI) * rates[c] + nu_dz;
    }
    (first, second)
}

/// Fills `h(t) = ∫ℓ` and `θ(t) = ∫ω` by the trapezoid rule on a uniform series.
pub fn reconstruct_trajectory(series: &[RigidState], dt: f64) -> Vec<RigidState> {
    let mut out: Vec<RigidState> = series.to_vec();
    for i in 1..out.len() {
        let (a, b) = (out[i - 1], series[i]);
        out[i].h = [a.h[0] + 0.5 * dt * (a.ell[0] + b.ell[0]), a.h[1] + 0.5 * dt * (a.ell[1] + b.ell[1])];
        out[i].theta = a.theta + 0.5 * dt * (a.omega + b.omega);
    }
    if let Some(first) = out.first_mut() {
        first.h = [0.0; 2];
        first.theta = 0.0;
    }
    out
}

pub fn asymptotic_momenta(state0: &StokesState) -> Result<AsymptoticMomenta> {
    let g = &state0.decomp.grid;
    let zp = z_params(&state0.params)?;
    let m = state0.params.m;
    let ell0 = state0.decomp.rigid.ell;
    Ok(AsymptoticMomenta {
        m_vec: [(m - PI) * ell0[0], (m - PI) * ell0[1]],
        m_phi: dynbc_heat::mass(&state0.z_phi, &zp, g)?,
        m_psi: dynbc_heat::mass(&state0.z_psi, &zp, g)?,
    })
}

/// One output row of a Stokes run.
#[derive(Clone, Debug)]
pub struct StokesRecord {
    pub t: f64,
    pub ell: [f64; 2],
    pub omega: f64,
    pub norms: Vec<f64>,
    pub profile_errors: Vec<f64>,
    pub mass_phi: f64,
    pub mass_psi: f64,
}

/// Collects records with the requested full-field norms and profile errors.
#[derive(Clone, Debug)]
pub struct StokesSeries {
    pub norm_ps: Vec<f64>,
    pub profile_ps: Vec<f64>,
    pub m_vec: [f64; 2],
    pub rows: Vec<StokesRecord>,
}

impl StokesSeries {
    pub fn new(norm_ps: Vec<f64>, profile_ps: Vec<f64>, m_vec: [f64; 2]) -> Self {
        Self { norm_ps, profile_ps, m_vec, rows: Vec::new() }
    }

    pub fn record(&mut self, s: &StokesState) -> Result<()> {
        let d = &s.decomp;
        let bw = s.params.m / PI;
        let norms = self.norm_ps.iter().map(|&p| field_norm(d, p, bw)).collect::<Result<Vec<_>>>()?;
        let mut profile_errors = Vec::new();
        if !self.profile_ps.is_empty() {
            let u = lamb_oseen_profile(&d.grid, s.t, s.params.nu, self.m_vec)?.with_k_max(d.k_max);
            let diff = d.difference(&u);
            for &p in &self.profile_ps {
                profile_errors.push(fluid_norm(&diff, p)?);
            }
        }
        let zp = z_params(&s.params)?;
        self.rows.push(StokesRecord {
            t: s.t,
            ell: d.rigid.ell,
            omega: d.rigid.omega,
            norms,
            profile_errors,
            mass_phi: dynbc_heat::mass(&s.z_phi, &zp, &d.grid)?,
            mass_psi: dynbc_heat::mass(&s.z_psi, &zp, &d.grid)?,
        });
        Ok(())
    }

    /// `t, ell_x, ell_y, omega, norm_L…, profile_err_L…, mass_phi, mass_psi`.
    pub fn write(&self, out: &mut dyn Write) -> std::io::Result<()> {
        let mut header = String::from("t, ell_x, ell_y, omega");
        for p in &self.norm_ps {
            header.push_str(&format!(", norm_L{}", p_label(*p)));
        }
        for p in &self.profile_ps {
            header.push_str(&format!(", profile_err_L{}", p_label(*p)));
        }
        header.push_str(", mass_phi, mass_psi");
        writeln!(out, "{header}")?;
        for r in &self.rows {
            let mut cols = vec![sci(r.t), sci(r.ell[0]), sci(r.ell[1]), sci(r.omega)];
            cols.extend(r.norms.iter().map(|v| sci(*v)));
            cols.extend(r.profile_errors.iter().map(|v| sci(*v)));
            cols.push(sci(r.mass_phi));
            cols.push(sci(r.mass_psi));
            writeln!(out, "{}", cols.join(", "))?;
        }
        Ok(())
    }
}
