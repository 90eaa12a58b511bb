//! Nonlinear fluid–disk system in the body frame, `∂_t V + AV = ℙF(V)` with
//! `F(V) = (ℓ_V − V)·∇V` in the fluid and zero on the disk.
//!
//! Two drivers: an IMEX stepper (implicit Stokes block, Adams–Bashforth convection) and
//! the Kato successive approximation `Y_{n+1} = S(t)V₀ + ∫₀ᵗ S(t−s)ℙF(Y_n(s)) ds`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::analysis::{fit_decay, DecayFit};
use crate::dynbc_heat::step_count;
use crate::error::{Error, Result};
use crate::fields::{field_norm, mode_coefficients, project_leray, Angular, ModeDecomposition, PolarField};
use crate::output::sci;
use crate::radial_grid::{PhysicalParams, RadialGrid};
use crate::stokes::{init_stokes, step_stokes, step_stokes_with_sources, StokesSources, StokesState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NsMode {
    Imex,
    Kato,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearConfig {
    pub mode: NsMode,
    pub k_max: usize,
    pub n_theta: usize,
    pub dealias: bool,
    pub kato_max_iters: usize,
    pub kato_tol: f64,
    /// Largest admitted one-step growth of the `𝓛²` norm.
    pub blowup_factor: f64,
    /// Drops the convection term entirely (the stepper then is `step_stokes`).
    pub zero_nonlinearity: bool,
}

impl NonlinearConfig {
    pub fn new(mode: NsMode, k_max: usize) -> Self {
        Self {
            mode,
            k_max,
            n_theta: crate::fields::default_n_theta(k_max),
            dealias: true,
            kato_max_iters: 12,
            kato_tol: 1e-10,
            blowup_factor: 10.0,
            zero_nonlinearity: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 {
            return Err(Error::InvalidArgument("k_max must be >= 1".into()));
        }
        if self.n_theta < 4 || !self.n_theta.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("n_theta must be a power of two >= 4, got {}", self.n_theta)));
        }
        // Products reach mode 2k_max; they must not alias back onto modes <= k_max.
        let required = if self.dealias { 3 * self.k_max + 1 } else { 4 * self.k_max + 2 };
        if self.n_theta < required {
            return Err(Error::InsufficientResolution { n_theta: self.n_theta, required });
        }
        if !(self.blowup_factor > 1.0) {
            return Err(Error::InvalidArgument("blowup_factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// Projected convection term and the largest fluid speed seen on the samples.
pub struct Convection {
    pub term: ModeDecomposition,
    pub max_speed: f64,
}

/// `ℙ[(ℓ_V − V)·∇V]` evaluated pseudo-spectrally on `config.n_theta` angles.
pub fn nonlinear_term(d: &ModeDecomposition, config: &NonlinearConfig, params: &PhysicalParams) -> Result<Convection> {
    config.validate()?;
    if d.k_max > config.k_max {
        return Err(Error::InvalidArgument(format!("decomposition has k_max {} > config k_max {}", d.k_max, config.k_max)));
    }
    let g = d.grid.clone();
    let n = g.n_points;
    let nt = config.n_theta;
    let kk = d.k_max + 1;
    let c = mode_coefficients(d);
    let deriv = |t: &Vec<Vec<f64>>| t.iter().map(|row| g.derivative(row)).collect::<Vec<_>>();
    let (dvr_a, dvr_b, dvt_a, dvt_b) = (deriv(&c.vr_a), deriv(&c.vr_b), deriv(&c.vt_a), deriv(&c.vt_b));
    let ang = Angular::new(nt);
    let (cos_t, sin_t): (Vec<f64>, Vec<f64>) = (0..nt)
        .map(|j| {
            let th = 2.0 * PI * j as f64 / nt as f64;
            (th.cos(), th.sin())
        })
        .unzip();
    let ell = d.rigid.ell;
    let rows: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = g.nodes[i];
            let col = |t: &Vec<Vec<f64>>| (0..kk).map(|k| t[k][i]).collect::<Vec<f64>>();
            let (ar, br) = (col(&c.vr_a), col(&c.vr_b));
            let (at, bt) = (col(&c.vt_a), col(&c.vt_b));
            // ∂_θ maps (a_k, b_k) to (k b_k, −k a_k).
            let dth = |a: &[f64], b: &[f64]| -> (Vec<f64>, Vec<f64>) {
                ((0..kk).map(|k| k as f64 * b[k]).collect(), (0..kk).map(|k| -(k as f64) * a[k]).collect())
            };
            let vr = ang.synthesize(&ar, &br);
            let vt = ang.synthesize(&at, &bt);
            let vr_r = ang.synthesize(&col(&dvr_a), &col(&dvr_b));
            let vt_r = ang.synthesize(&col(&dvt_a), &col(&dvt_b));
            let (a, b) = dth(&ar, &br);
            let vr_th = ang.synthesize(&a, &b);
            let (a, b) = dth(&at, &bt);
            let vt_th = ang.synthesize(&a, &b);
            let mut nr = vec![0.0; nt];
            let mut nth = vec![0.0; nt];
            let mut vmax = 0.0_f64;
            for j in 0..nt {
                let lr = ell[0] * cos_t[j] + ell[1] * sin_t[j];
                let lt = -ell[0] * sin_t[j] + ell[1] * cos_t[j];
                let (ur, ut) = (lr - vr[j], lt - vt[j]);
                nr[j] = ur * vr_r[j] + ut * vr_th[j] / r - ut * vt[j] / r;
                nth[j] = ur * vt_r[j] + ut * vt_th[j] / r + ut * vr[j] / r;
                vmax = vmax.max(vr[j].hypot(vt[j]));
            }
            (nr, nth, vmax)
        })
        .collect();
    let mut field = PolarField::zeros(g.clone(), nt)?;
    let mut max_speed = 0.0_f64;
    for (i, (nr, nth, vmax)) in rows.into_iter().enumerate() {
        field.v_r[i * nt..(i + 1) * nt].copy_from_slice(&nr);
        field.v_theta[i * nt..(i + 1) * nt].copy_from_slice(&nth);
        max_speed = max_speed.max(vmax);
    }
    let term = project_leray(&field, params, config.k_max)?;
    Ok(Convection { term, max_speed })
}

/// IMEX stepper: Crank–Nicolson Stokes block (implicit Euler for the first steps) and
/// second-order Adams–Bashforth convection (forward Euler on the first step). Unequal
/// consecutive steps use the variable-step weights `1 + ρ/2`, `−ρ/2` with `ρ = h_n/h_{n−1}`.
#[derive(Clone, Debug)]
pub struct NsStepper {
    pub config: NonlinearConfig,
    previous: Option<(ModeDecomposition, f64)>,
}

impl NsStepper {
    pub fn new(config: NonlinearConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, previous: None })
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }
}

/// Kinetic energy `½‖V‖²_{𝓛²}`, i.e. `½(∫|v|² + m|ℓ|² + 𝓙ω²)` for a homogeneous disk.
pub fn kinetic_energy(d: &ModeDecomposition, params: &PhysicalParams) -> Result<f64> {
    let n = field_norm(d, 2.0, params.m / PI)?;
    Ok(0.5 * n * n)
}

pub fn step_ns(state: &StokesState, stepper: &mut NsStepper, dt: f64) -> Result<StokesState> {
    if stepper.config.mode != NsMode::Imex {
        return Err(Error::InvalidArgument("step_ns needs mode = imex".into()));
    }
    if stepper.config.zero_nonlinearity {
        return step_stokes(state, dt);
    }
    let conv = nonlinear_term(&state.decomp.with_k_max(stepper.config.k_max), &stepper.config, &state.params)?;
    let g: &RadialGrid = &state.decomp.grid;
    if conv.max_speed > 0.0 {
        let bound = 0.5 * g.min_spacing() / conv.max_speed;
        if dt > bound {
            return Err(Error::Cfl { dt, bound });
        }
    }
    let n_now = conv.term.with_k_max(state.decomp.k_max);
    let src = match &stepper.previous {
        Some((prev, dt_prev)) => {
            let rho = dt / dt_prev;
            let mut s = n_now.scaled(1.0 + 0.5 * rho);
            s.axpy(-0.5 * rho, prev);
            s
        }
        None => n_now.clone(),
    };
    let sources = StokesSources::from_forcing(&src, state.params.nu)?;
    let next = step_stokes_with_sources(state, dt, Some(&sources))?;
    let bw = state.params.m / PI;
    let before = field_norm(&state.decomp, 2.0, bw)?;
    let after = field_norm(&next.decomp, 2.0, bw)?;
    if !after.is_finite() || (before > 0.0 && after > stepper.config.blowup_factor * before) {
        return Err(Error::BlowUp { t: next.t, factor: if before > 0.0 { after / before } else { f64::INFINITY } });
    }
    stepper.previous = Some((n_now, dt));
    Ok(next)
}

/// IMEX evolution with a uniform step close to `dt`.
pub fn evolve_ns(
    state0: &StokesState,
    stepper: &mut NsStepper,
    t_end: f64,
    dt: f64,
    observer: &mut dyn FnMut(&StokesState) -> Result<()>,
) -> Result<StokesState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let (n, h) = step_count(t_end - state0.t, dt);
    let mut s = state0.clone();
    for j in 0..n {
        let mut next = step_ns(&s, stepper, h)?;
        next.t = state0.t + (j + 1) as f64 * h;
        observer(&next)?;
        s = next;
    }
    Ok(s)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KatoDiagnostics {
    /// `G_n = sup_t max{t^{3/8}‖Y_n‖_{𝓛⁸}, ‖Y_n‖_{𝓛²}, t^{1/2}|ℓ_n|}`.
    pub g_n: Vec<f64>,
    /// Triple-norm distances `‖|Y_{n+1} − Y_n|‖`.
    pub differences: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    /// Smallest `C₀` with `G_{n+1} ≤ G₀ + 2C₀G_n²` along the iteration.
    pub c0_estimate: f64,
    /// `(1 − (1 − 8C₀G₀)^{1/2})/(4C₀)` when the discriminant is positive.
    pub mu0_estimate: Option<f64>,
    pub converged: bool,
    pub contracted: bool,
}

impl KatoDiagnostics {
    /// `n, G_n, ratio` (the ratio column is empty for `n = 0`).
    pub fn write(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "n, G_n, ratio")?;
        for (n, g) in self.g_n.iter().enumerate() {
            let ratio = if n >= 2 { sci(self.contraction_ratios[n - 2]) } else { String::new() };
            writeln!(out, "{n}, {}, {ratio}", sci(*g))?;
        }
        Ok(())
    }
}

pub struct KatoResult {
    pub times: Vec<f64>,
    pub trajectory: Vec<ModeDecomposition>,
    pub diagnostics: KatoDiagnostics,
}

/// `max{t^{3/8}‖Y‖_{𝓛⁸}, ‖Y‖_{𝓛²}, t^{1/2}|ℓ|}` at one time.
fn triple_norm_at(t: f64, d: &ModeDecomposition, params: &PhysicalParams) -> Result<f64> {
    let bw = params.m / PI;
    let l8 = field_norm(d, 8.0, bw)?;
    let l2 = field_norm(d, 2.0, bw)?;
    let ell = d.rigid.ell[0].hypot(d.rigid.ell[1]);
    Ok((t.powf(0.375) * l8).max(l2).max(t.sqrt() * ell))
}

fn triple_norm(times: &[f64], traj: &[ModeDecomposition], params: &PhysicalParams) -> Result<f64> {
    let vals: Vec<Result<f64>> = times.par_iter().zip(traj.par_iter()).map(|(t, d)| triple_norm_at(*t, d, params)).collect();
    let mut m = 0.0_f64;
    for v in vals {
        m = m.max(v?);
    }
    Ok(m)
}

/// Kato iteration on the uniform grid `t_j = j·h`, `h ≈ dt`. The Duhamel integral uses the
/// left rectangle rule: `X_{j+1} = S(h)(X_j + h ℙF(Y_n(t_j)))`, `X_0 = V₀`.
pub fn kato_solve(state0: &StokesState, config: &NonlinearConfig, t_end: f64, dt: f64) -> Result<KatoResult> {
    config.validate()?;
    if config.mode != NsMode::Kato {
        return Err(Error::InvalidArgument("kato_solve needs mode = kato".into()));
    }
    if !(dt > 0.0) || !(t_end > state0.t) {
        return Err(Error::InvalidArgument(format!("need dt > 0 and t_end > t0 (dt={dt}, t_end={t_end})")));
    }
    let (steps, h) = step_count(t_end - state0.t, dt);
    let params = state0.params;
    let times: Vec<f64> = (0..=steps).map(|j| state0.t + j as f64 * h).collect();
    let march = |forcing: Option<&[ModeDecomposition]>| -> Result<Vec<ModeDecomposition>> {
        let mut out = Vec::with_capacity(steps + 1);
        out.push(state0.decomp.clone());
        let mut x = state0.clone();
        for j in 0..steps {
            if let Some(f) = forcing {
                x.add_field(h, &f[j])?;
            }
            x = step_stokes(&x, h)?;
            out.push(x.decomp.clone());
        }
        Ok(out)
    };
    let mut traj = march(None)?;
    let mut diag = KatoDiagnostics::default();
    let g0 = triple_norm(&times, &traj, &params)?;
    diag.g_n.push(g0);
    if g0 == 0.0 {
        diag.converged = true;
        diag.contracted = true;
        diag.mu0_estimate = Some(0.0);
        return Ok(KatoResult { times, trajectory: traj, diagnostics: diag });
    }
    let k_max = state0.decomp.k_max;
    for _ in 0..config.kato_max_iters {
        let forcing: Vec<Result<ModeDecomposition>> = traj[..steps]
            .par_iter()
            .map(|d| {
                if config.zero_nonlinearity {
                    return Ok(ModeDecomposition::zeros(d.grid.clone(), k_max));
                }
                Ok(nonlinear_term(&d.with_k_max(config.k_max), config, &params)?.term.with_k_max(k_max))
            })
            .collect();
        let forcing: Vec<ModeDecomposition> = forcing.into_iter().collect::<Result<_>>()?;
        let next = march(Some(&forcing))?;
        let diffs: Vec<ModeDecomposition> = next.iter().zip(&traj).map(|(a, b)| a.difference(b)).collect();
        let dist = triple_norm(&times, &diffs, &params)?;
        diag.g_n.push(triple_norm(&times, &next, &params)?);
        if let Some(&prev) = diag.differences.last() {
            diag.contraction_ratios.push(if prev > 0.0 { dist / prev } else { 0.0 });
        }
        diag.differences.push(dist);
        traj = next;
        let r = &diag.contraction_ratios;
        if r.len() >= 3 && r[r.len() - 3..].iter().all(|v| *v >= 1.0) {
            return Err(Error::NoContraction { ratios: r.clone() });
        }
        if dist <= config.kato_tol * g0 {
            diag.converged = true;
            break;
        }
    }
    let r = &diag.contraction_ratios;
    let tail = &r[r.len().saturating_sub(3)..];
    diag.contracted = !tail.is_empty() && tail.iter().all(|v| *v < 1.0)
        || (diag.converged && r.is_empty());
    diag.c0_estimate = diag
        .g_n
        .windows(2)
        .map(|w| if w[0] > 0.0 { ((w[1] - g0) / (2.0 * w[0] * w[0])).max(0.0) } else { 0.0 })
        .fold(0.0, f64::max);
    diag.mu0_estimate = mu0(diag.c0_estimate, g0);
    Ok(KatoResult { times, trajectory: traj, diagnostics: diag })
}

/// Fixed point bound `(1 − (1 − 8C₀G₀)^{1/2})/(4C₀)`; `G₀` in the limit `C₀ → 0`.
pub fn mu0(c0: f64, g0: f64) -> Option<f64> {
    if c0 == 0.0 {
        return Some(g0);
    }
    let disc = 1.0 - 8.0 * c0 * g0;
    (disc >= 0.0).then(|| (1.0 - disc.sqrt()) / (4.0 * c0))
}

/// Initial data with algebraic far field: a mode-2 stream profile
/// `A r^{1−γ}(1 − e^{−(r−1)²})`, velocity `~ r^{−γ}` with `γ = 2/q`, so the velocity lies in
/// `𝓛^{q'}` exactly for `q' > q` on the unbounded domain (borderline at `q`).
///
/// Mode 1 is left empty: a translating component drags a slowly decaying
/// near-disk transient along and hides the self-similar regime for moderate times.
pub fn algebraic_tail_data(grid: Arc<RadialGrid>, q: f64, amplitude: f64, k_max: usize) -> Result<ModeDecomposition> {
    if !(q > 1.0 && q <= 2.0) {
        return Err(Error::InvalidArgument(format!("q must lie in (1, 2], got {q}")));
    }
    let gamma = 2.0 / q;
    let mut d = ModeDecomposition::zeros(grid.clone(), k_max.max(2));
    for (i, &r) in grid.nodes.iter().enumerate() {
        let v = amplitude * r.powf(1.0 - gamma) * (1.0 - (-(r - 1.0) * (r - 1.0)).exp());
        d.higher[0][1][i] = v;
    }
    d.sync_rigid();
    Ok(d)
}

/// Time series of the nonlinear run and of its distance to the linear one.
#[derive(Clone, Debug, Default)]
pub struct ImprovedDecay {
    pub times: Vec<f64>,
    pub base: Vec<f64>,
    pub linear: Vec<f64>,
    pub diff: Vec<f64>,
    pub base_fit: Option<DecayFit>,
    pub diff_fit: Option<DecayFit>,
}

/// Runs the Stokes and IMEX evolutions in lockstep from `v0`, sampling `‖V‖_p` and
/// `‖V − S(t)V₀‖_p` at `times`, then fits both over `window`.
#[allow(clippy::too_many_arguments)]
pub fn improved_decay_experiment(
    v0: &ModeDecomposition,
    params: &PhysicalParams,
    config: &NonlinearConfig,
    p: f64,
    times: &[f64],
    dt_at: &dyn Fn(f64) -> f64,
    window: (f64, f64),
) -> Result<ImprovedDecay> {
    let mut lin = init_stokes(v0, params)?;
    let mut non = lin.clone();
    let mut stepper = NsStepper::new(NonlinearConfig { mode: NsMode::Imex, ..config.clone() })?;
    let bw = params.m / PI;
    let mut out = ImprovedDecay::default();
    for &t in times {
        let dt = dt_at(non.t);
        let (n, h) = step_count(t - non.t, dt);
        for _ in 0..n {
            non = step_ns(&non, &mut stepper, h)?;
            lin = step_stokes(&lin, h)?;
        }
        non.t = t;
        lin.t = t;
        out.times.push(t);
        out.base.push(field_norm(&non.decomp, p, bw)?);
        out.linear.push(field_norm(&lin.decomp, p, bw)?);
        out.diff.push(field_norm(&non.decomp.difference(&lin.decomp), p, bw)?);
    }
    let series = |v: &[f64]| out.times.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
    out.base_fit = Some(fit_decay(&series(&out.base), window, false)?);
    out.diff_fit = Some(fit_decay(&series(&out.diff), window, false)?);
    Ok(out)
}
