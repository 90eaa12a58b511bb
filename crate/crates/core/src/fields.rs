//! Divergence-free fields around the disk: the angular-mode decomposition
//! `(W, Ψ, Φ, {ψ_k, φ_k})`, reconstruction in polar samples, rigid data and the
//! fluid–solid Leray projection.
//!
//! Conventions. For `r > 1`
//! `V_r = (Ψ/r) sin θ − (Φ/r) cos θ + Σ_k (k/r)(ψ_k sin kθ − φ_k cos kθ)`,
//! `V_θ = W + Ψ' cos θ + Φ' sin θ + Σ_k (ψ_k' cos kθ + φ_k' sin kθ)`,
//! and on the disk `V = ℓ + ω x^⊥` with `ℓ = (−Φ(1), Ψ(1))`, `ω = W(1)`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::SymPenta;
use crate::output::sci;
use crate::quadrature::gauss_legendre_unit;
use crate::radial_grid::{PhysicalParams, RadialGrid};

/// Relative tolerance on the spectral divergence residual accepted by `decompose`.
pub const DIVERGENCE_TOL: f64 = 1e-3;

/// Disk velocity, rotation rate and the integrated position and angle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RigidState {
    pub ell: [f64; 2],
    pub omega: f64,
    pub h: [f64; 2],
    pub theta: f64,
}

/// Angular-mode decomposition of a field; `higher[k - 2] = [ψ_k, φ_k]`.
#[derive(Clone, Debug)]
pub struct ModeDecomposition {
    pub grid: Arc<RadialGrid>,
    pub w: Vec<f64>,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    pub higher: Vec<[Vec<f64>; 2]>,
    pub k_max: usize,
    pub rigid: RigidState,
}

impl ModeDecomposition {
    pub fn zeros(grid: Arc<RadialGrid>, k_max: usize) -> Self {
        let n = grid.n_points;
        let k_max = k_max.max(1);
        Self {
            w: vec![0.0; n],
            psi: vec![0.0; n],
            phi: vec![0.0; n],
            higher: (2..=k_max).map(|_| [vec![0.0; n], vec![0.0; n]]).collect(),
            k_max,
            rigid: RigidState::default(),
            grid,
        }
    }

    /// Sets `ℓ` and `ω` from the traces at `r = 1`.
    pub fn sync_rigid(&mut self) {
        self.rigid.ell = [-self.phi[0], self.psi[0]];
        self.rigid.omega = self.w[0];
    }

    /// `self += a · other` on every profile and on the rigid velocities.
    pub fn axpy(&mut self, a: f64, other: &ModeDecomposition) {
        let add = |x: &mut [f64], y: &[f64]| x.iter_mut().zip(y).for_each(|(u, v)| *u += a * v);
        add(&mut self.w, &other.w);
        add(&mut self.psi, &other.psi);
        add(&mut self.phi, &other.phi);
        for (mine, theirs) in self.higher.iter_mut().zip(&other.higher) {
            add(&mut mine[0], &theirs[0]);
            add(&mut mine[1], &theirs[1]);
        }
        self.rigid.ell[0] += a * other.rigid.ell[0];
        self.rigid.ell[1] += a * other.rigid.ell[1];
        self.rigid.omega += a * other.rigid.omega;
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = ModeDecomposition::zeros(self.grid.clone(), self.k_max);
        out.axpy(a, self);
        out.rigid.h = self.rigid.h;
        out.rigid.theta = self.rigid.theta;
        out
    }

    pub fn difference(&self, other: &ModeDecomposition) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Largest absolute entry over all profiles.
    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0_f64;
        for v in self.profiles() {
            m = v.iter().fold(m, |a, x| a.max(x.abs()));
        }
        m
    }

    /// All stored profiles in a fixed order: W, Ψ, Φ, ψ_2, φ_2, …
    pub fn profiles(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![&self.w, &self.psi, &self.phi];
        for pair in &self.higher {
            v.push(&pair[0]);
            v.push(&pair[1]);
        }
        v
    }

    /// Copy truncated or zero-padded to another `k_max`.
    pub fn with_k_max(&self, k_max: usize) -> Self {
        let mut out = ModeDecomposition::zeros(self.grid.clone(), k_max);
        out.w = self.w.clone();
        out.psi = self.psi.clone();
        out.phi = self.phi.clone();
        for (dst, src) in out.higher.iter_mut().zip(&self.higher) {
            *dst = src.clone();
        }
        out.rigid = self.rigid;
        out
    }
}

/// Physical samples `(V_r, V_θ)` at `n_points × n_theta` nodes (row-major by radius)
/// and the rigid motion carried by the disk.
#[derive(Clone, Debug)]
pub struct PolarField {
    pub grid: Arc<RadialGrid>,
    pub n_theta: usize,
    pub v_r: Vec<f64>,
    pub v_theta: Vec<f64>,
    pub ball_ell: [f64; 2],
    pub ball_omega: f64,
}

impl PolarField {
    pub fn zeros(grid: Arc<RadialGrid>, n_theta: usize) -> Result<Self> {
        check_n_theta(n_theta)?;
        let len = grid.n_points * n_theta;
        Ok(Self { grid, n_theta, v_r: vec![0.0; len], v_theta: vec![0.0; len], ball_ell: [0.0; 2], ball_omega: 0.0 })
    }

    /// Samples a field given in polar components as a function of `(r, θ)`.
    pub fn from_fn(
        grid: Arc<RadialGrid>,
        n_theta: usize,
        f: impl Fn(f64, f64) -> (f64, f64),
    ) -> Result<Self> {
        let mut out = Self::zeros(grid, n_theta)?;
        for i in 0..out.grid.n_points {
            let r = out.grid.nodes[i];
            for j in 0..n_theta {
                let th = 2.0 * PI * j as f64 / n_theta as f64;
                let (a, b) = f(r, th);
                out.v_r[i * n_theta + j] = a;
                out.v_theta[i * n_theta + j] = b;
            }
        }
        Ok(out)
    }

    pub fn theta(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_theta as f64
    }
}

fn check_n_theta(n: usize) -> Result<()> {
    if n < 4 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("n_theta must be a power of two >= 4, got {n}")));
    }
    Ok(())
}

/// Smallest admissible angular resolution for a truncation `k_max`.
pub fn default_n_theta(k_max: usize) -> usize {
    (4 * k_max + 4).next_power_of_two()
}

/// Real Fourier analysis and synthesis on `n` uniform angles.
pub struct Angular {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Angular {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    /// Cosine and sine coefficients `a_k, b_k` for `k < n/2` (with `b_0 = 0`).
    pub fn analyze(&self, row: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut buf: Vec<Complex64> = row.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fwd.process(&mut buf);
        let half = n / 2;
        let mut a = vec![0.0; half];
        let mut b = vec![0.0; half];
        a[0] = buf[0].re / n as f64;
        for k in 1..half {
            a[k] = 2.0 * buf[k].re / n as f64;
            b[k] = -2.0 * buf[k].im / n as f64;
        }
        (a, b)
    }

    /// Inverse of `analyze` for coefficients up to `k < n/2`.
    pub fn synthesize(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[0] = Complex64::new(a[0], 0.0);
        for k in 1..a.len().min(n / 2) {
            let c = Complex64::new(a[k], -b[k]) * 0.5;
            buf[k] = c;
            buf[n - k] = c.conj();
        }
        self.inv.process(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }
}

/// Fourier coefficients of `V_r` and `V_θ`, indexed `[k][node]`, `k = 0..=k_max`.
pub struct ModeCoefficients {
    pub vr_a: Vec<Vec<f64>>,
    pub vr_b: Vec<Vec<f64>>,
    pub vt_a: Vec<Vec<f64>>,
    pub vt_b: Vec<Vec<f64>>,
}

/// Evaluates the coefficient tables of a decomposition on its grid.
pub fn mode_coefficients(d: &ModeDecomposition) -> ModeCoefficients {
    let g = &d.grid;
    let n = g.n_points;
    let kk = d.k_max + 1;
    let mut c = ModeCoefficients {
        vr_a: vec![vec![0.0; n]; kk],
        vr_b: vec![vec![0.0; n]; kk],
        vt_a: vec![vec![0.0; n]; kk],
        vt_b: vec![vec![0.0; n]; kk],
    };
    c.vt_a[0] = d.w.clone();
    let dpsi = g.derivative(&d.psi);
    let dphi = g.derivative(&d.phi);
    for i in 0..n {
        let r = g.nodes[i];
        c.vr_b[1][i] = d.psi[i] / r;
        c.vr_a[1][i] = -d.phi[i] / r;
        c.vt_a[1][i] = dpsi[i];
        c.vt_b[1][i] = dphi[i];
    }
    for (idx, pair) in d.higher.iter().enumerate() {
        let k = idx + 2;
        let kf = k as f64;
        let dc = g.derivative(&pair[0]);
        let ds = g.derivative(&pair[1]);
        for i in 0..n {
            let r = g.nodes[i];
            c.vr_b[k][i] = kf * pair[0][i] / r;
            c.vr_a[k][i] = -kf * pair[1][i] / r;
            c.vt_a[k][i] = dc[i];
            c.vt_b[k][i] = ds[i];
        }
    }
    c
}

/// Physical samples of a decomposition at the default angular resolution.
pub fn reconstruct(decomp: &ModeDecomposition) -> PolarField {
    reconstruct_with(decomp, default_n_theta(decomp.k_max)).expect("default resolution is admissible")
}

/// Physical samples of a decomposition on `n_theta` angles.
pub fn reconstruct_with(decomp: &ModeDecomposition, n_theta: usize) -> Result<PolarField> {
    check_n_theta(n_theta)?;
    if n_theta < 2 * decomp.k_max + 2 {
        return Err(Error::InsufficientResolution { n_theta, required: 2 * decomp.k_max + 2 });
    }
    let c = mode_coefficients(decomp);
    let ang = Angular::new(n_theta);
    let mut out = PolarField::zeros(decomp.grid.clone(), n_theta)?;
    let kk = decomp.k_max + 1;
    for i in 0..decomp.grid.n_points {
        let col = |t: &Vec<Vec<f64>>| (0..kk).map(|k| t[k][i]).collect::<Vec<f64>>();
        let vr = ang.synthesize(&col(&c.vr_a), &col(&c.vr_b));
        let vt = ang.synthesize(&col(&c.vt_a), &col(&c.vt_b));
        out.v_r[i * n_theta..(i + 1) * n_theta].copy_from_slice(&vr);
        out.v_theta[i * n_theta..(i + 1) * n_theta].copy_from_slice(&vt);
    }
    out.ball_ell = decomp.rigid.ell;
    out.ball_omega = decomp.rigid.omega;
    Ok(out)
}

/// Per-radius Fourier tables of a sampled field, `[node][k]`.
struct FieldSpectrum {
    vr_a: Vec<Vec<f64>>,
    vr_b: Vec<Vec<f64>>,
    vt_a: Vec<Vec<f64>>,
    vt_b: Vec<Vec<f64>>,
}

fn field_spectrum(field: &PolarField) -> FieldSpectrum {
    let nt = field.n_theta;
    let ang = Angular::new(nt);
    let n = field.grid.n_points;
    let mut s = FieldSpectrum { vr_a: vec![], vr_b: vec![], vt_a: vec![], vt_b: vec![] };
    for i in 0..n {
        let (a, b) = ang.analyze(&field.v_r[i * nt..(i + 1) * nt]);
        s.vr_a.push(a);
        s.vr_b.push(b);
        let (a, b) = ang.analyze(&field.v_theta[i * nt..(i + 1) * nt]);
        s.vt_a.push(a);
        s.vt_b.push(b);
    }
    s
}

/// Decomposition of a divergence-free field with the default tolerance.
pub fn decompose(field: &PolarField, params: &PhysicalParams, k_max: usize) -> Result<ModeDecomposition> {
    decompose_with_tolerance(field, params, k_max, DIVERGENCE_TOL)
}

/// Angular projections of the field. The stream profiles come from `V_r`, `W` from the
/// mean of `V_θ`; the remaining `V_θ` content must match the radial derivatives of the
/// stream profiles to `tol` relative to the field maximum.
pub fn decompose_with_tolerance(
    field: &PolarField,
    _params: &PhysicalParams,
    k_max: usize,
    tol: f64,
) -> Result<ModeDecomposition> {
    let k_max = k_max.max(1);
    if field.n_theta < 2 * k_max + 2 {
        return Err(Error::InsufficientResolution { n_theta: field.n_theta, required: 2 * k_max + 2 });
    }
    let g = field.grid.clone();
    let n = g.n_points;
    let spec = field_spectrum(field);
    let mut d = ModeDecomposition::zeros(g.clone(), k_max);
    for i in 0..n {
        let r = g.nodes[i];
        d.w[i] = spec.vt_a[i][0];
        d.psi[i] = r * spec.vr_b[i][1];
        d.phi[i] = -r * spec.vr_a[i][1];
        for k in 2..=k_max {
            let kf = k as f64;
            d.higher[k - 2][0][i] = r * spec.vr_b[i][k] / kf;
            d.higher[k - 2][1][i] = -r * spec.vr_a[i][k] / kf;
        }
    }
    let scale = field
        .v_r
        .iter()
        .chain(&field.v_theta)
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut residual = 0.0_f64;
    for i in 0..n {
        residual = residual.max(spec.vr_a[i][0].abs());
    }
    let c = mode_coefficients(&d);
    for k in 1..=k_max {
        for i in 0..n {
            residual = residual.max((c.vt_a[k][i] - spec.vt_a[i][k]).abs());
            residual = residual.max((c.vt_b[k][i] - spec.vt_b[i][k]).abs());
        }
    }
    if residual > tol * scale {
        return Err(Error::NotDivergenceFree { residual: residual / scale, tol });
    }
    d.sync_rigid();
    Ok(d)
}

/// Rigid data read off the traces at `r = 1`.
pub fn extract_rigid(decomp: &ModeDecomposition) -> RigidState {
    RigidState {
        ell: [-decomp.phi[0], decomp.psi[0]],
        omega: decomp.w[0],
        h: decomp.rigid.h,
        theta: decomp.rigid.theta,
    }
}

/// Discrete energy inner product: grid quadrature in `r`, trapezoid in `θ`, and the rigid part
/// `m ℓ·ℓ' + 𝓙 ω ω'` (the `m/π`-weighted disk integral for a homogeneous disk).
pub fn inner_product(f: &PolarField, g: &PolarField, params: &PhysicalParams) -> Result<f64> {
    if !f.grid.same_as(&g.grid) || f.n_theta != g.n_theta {
        return Err(Error::GridMismatch);
    }
    let nt = f.n_theta;
    let mut fluid = 0.0;
    for i in 0..f.grid.n_points {
        let mut s = 0.0;
        for j in i * nt..(i + 1) * nt {
            s += f.v_r[j] * g.v_r[j] + f.v_theta[j] * g.v_theta[j];
        }
        fluid += f.grid.quad_weights[i] * s * 2.0 * PI / nt as f64;
    }
    let m = params.m;
    let ball = m * (f.ball_ell[0] * g.ball_ell[0] + f.ball_ell[1] * g.ball_ell[1]) + params.inertia * f.ball_omega * g.ball_omega;
    Ok(fluid + ball)
}

/// Adds `Dᵀ diag(c) D` to a pentadiagonal matrix.
fn add_dtwd(g: &RadialGrid, c: &[f64], a: &mut SymPenta) {
    for i in 0..g.n_points {
        let (s, w) = g.derivative_stencil(i);
        for p in 0..3 {
            for q in p..3 {
                a.add(s + p, s + q, c[i] * w[p] * w[q]);
            }
        }
    }
}

/// `out += Dᵀ diag(c) v`.
fn add_dtw(g: &RadialGrid, c: &[f64], v: &[f64], out: &mut [f64]) {
    for i in 0..g.n_points {
        let (s, w) = g.derivative_stencil(i);
        for p in 0..3 {
            out[s + p] += w[p] * c[i] * v[i];
        }
    }
}

/// Normal equations of one stream channel with radial multiplier `kf/r`:
/// minimizes `π Σ w_i [(kf s_i/r_i − fr_i)² + ((D s)_i − ft_i)²] + ball_w (s_0 − ball_target)²`.
fn project_stream_channel(
    g: &RadialGrid,
    kf: f64,
    fr: &[f64],
    ft: &[f64],
    ball: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    let n = g.n_points;
    let mut a = SymPenta::zeros(n);
    let mut rhs = vec![0.0; n];
    let wpi: Vec<f64> = g.quad_weights.iter().map(|w| PI * w).collect();
    add_dtwd(g, &wpi, &mut a);
    add_dtw(g, &wpi, ft, &mut rhs);
    for i in 0..n {
        let r = g.nodes[i];
        a.d0[i] += wpi[i] * kf * kf / (r * r);
        rhs[i] += wpi[i] * kf * fr[i] / r;
    }
    match ball {
        Some((bw, target)) => {
            a.d0[0] += bw;
            rhs[0] += bw * target;
        }
        None => {
            a.d0[0] = 1.0;
            a.d1[0] = 0.0;
            a.d2[0] = 0.0;
            rhs[0] = 0.0;
        }
    }
    a.solve(&mut rhs)?;
    Ok(rhs)
}

/// Orthogonal projection, in the discrete `𝓛²` inner product, onto the span of
/// decompositions with truncation `k_max`. The disk data of `field` enters only
/// through its rigid moments `(ball_ell, ball_omega)`.
pub fn project_leray(field: &PolarField, params: &PhysicalParams, k_max: usize) -> Result<ModeDecomposition> {
    let k_max = k_max.max(1);
    if field.n_theta < 2 * k_max + 2 {
        return Err(Error::InsufficientResolution { n_theta: field.n_theta, required: 2 * k_max + 2 });
    }
    let g = field.grid.clone();
    let n = g.n_points;
    let spec = field_spectrum(field);
    let col = |t: &Vec<Vec<f64>>, k: usize| (0..n).map(|i| t[i][k]).collect::<Vec<f64>>();
    let m = params.m;
    let mut d = ModeDecomposition::zeros(g.clone(), k_max);

    let ft0 = col(&spec.vt_a, 0);
    d.w = ft0.clone();
    let w0 = 2.0 * PI * g.quad_weights[0];
    d.w[0] = (w0 * ft0[0] + params.inertia * field.ball_omega) / (w0 + params.inertia);

    let jobs: Vec<(usize, usize)> = (1..=k_max).flat_map(|k| [(k, 0), (k, 1)]).collect();
    let results: Vec<Result<Vec<f64>>> = {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(k, ch)| {
                let kf = k as f64;
                // Channel 0: V_r ~ sin kθ, V_θ ~ cos kθ; channel 1: V_r ~ −cos kθ, V_θ ~ sin kθ.
                let (fr, ft) = if ch == 0 {
                    (col(&spec.vr_b, k), col(&spec.vt_a, k))
                } else {
                    (col(&spec.vr_a, k).iter().map(|v| -v).collect(), col(&spec.vt_b, k))
                };
                let ball = if k == 1 {
                    let target = if ch == 0 { field.ball_ell[1] } else { -field.ball_ell[0] };
                    Some((m, target))
                } else {
                    None
                };
                project_stream_channel(&g, kf, &fr, &ft, ball)
            })
            .collect()
    };
    for (&(k, ch), res) in jobs.iter().zip(results) {
        let prof = res?;
        match (k, ch) {
            (1, 0) => d.psi = prof,
            (1, _) => d.phi = prof,
            (_, c) => d.higher[k - 2][c] = prof,
        }
    }
    d.sync_rigid();
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Kirchhoff field `Ξ = 1_{F₀} ∇ψ̄ − 1_{B₀} e_j` with `ψ̄ = cos θ/r` (`X`) or `sin θ/r` (`Y`).
pub fn kirchhoff_test_field(grid: Arc<RadialGrid>, direction: Axis) -> ModeDecomposition {
    let mut d = ModeDecomposition::zeros(grid.clone(), 1);
    let prof: Vec<f64> = grid.nodes.iter().map(|r| 1.0 / r).collect();
    match direction {
        Axis::X => d.phi = prof,
        Axis::Y => d.psi = prof.iter().map(|v| -v).collect(),
    }
    d.sync_rigid();
    d
}

/// `∫_{F₀} v·∇ψ̄` with `ψ̄ = cos θ/r`, integrating the piecewise-linear interpolant of `Φ/r`
/// exactly cell by cell and adding the harmonic far-field tail beyond `r_max`.
pub fn added_mass_pairing(decomp: &ModeDecomposition) -> f64 {
    let g = &decomp.grid;
    let n = g.n_points;
    let q: Vec<f64> = (0..n).map(|i| decomp.phi[i] / g.nodes[i]).collect();
    let mut cells = 0.0;
    for j in 0..n - 1 {
        cells += -PI * (q[j + 1] - q[j]);
    }
    let tail = PI * q[n - 1];
    cells + tail
}

/// Same pairing from physical samples with the grid quadrature (second-order accurate).
pub fn added_mass_pairing_sampled(field: &PolarField) -> f64 {
    let nt = field.n_theta;
    let g = &field.grid;
    let mut total = 0.0;
    for i in 0..g.n_points {
        let r = g.nodes[i];
        let mut s = 0.0;
        for j in 0..nt {
            let th = field.theta(j);
            let gr = -th.cos() / (r * r);
            let gt = -th.sin() / (r * r);
            s += field.v_r[i * nt + j] * gr + field.v_theta[i * nt + j] * gt;
        }
        total += g.quad_weights[i] * s * 2.0 * PI / nt as f64;
    }
    let n = g.n_points;
    total + PI * field_phi_tail(field, n - 1)
}

fn field_phi_tail(field: &PolarField, i: usize) -> f64 {
    let nt = field.n_theta;
    let (a, _) = Angular::new(nt).analyze(&field.v_r[i * nt..(i + 1) * nt]);
    // Φ(R)/R = −a_1(V_r)(R).
    -a[1]
}

/// Coefficients of the harmonic extension beyond `r_max` at radius `r`.
fn tail_coefficients(d: &ModeDecomposition, r: f64) -> [Vec<f64>; 4] {
    let g = &d.grid;
    let n = g.n_points;
    let big_r = g.r_max;
    let kk = d.k_max + 1;
    let mut vr_a = vec![0.0; kk];
    let mut vr_b = vec![0.0; kk];
    let mut vt_a = vec![0.0; kk];
    let mut vt_b = vec![0.0; kk];
    let ext = |val: f64, k: f64| (val * (big_r / r).powf(k), -k * val * (big_r / r).powf(k) / r);
    let (ps, dps) = ext(d.psi[n - 1], 1.0);
    let (ph, dph) = ext(d.phi[n - 1], 1.0);
    vr_b[1] = ps / r;
    vr_a[1] = -ph / r;
    vt_a[1] = dps;
    vt_b[1] = dph;
    for (idx, pair) in d.higher.iter().enumerate() {
        let k = idx + 2;
        let kf = k as f64;
        let (c, dc) = ext(pair[0][n - 1], kf);
        let (s, ds) = ext(pair[1][n - 1], kf);
        vr_b[k] = kf * c / r;
        vr_a[k] = -kf * s / r;
        vt_a[k] = dc;
        vt_b[k] = ds;
    }
    [vr_a, vr_b, vt_a, vt_b]
}

fn parseval(vr_a: &[f64], vr_b: &[f64], vt_a: &[f64], vt_b: &[f64]) -> f64 {
    let mut s = 2.0 * PI * (vr_a[0] * vr_a[0] + vt_a[0] * vt_a[0]);
    for k in 1..vr_a.len() {
        s += PI * (vr_a[k] * vr_a[k] + vr_b[k] * vr_b[k] + vt_a[k] * vt_a[k] + vt_b[k] * vt_b[k]);
    }
    s
}

/// Number of tail quadrature nodes for the region beyond `r_max`.
const TAIL_NODES: usize = 24;

/// `∫_{F₀} |V|^p` (or the sup for `p = ∞`), including the harmonic tail beyond `r_max` for `p > 1`.
pub fn fluid_lp_power(d: &ModeDecomposition, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    let g = &d.grid;
    let n = g.n_points;
    let kk = d.k_max + 1;
    let c = mode_coefficients(d);
    let col = |t: &Vec<Vec<f64>>, i: usize| (0..kk).map(|k| t[k][i]).collect::<Vec<f64>>();
    let nt = (4 * d.k_max + 4).next_power_of_two().max(64);
    let ang = Angular::new(nt);
    let angular_power = |vr_a: &[f64], vr_b: &[f64], vt_a: &[f64], vt_b: &[f64]| -> f64 {
        if p == 2.0 {
            return parseval(vr_a, vr_b, vt_a, vt_b);
        }
        let vr = ang.synthesize(vr_a, vr_b);
        let vt = ang.synthesize(vt_a, vt_b);
        if p.is_infinite() {
            return vr.iter().zip(&vt).fold(0.0_f64, |m, (a, b)| m.max(a.hypot(*b)));
        }
        let s: f64 = vr.iter().zip(&vt).map(|(a, b)| a.hypot(*b).powf(p)).sum();
        s * 2.0 * PI / nt as f64
    };
    let mut total = 0.0_f64;
    for i in 0..n {
        let v = angular_power(&col(&c.vr_a, i), &col(&c.vr_b, i), &col(&c.vt_a, i), &col(&c.vt_b, i));
        if p.is_infinite() {
            total = total.max(v);
        } else {
            total += g.quad_weights[i] * v;
        }
    }
    if p.is_finite() && p > 1.0 {
        let (s, w) = gauss_legendre_unit(TAIL_NODES);
        let big_r = g.r_max;
        for (sk, wk) in s.iter().zip(&w) {
            let r = big_r / sk;
            let [a, b, ta, tb] = tail_coefficients(d, r);
            total += wk * angular_power(&a, &b, &ta, &tb) * big_r * big_r / (sk * sk * sk);
        }
    }
    Ok(total)
}

/// `∫_{B₀} |ℓ + ω x^⊥|^p dx`, or the sup `|ℓ| + |ω|` for `p = ∞`.
pub fn ball_lp_power(ell: [f64; 2], omega: f64, p: f64) -> f64 {
    let l = ell[0].hypot(ell[1]);
    if p.is_infinite() {
        return l + omega.abs();
    }
    if p == 2.0 {
        return PI * l * l + 0.5 * PI * omega * omega;
    }
    if omega == 0.0 {
        return PI * l.powf(p);
    }
    if l == 0.0 {
        return 2.0 * PI * omega.abs().powf(p) / (p + 2.0);
    }
    let (rs, rw) = gauss_legendre_unit(64);
    let nt = 256;
    let mut s = 0.0;
    for (r, wr) in rs.iter().zip(&rw) {
        let mut ang = 0.0;
        for j in 0..nt {
            let phi = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
            let m2 = l * l + 2.0 * omega * l * r * phi.cos() + omega * omega * r * r;
            ang += m2.max(0.0).powf(0.5 * p);
        }
        s += wr * r * ang * 2.0 * PI / nt as f64;
    }
    s
}

/// Norm of the full field: `(∫_{F₀}|V|^p + ball_weight ∫_{B₀}|V|^p)^{1/p}`.
pub fn field_norm(d: &ModeDecomposition, p: f64, ball_weight: f64) -> Result<f64> {
    let fluid = fluid_lp_power(d, p)?;
    let ball = ball_lp_power(d.rigid.ell, d.rigid.omega, p);
    if p.is_infinite() {
        return Ok(fluid.max(ball));
    }
    Ok((fluid + ball_weight * ball).powf(1.0 / p))
}

/// `Lᵖ(F₀)` norm of the fluid part only.
pub fn fluid_norm(d: &ModeDecomposition, p: f64) -> Result<f64> {
    let v = fluid_lp_power(d, p)?;
    Ok(if p.is_infinite() { v } else { v.powf(1.0 / p) })
}

/// Columnar export: `# ell_x ell_y omega: …`, then `r, W, Psi, Phi, psi_2, phi_2, …`.
pub fn write_decomposition(out: &mut dyn Write, d: &ModeDecomposition) -> std::io::Result<()> {
    writeln!(out, "# ell_x ell_y omega: {} {} {}", sci(d.rigid.ell[0]), sci(d.rigid.ell[1]), sci(d.rigid.omega))?;
    let mut header = String::from("r, W, Psi, Phi");
    for k in 2..=d.k_max {
        header.push_str(&format!(", psi_{k}, phi_{k}"));
    }
    writeln!(out, "{header}")?;
    let profiles = d.profiles();
    for i in 0..d.grid.n_points {
        let mut line = sci(d.grid.nodes[i]);
        for p in &profiles {
            line.push_str(", ");
            line.push_str(&sci(p[i]));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads the format of `write_decomposition`; the grid is rebuilt from the `r` column.
pub fn read_decomposition(input: &mut dyn BufRead) -> Result<ModeDecomposition> {
    let bad = |msg: &str| Error::InvalidArgument(format!("field file: {msg}"));
    let mut rigid: Option<[f64; 3]> = None;
    let mut columns: Option<usize> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in input.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if let Some(vals) = rest.trim_start().strip_prefix("ell_x ell_y omega:") {
                let v: Vec<f64> = vals
                    .split_whitespace()
                    .map(|s| s.parse::<f64>().map_err(|_| bad("bad rigid data")))
                    .collect::<Result<_>>()?;
                if v.len() != 3 {
                    return Err(bad("rigid line needs three values"));
                }
                rigid = Some([v[0], v[1], v[2]]);
            }
            continue;
        }
        if columns.is_none() {
            let names: Vec<&str> = t.split(',').map(|s| s.trim()).collect();
            if names.len() < 4 || names[..4] != ["r", "W", "Psi", "Phi"] || names.len() % 2 != 0 {
                return Err(bad("header must start with `r, W, Psi, Phi` and list psi_k, phi_k pairs"));
            }
            columns = Some(names.len());
            continue;
        }
        let v: Vec<f64> = t
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad("non-numeric entry")))
            .collect::<Result<_>>()?;
        if Some(v.len()) != columns {
            return Err(bad("row length differs from header"));
        }
        rows.push(v);
    }
    let cols = columns.ok_or_else(|| bad("missing header"))?;
    let grid = Arc::new(RadialGrid::from_nodes(rows.iter().map(|r| r[0]).collect(), 0.0)?);
    let k_max = 1 + (cols - 4) / 2;
    let mut d = ModeDecomposition::zeros(grid, k_max);
    let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    d.w = col(1);
    d.psi = col(2);
    d.phi = col(3);
    for k in 2..=k_max {
        d.higher[k - 2] = [col(4 + 2 * (k - 2)), col(5 + 2 * (k - 2))];
    }
    d.sync_rigid();
    if let Some([lx, ly, om]) = rigid {
        let tol = 1e-12 * (1.0 + d.max_abs());
        if (lx - d.rigid.ell[0]).abs() > tol || (ly - d.rigid.ell[1]).abs() > tol || (om - d.rigid.omega).abs() > tol {
            return Err(bad("rigid data disagrees with the traces at r = 1"));
        }
    }
    Ok(d)
}
