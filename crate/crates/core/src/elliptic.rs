//! The transform `Z = Ψ' + Ψ/r` of a mode-1 stream profile, its inversion
//! `Ψ(r) = ℓ/r + (1/r)∫₁^r s Z(s) ds`, the `k`-generalized pair used by the higher
//! modes, and report-style checks of the two radial elliptic estimates.
//!
//! Discretely the transform is the box scheme
//! `(r_{i−1}^k z_{i−1} + r_i^k z_i)/2 = ((r^kψ)_i − (r^kψ)_{i−1})/h_{i−1}`,
//! which is the exact inverse of the cumulative trapezoid rule used by the inversion.

use crate::dynbc_heat::ScalarModeState;
use crate::error::{Error, Result};
use crate::linalg::fd_weights;
use crate::radial_grid::{lp_norm_radial, RadialGrid};

/// A mode-1 stream profile with its value at `r = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamPair {
    pub psi: Vec<f64>,
    pub ell: f64,
}

impl StreamPair {
    pub fn new(psi: Vec<f64>) -> Self {
        let ell = psi[0];
        Self { psi, ell }
    }
}

/// `Plus` gives `Z = Ψ' + Ψ/r`; `Minus` gives the Φ convention `Z = −(Φ' + Φ/r)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Fourth-order one-sided estimate of `(rψ)'(1) = ψ'(1) + ψ(1)`, a starting guess.
fn boundary_z(grid: &RadialGrid, psi: &[f64]) -> f64 {
    let m = 5.min(grid.n_points);
    let w = fd_weights(grid.nodes[0], &grid.nodes[..m], 1);
    w.iter().zip(psi).zip(&grid.nodes).map(|((a, b), r)| a * b * r).sum()
}

/// The box recursion leaves `z_0` free, and an error in it travels as the
/// sawtooth `(−1)^i r_0/r_i` all the way to the far field. Its amplitude is fitted by
/// least squares against the fourth differences of `r z` over the outer half of the
/// nodes, where a smooth profile contributes next to nothing and the sawtooth a
/// constant `±16 r_0`. Fitting far out leaves the far-field node clean, which the
/// heat solver's Dirichlet condition needs for exact mass balance.
fn remove_checkerboard(grid: &RadialGrid, z: &mut [f64]) {
    let n = grid.n_points;
    if n < 5 {
        return;
    }
    let r0 = grid.nodes[0];
    let u: Vec<f64> = z.iter().zip(&grid.nodes).map(|(v, r)| v * r).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in (n / 2).min(n - 5)..n - 4 {
        let d4 = u[i] - 4.0 * u[i + 1] + 6.0 * u[i + 2] - 4.0 * u[i + 3] + u[i + 4];
        let s4 = if i % 2 == 0 { 16.0 * r0 } else { -16.0 * r0 };
        num += d4 * s4;
        den += s4 * s4;
    }
    let delta = -num / den;
    for (i, (v, r)) in z.iter_mut().zip(&grid.nodes).enumerate() {
        let saw = if i % 2 == 0 { r0 / r } else { -r0 / r };
        *v += delta * saw;
    }
}

/// Box-scheme forward map with weight `r^k` starting from `z_0`.
fn box_forward(grid: &RadialGrid, psi: &[f64], k: i32, z0: f64) -> Vec<f64> {
    let n = grid.n_points;
    let rk: Vec<f64> = grid.nodes.iter().map(|r| r.powi(k)).collect();
    let mut z = vec![0.0; n];
    z[0] = z0;
    for i in 1..n {
        let jump = rk[i] * psi[i] - rk[i - 1] * psi[i - 1];
        z[i] = (2.0 * jump / grid.h(i - 1) - rk[i - 1] * z[i - 1]) / rk[i];
    }
    z
}

/// Cumulative trapezoid inverse: `r^k ψ = c0 + ∫₁^r s^k z`.
fn box_inverse(grid: &RadialGrid, z: &[f64], k: i32, c0: f64) -> Vec<f64> {
    let n = grid.n_points;
    let rk: Vec<f64> = grid.nodes.iter().map(|r| r.powi(k)).collect();
    let mut psi = vec![0.0; n];
    let mut acc = c0;
    psi[0] = c0;
    for i in 1..n {
        acc += 0.5 * grid.h(i - 1) * (rk[i - 1] * z[i - 1] + rk[i] * z[i]);
        psi[i] = acc / rk[i];
    }
    psi
}

/// `Z` of a mode-1 profile as a dynamic-boundary state with `ℓ_Z = ±2ℓ`.
pub fn z_transform(pair: &StreamPair, grid: &RadialGrid, sign: Sign) -> Result<ScalarModeState> {
    if pair.psi.len() != grid.n_points {
        return Err(Error::GridMismatch);
    }
    let s = sign.factor();
    let mut z = box_forward(grid, &pair.psi, 1, boundary_z(grid, &pair.psi));
    remove_checkerboard(grid, &mut z);
    let y: Vec<f64> = z.into_iter().map(|v| s * v).collect();
    Ok(ScalarModeState { y, ell: 2.0 * s * pair.ell, t: 0.0 })
}

/// Inverse of `z_transform`, using `ℓ = ±ℓ_Z/2` for the boundary value.
pub fn invert_z(z: &ScalarModeState, grid: &RadialGrid, sign: Sign) -> Result<StreamPair> {
    if z.y.len() != grid.n_points {
        return Err(Error::GridMismatch);
    }
    let s = sign.factor();
    let ell = 0.5 * z.ell;
    let psi: Vec<f64> = box_inverse(grid, &z.y, 1, ell).into_iter().map(|v| s * v).collect();
    Ok(StreamPair { ell: s * ell, psi })
}

/// `z_k = r^{−k}(r^k ψ_k)'` for a mode `k ≥ 2` profile with `ψ_k(1) = ψ_k'(1) = 0`.
pub fn z_transform_k(psi: &[f64], grid: &RadialGrid, k: u32) -> Result<Vec<f64>> {
    if psi.len() != grid.n_points {
        return Err(Error::GridMismatch);
    }
    Ok(box_forward(grid, psi, k as i32, 0.0))
}

/// `ψ_k = r^{−k}∫₁^r s^k z_k(s) ds`.
pub fn invert_z_k(z: &[f64], grid: &RadialGrid, k: u32) -> Result<Vec<f64>> {
    if z.len() != grid.n_points {
        return Err(Error::GridMismatch);
    }
    Ok(box_inverse(grid, z, k as i32, 0.0))
}

/// Both sides of `‖z/r‖ ≤ C(‖z'‖ + ε_p|z(1)|)` in `Lᵖ((1, r_max), r dr)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DrzReport {
    pub p: f64,
    pub eps: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs/rhs`; zero when both sides vanish, infinite on a violation.
    pub ratio: f64,
    pub violation: bool,
    pub r_max: f64,
}

pub fn check_drz_bound(z: &[f64], grid: &RadialGrid, p: f64) -> Result<DrzReport> {
    if p == 2.0 {
        return Err(Error::UnsupportedP(p));
    }
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("p must lie in (1, ∞), got {p}")));
    }
    if z.len() != grid.n_points {
        return Err(Error::GridMismatch);
    }
    let eps = if p > 2.0 { 1.0 } else { 0.0 };
    let zr: Vec<f64> = z.iter().zip(&grid.nodes).map(|(v, r)| v / r).collect();
    let lhs = lp_norm_radial(grid, &zr, p)?;
    let rhs = lp_norm_radial(grid, &grid.derivative(z), p)? + eps * z[0].abs();
    let violation = lhs > 0.0 && rhs == 0.0;
    let ratio = if lhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    };
    Ok(DrzReport { p, eps, lhs, rhs, ratio, violation, r_max: grid.r_max })
}

/// Second derivative from four-point Fornberg stencils, shifted inward at the ends.
fn second_derivative(grid: &RadialGrid, f: &[f64]) -> Vec<f64> {
    let n = grid.n_points;
    let m = 4.min(n);
    (0..n)
        .map(|i| {
            let s = i.saturating_sub(1).min(n - m);
            let w = fd_weights(grid.nodes[i], &grid.nodes[s..s + m], 2);
            w.iter().zip(&f[s..s + m]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Data and norms of the `w` problem `w'' + w'/r − w/r² = f`, `w'(1) − w(1) = a`, `w(1) = b`.
#[derive(Clone, Debug, PartialEq)]
pub struct WEllipticReport {
    pub p: f64,
    pub f: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub f_norm: f64,
    pub drr_norm: f64,
    /// `‖w'/r − w/r²‖`.
    pub mixed_norm: f64,
    pub dr_over_r_norm: f64,
    pub w_over_r2_norm: f64,
    /// `(‖w''‖ + ‖w'/r − w/r²‖)/(‖f‖ + |a|)`.
    pub ratio_second: f64,
    /// `(‖w'/r‖ + ‖w/r²‖)/(‖f‖ + |a| + ε_p|b|)`.
    pub ratio_first: f64,
}

pub fn check_w_elliptic(w: &[f64], grid: &RadialGrid, p: f64) -> Result<WEllipticReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("p must lie in (1, ∞), got {p}")));
    }
    if w.len() != grid.n_points {
        return Err(Error::GridMismatch);
    }
    let dw = grid.derivative(w);
    let d2w = second_derivative(grid, w);
    let n = grid.n_points;
    let r = &grid.nodes;
    let f: Vec<f64> = (0..n).map(|i| d2w[i] + dw[i] / r[i] - w[i] / (r[i] * r[i])).collect();
    let mixed: Vec<f64> = (0..n).map(|i| dw[i] / r[i] - w[i] / (r[i] * r[i])).collect();
    let dr_r: Vec<f64> = (0..n).map(|i| dw[i] / r[i]).collect();
    let w_r2: Vec<f64> = (0..n).map(|i| w[i] / (r[i] * r[i])).collect();
    let a = dw[0] - w[0];
    let b = w[0];
    let eps = if p > 2.0 { 1.0 } else { 0.0 };
    let f_norm = lp_norm_radial(grid, &f, p)?;
    let drr_norm = lp_norm_radial(grid, &d2w, p)?;
    let mixed_norm = lp_norm_radial(grid, &mixed, p)?;
    let dr_over_r_norm = lp_norm_radial(grid, &dr_r, p)?;
    let w_over_r2_norm = lp_norm_radial(grid, &w_r2, p)?;
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else if den == 0.0 { f64::INFINITY } else { num / den };
    Ok(WEllipticReport {
        p,
        ratio_second: ratio(drr_norm + mixed_norm, f_norm + a.abs()),
        ratio_first: ratio(dr_over_r_norm + w_over_r2_norm, f_norm + a.abs() + eps * b.abs()),
        f,
        a,
        b,
        f_norm,
        drr_norm,
        mixed_norm,
        dr_over_r_norm,
        w_over_r2_norm,
    })
}
