//! Radial mesh on the fluid annulus `[1, r_max]`, quadrature against `r dr`,
//! physical parameters and the norms used throughout the crate.

use crate::error::{Error, Result};
use crate::fields::ModeDecomposition;
use crate::linalg::fd_weights;

/// Stretched radial mesh with hat-function quadrature weights for `∫ f(r) r dr`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialGrid {
    pub n_points: usize,
    pub r_max: f64,
    pub stretch: f64,
    pub nodes: Vec<f64>,
    pub quad_weights: Vec<f64>,
    /// `∫ hat_i(r) dr / r`, the lumped weights of the `1/r²` reaction term.
    pub recip_weights: Vec<f64>,
    /// Control-volume weights `r_i (h_{i−1} + h_i)/2`: the trapezoid rule applied to `r f`.
    /// These are the mass weights of the radial heat solvers.
    pub cell_weights: Vec<f64>,
    deriv: Vec<(usize, [f64; 3])>,
}

impl RadialGrid {
    /// Builds a grid from explicit nodes. Used by `build_grid` and by small hand-made meshes.
    pub fn from_nodes(nodes: Vec<f64>, stretch: f64) -> Result<Self> {
        let n = nodes.len();
        if n < 3 {
            return Err(Error::InvalidArgument(format!("need at least 3 nodes, got {n}")));
        }
        if nodes[0] != 1.0 {
            return Err(Error::InvalidArgument("first node must be exactly 1".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("nodes must be strictly increasing".into()));
        }
        let mut quad_weights = vec![0.0; n];
        let mut recip_weights = vec![0.0; n];
        let mut cell_weights = vec![0.0; n];
        for i in 0..n - 1 {
            let h = nodes[i + 1] - nodes[i];
            cell_weights[i] += 0.5 * h * nodes[i];
            cell_weights[i + 1] += 0.5 * h * nodes[i + 1];
        }
        for i in 0..n - 1 {
            let (a, b) = (nodes[i], nodes[i + 1]);
            let h = b - a;
            quad_weights[i] += h * (2.0 * a + b) / 6.0;
            quad_weights[i + 1] += h * (a + 2.0 * b) / 6.0;
            let lg = (b / a).ln();
            recip_weights[i] += (b * lg - h) / h;
            recip_weights[i + 1] += (h - a * lg) / h;
        }
        let deriv = (0..n)
            .map(|i| {
                let s = if i == 0 { 0 } else if i == n - 1 { n - 3 } else { i - 1 };
                let w = fd_weights(nodes[i], &nodes[s..s + 3], 1);
                (s, [w[0], w[1], w[2]])
            })
            .collect();
        Ok(Self { n_points: n, r_max: nodes[n - 1], stretch, nodes, quad_weights, recip_weights, cell_weights, deriv })
    }

    /// Mesh width of the interval `[r_i, r_{i+1}]`.
    pub fn h(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.n_points - 1).map(|i| self.h(i)).fold(f64::INFINITY, f64::min)
    }

    /// Second-order first derivative: centred in the interior, one-sided at both ends.
    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        self.deriv
            .iter()
            .map(|&(s, w)| w[0] * f[s] + w[1] * f[s + 1] + w[2] * f[s + 2])
            .collect()
    }

    /// Stencil of the derivative at node `i`: first index and three weights.
    pub fn derivative_stencil(&self, i: usize) -> (usize, [f64; 3]) {
        self.deriv[i]
    }

    /// `∫₁^{r_max} f r dr` with the grid quadrature.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.quad_weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// `∫₁^{r_max} f r dr` by the trapezoid rule on `r f`.
    pub fn integrate_cells(&self, f: &[f64]) -> f64 {
        self.cell_weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub fn same_as(&self, other: &RadialGrid) -> bool {
        std::ptr::eq(self, other) || (self.n_points == other.n_points && self.nodes == other.nodes)
    }
}

/// Graded grid `r(ξ) = 1 + (r_max − 1)(e^{σξ} − 1)/(e^σ − 1)` on uniform `ξ ∈ [0, 1]`.
pub fn build_grid(n_points: usize, r_max: f64, stretch: f64) -> Result<RadialGrid> {
    if n_points < 16 {
        return Err(Error::InvalidArgument(format!("n_points must be >= 16, got {n_points}")));
    }
    if !(r_max > 2.0) || !r_max.is_finite() {
        return Err(Error::InvalidArgument(format!("r_max must exceed 2, got {r_max}")));
    }
    if !(stretch >= 0.0) || !stretch.is_finite() {
        return Err(Error::InvalidArgument(format!("stretch must be >= 0, got {stretch}")));
    }
    let last = (n_points - 1) as f64;
    let mut nodes: Vec<f64> = (0..n_points)
        .map(|i| {
            let xi = i as f64 / last;
            let s = if stretch < 1e-12 { xi } else { (stretch * xi).exp_m1() / stretch.exp_m1() };
            1.0 + (r_max - 1.0) * s
        })
        .collect();
    nodes[0] = 1.0;
    nodes[n_points - 1] = r_max;
    RadialGrid::from_nodes(nodes, stretch)
}

/// Viscosity, disk mass and moment of inertia, with the derived boundary couplings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalParams {
    pub nu: f64,
    pub m: f64,
    pub inertia: f64,
    pub alpha0: f64,
    pub alpha_w: f64,
}

impl PhysicalParams {
    pub fn new(nu: f64, m: f64, inertia: f64) -> Result<Self> {
        if !(nu > 0.0) || !(m > 0.0) || !(inertia > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "nu, m and inertia must be positive (got {nu}, {m}, {inertia})"
            )));
        }
        Ok(Self {
            nu,
            m,
            inertia,
            alpha0: 4.0 * std::f64::consts::PI / (std::f64::consts::PI + m),
            alpha_w: 2.0 * std::f64::consts::PI / inertia,
        })
    }

    /// Homogeneous disk: `inertia = m / 2`.
    pub fn homogeneous(nu: f64, m: f64) -> Result<Self> {
        Self::new(nu, m, m / 2.0)
    }
}

/// `(Σ w_i |v_i|^p)^{1/p}`, or the node maximum for `p = ∞`.
pub fn lp_norm_radial(grid: &RadialGrid, values: &[f64], p: f64) -> Result<f64> {
    if values.len() != grid.n_points {
        return Err(Error::InvalidArgument(format!(
            "expected {} values, got {}",
            grid.n_points,
            values.len()
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let s: f64 = grid.quad_weights.iter().zip(values).map(|(w, v)| w * v.abs().powf(p)).sum();
    Ok(s.powf(1.0 / p))
}

/// Norm of the full field with the ball weighted by `m/π`.
pub fn weighted_field_norm(
    grid: &RadialGrid,
    mode_decomp: &ModeDecomposition,
    p: f64,
    params: &PhysicalParams,
) -> Result<f64> {
    if !mode_decomp.grid.same_as(grid) {
        return Err(Error::GridMismatch);
    }
    crate::fields::field_norm(mode_decomp, p, params.m / std::f64::consts::PI)
}
