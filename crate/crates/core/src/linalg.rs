//! Small dense kernels: tridiagonal and pentadiagonal solves, finite-difference weights.

use crate::error::{Error, Result};

/// Solves a tridiagonal system in place with the Thomas algorithm.
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (so `lower[0]` is ignored),
/// `upper[i]` multiplies `x[i+1]` (so the last entry is ignored).
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::InvalidArgument("tridiagonal band lengths differ".into()));
    }
    if n == 0 {
        return Ok(());
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::SolverFailure("zero pivot in tridiagonal solve".into()));
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::SolverFailure(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Symmetric positive definite matrix with half-bandwidth 2, stored by diagonals.
#[derive(Clone, Debug)]
pub struct SymPenta {
    pub d0: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl SymPenta {
    pub fn zeros(n: usize) -> Self {
        Self { d0: vec![0.0; n], d1: vec![0.0; n], d2: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.d0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d0.is_empty()
    }

    /// Adds `v` to entry (i, j), |i - j| <= 2; the symmetric partner is implied.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        match b - a {
            0 => self.d0[a] += v,
            1 => self.d1[a] += v,
            2 => self.d2[a] += v,
            _ => panic!("entry ({i}, {j}) outside the pentadiagonal band"),
        }
    }

    /// Cholesky factorization and solve, overwriting `rhs` with the solution.
    pub fn solve(&self, rhs: &mut [f64]) -> Result<()> {
        let n = self.len();
        if rhs.len() != n {
            return Err(Error::InvalidArgument("pentadiagonal rhs length".into()));
        }
        // L has diagonals l0 (main), l1 (first sub), l2 (second sub).
        let mut l0 = vec![0.0; n];
        let mut l1 = vec![0.0; n];
        let mut l2 = vec![0.0; n];
        for i in 0..n {
            if i >= 2 {
                l2[i - 2] = self.d2[i - 2] / l0[i - 2];
            }
            if i >= 1 {
                let mut s = self.d1[i - 1];
                if i >= 2 {
                    s -= l2[i - 2] * l1[i - 2];
                }
                l1[i - 1] = s / l0[i - 1];
            }
            let mut s = self.d0[i];
            if i >= 1 {
                s -= l1[i - 1] * l1[i - 1];
            }
            if i >= 2 {
                s -= l2[i - 2] * l2[i - 2];
            }
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::SolverFailure(format!("matrix not positive definite at row {i}")));
            }
            l0[i] = s.sqrt();
        }
        for i in 0..n {
            let mut s = rhs[i];
            if i >= 1 {
                s -= l1[i - 1] * rhs[i - 1];
            }
            if i >= 2 {
                s -= l2[i - 2] * rhs[i - 2];
            }
            rhs[i] = s / l0[i];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            if i + 1 < n {
                s -= l1[i] * rhs[i + 1];
            }
            if i + 2 < n {
                s -= l2[i] * rhs[i + 2];
            }
            rhs[i] = s / l0[i];
        }
        Ok(())
    }
}

/// Fornberg weights for the `order`-th derivative at `x0` from the sample points `xs`.
pub fn fd_weights(x0: f64, xs: &[f64], order: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_direct() {
        let lower = [0.0, -1.0, -1.0, -1.0];
        let diag = [4.0, 4.0, 4.0, 4.0];
        let upper = [-1.0, -1.0, -1.0, 0.0];
        let x = [1.0, 2.0, -1.0, 0.5];
        let mut b = [0.0; 4];
        for i in 0..4 {
            b[i] = diag[i] * x[i];
            if i > 0 {
                b[i] += lower[i] * x[i - 1];
            }
            if i < 3 {
                b[i] += upper[i] * x[i + 1];
            }
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut b).unwrap();
        for i in 0..4 {
            assert!((b[i] - x[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn penta_cholesky_roundtrip() {
        let n = 7;
        let mut a = SymPenta::zeros(n);
        for i in 0..n {
            a.add(i, i, 6.0 + i as f64);
            if i + 1 < n {
                a.add(i, i + 1, -1.5);
            }
            if i + 2 < n {
                a.add(i, i + 2, 0.7);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.9).sin()).collect();
        let mut b = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let d = i.abs_diff(j);
                let (lo, _) = (i.min(j), 0);
                let v = match d {
                    0 => a.d0[i],
                    1 => a.d1[lo],
                    2 => a.d2[lo],
                    _ => 0.0,
                };
                b[i] += v * x[j];
            }
        }
        a.solve(&mut b).unwrap();
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn fornberg_recovers_polynomial_derivatives() {
        let xs = [1.0, 1.1, 1.35, 1.5];
        let w = fd_weights(1.0, &xs, 1);
        let d: f64 = xs.iter().zip(&w).map(|(x, c)| c * x * x * x).sum();
        assert!((d - 3.0).abs() < 1e-11);
        let w2 = fd_weights(1.1, &xs[..3], 2);
        let d2: f64 = xs[..3].iter().zip(&w2).map(|(x, c)| c * x * x).sum();
        assert!((d2 - 2.0).abs() < 1e-10);
    }
}
