//! Decay-exponent fits, the expected rates of the linear and nonlinear estimates,
//! and profile errors.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fields::{fluid_norm, ModeDecomposition};
use crate::output::sci;

/// Least-squares slope of `log v` against `log t` over a window.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub exponent: f64,
    pub log_correction: bool,
    pub residual: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

pub const MIN_FIT_SAMPLES: usize = 8;

/// Fits `v ≈ C t^a` (or `v ≈ C t^a |log t|` when `log_correction` is set, the log being
/// divided out first) on the samples with `t` inside `window`.
pub fn fit_decay(series: &[(f64, f64)], window: (f64, f64), log_correction: bool) -> Result<DecayFit> {
    let (t0, t1) = window;
    if !(t0 >= 1.0) || !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("fit window must satisfy 1 <= t_min < t_max, got ({t0}, {t1})")));
    }
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|(t, _)| *t >= t0 * (1.0 - 1e-12) && *t <= t1 * (1.0 + 1e-12)).collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples { required: MIN_FIT_SAMPLES, got: pts.len() });
    }
    if pts.iter().any(|(_, v)| !(*v > 0.0)) {
        return Err(Error::NonpositiveValues);
    }
    if log_correction && pts.iter().any(|(t, _)| *t <= 1.0) {
        return Err(Error::InvalidArgument("log-corrected fits need t > 1".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = pts
        .iter()
        .map(|(t, v)| if log_correction { v.ln() - t.ln().ln() } else { v.ln() })
        .collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    Ok(DecayFit { exponent: slope, log_correction, residual: (rss / n).sqrt(), window, samples: pts.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateKind {
    /// `‖S(t)V₀‖_p` for `V₀ ∈ 𝓛^q`.
    Semigroup,
    /// `‖∇S(t)V₀‖_p`.
    Gradient,
    /// `‖S(t)ℙ div F‖_p` for `F ∈ L^q`.
    DivForcing,
    /// `|ℓ_{S(t)V₀}|` for `V₀ ∈ 𝓛^q`.
    EllDecay,
    /// `‖V(t) − S(t)V₀‖_p`, small data in `𝓛^q`.
    NsDiff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Short,
    Long,
}

/// Exponent `a` of the rate `t^a` (times `|log t|` when `log` is set).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedRate {
    pub exponent: f64,
    pub log: bool,
}

fn inv(p: f64) -> f64 {
    if p.is_infinite() {
        0.0
    } else {
        1.0 / p
    }
}

/// Closed-form exponents of the decay estimates on their validity ranges.
pub fn expected_exponent(kind: RateKind, p: f64, q: f64, regime: Regime) -> Result<ExpectedRate> {
    let oor = |msg: String| Err(Error::OutOfRange(msg));
    if !(q >= 1.0) || !(p >= 1.0) || q.is_nan() || p.is_nan() {
        return oor(format!("p, q must be >= 1 (got p={p}, q={q})"));
    }
    let (ip, iq) = (inv(p), inv(q));
    let plain = |e: f64| Ok(ExpectedRate { exponent: e, log: false });
    match kind {
        RateKind::Semigroup => {
            if p < q {
                return oor(format!("semigroup estimate needs p >= q (got p={p}, q={q})"));
            }
            plain(ip - iq)
        }
        RateKind::Gradient => {
            if p < q {
                return oor(format!("gradient estimate needs p >= q (got p={p}, q={q})"));
            }
            match regime {
                Regime::Short => plain(-0.5 + ip - iq),
                Regime::Long => {
                    if p < 2.0_f64.max(q) || p.is_infinite() {
                        return oor(format!("long-time gradient estimate needs max(2, q) <= p < ∞ (got p={p}, q={q})"));
                    }
                    plain(-iq)
                }
            }
        }
        RateKind::DivForcing => {
            if p < q || p.is_infinite() {
                return oor(format!("forcing estimate needs q <= p < ∞ (got p={p}, q={q})"));
            }
            match regime {
                Regime::Short => plain(-0.5 + ip - iq),
                Regime::Long => {
                    if q <= 2.0 {
                        plain(-1.0 + ip)
                    } else {
                        plain(-0.5 + ip - iq)
                    }
                }
            }
        }
        RateKind::EllDecay => {
            if q < 2.0 || q.is_infinite() {
                return oor(format!("ℓ decay needs q in [2, ∞) (got q={q})"));
            }
            plain(-(0.5 + iq))
        }
        RateKind::NsDiff => {
            if regime == Regime::Short {
                return oor("the nonlinear correction rate is a long-time statement".into());
            }
            if p < 2.0 || p.is_infinite() {
                return oor(format!("nonlinear correction rate needs p in [2, ∞) (got p={p})"));
            }
            if q > 2.0 {
                return oor(format!("nonlinear correction rate needs q in (1, 2] (got q={q})"));
            }
            if q <= 1.0 {
                return oor(format!("nonlinear correction rate needs q > 1 (got q={q})"));
            }
            let crit = 4.0 / 3.0;
            if (q - crit).abs() < 1e-12 {
                Ok(ExpectedRate { exponent: -(1.0 - ip), log: true })
            } else if q > crit {
                plain(-(2.0 * iq - 0.5 - ip))
            } else {
                plain(-(1.0 - ip))
            }
        }
    }
}

/// `Lᵖ(𝓕₀)` distance between a state and a reference decomposition, harmonic tail included.
pub fn profile_error(state: &ModeDecomposition, reference: &ModeDecomposition, p: f64) -> Result<f64> {
    if !state.grid.same_as(&reference.grid) {
        return Err(Error::GridMismatch);
    }
    let k = state.k_max.max(reference.k_max);
    let diff = state.with_k_max(k).difference(&reference.with_k_max(k));
    fluid_norm(&diff, p)
}

/// One line of the verdict table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub p: f64,
    pub q: f64,
    pub expected: f64,
    pub fitted: f64,
    pub residual: f64,
    pub pass: bool,
}

/// `experiment, p, q, expected, fitted, residual, pass`.
pub fn write_report(out: &mut dyn Write, rows: &[ReportRow]) -> std::io::Result<()> {
    writeln!(out, "experiment, p, q, expected, fitted, residual, pass")?;
    for r in rows {
        writeln!(
            out,
            "{}, {}, {}, {}, {}, {}, {}",
            r.experiment,
            sci(r.p),
            sci(r.q),
            sci(r.expected),
            sci(r.fitted),
            sci(r.residual),
            r.pass
        )?;
    }
    Ok(())
}
