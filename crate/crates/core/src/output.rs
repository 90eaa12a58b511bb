//! Number formatting shared by every file writer.

/// Full-precision scientific notation.
pub fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

/// Column label for a norm exponent: `2`, `4`, `inf`, `1.5`.
pub fn p_label(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else if p.fract() == 0.0 {
        format!("{}", p as i64)
    } else {
        format!("{p}")
    }
}
