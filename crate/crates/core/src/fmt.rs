//! Numeric formatting for machine-readable outputs.

/// Formats with 9 significant digits, fixed notation. Non-finite values
/// (unavailable scores) become the empty string.
pub fn sig9(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}
