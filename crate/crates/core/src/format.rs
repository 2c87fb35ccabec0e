//! Float formatting shared by every machine-readable output.

/// 17 significant digits, enough to round-trip any `f64`; NaN is `NA`.
pub fn float17(x: f64) -> String {
    if x.is_nan() {
        "NA".to_owned()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else {
        format!("{x:.16e}")
    }
}

/// Parses the output of [`float17`].
pub fn parse_float17(s: &str) -> Option<f64> {
    match s.trim() {
        "NA" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}
