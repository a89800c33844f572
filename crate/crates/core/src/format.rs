//! Decimal output at a fixed number of significant digits.

/// Rounds `x` to `digits` significant digits and prints the shortest decimal
/// that parses back to the rounded value. Reading the output and printing it
/// again yields the same string.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let rounded: f64 = format!("{:.*e}", digits - 1, x).parse().unwrap_or(x);
    if rounded == 0.0 {
        return "0".to_string();
    }
    format!("{rounded}")
}
