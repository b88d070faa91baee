//! Text encodings shared by the file formats: hexadecimal float literals for
//! bit-exact model files, fixed-significance decimal output for score and DET
//! tables, and flat `key=value` documents.

mod hexfloat;
mod kv;

pub use hexfloat::{format_hex, parse_hex};
pub use kv::KeyValues;

/// Formats `x` with `digits` significant decimal digits, in the style of
/// C's `%.{digits}g`: fixed notation for moderate exponents, scientific
/// otherwise, trailing zeros removed.
pub fn format_sig(x: f64, digits: usize) -> String {
    assert!(digits >= 1);
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_fraction(mantissa);
        format!("{m}e{exp}")
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Parses a decimal float, accepting `inf`/`-inf`.
pub fn parse_decimal(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}
