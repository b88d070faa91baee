use crate::error::{Error, Result};

const MANT_BITS: u32 = 52;
const EXP_BIAS: i32 = 1023;

/// Formats a finite `f64` as a hexadecimal float literal (`-0x1.8p+1`).
/// Non-finite values render as `inf`, `-inf` or `nan`.
pub fn format_hex(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> MANT_BITS) & 0x7ff) as i32;
    let frac = bits & ((1u64 << MANT_BITS) - 1);
    if biased == 0 && frac == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 {
        (0, 1 - EXP_BIAS)
    } else {
        (1, biased - EXP_BIAS)
    };
    let digits = format!("{frac:013x}");
    let digits = digits.trim_end_matches('0');
    let exp_sign = if exp < 0 { '-' } else { '+' };
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp_sign}{}", exp.abs())
    } else {
        format!("{sign}0x{lead}.{digits}p{exp_sign}{}", exp.abs())
    }
}

/// Parses a hexadecimal float literal as produced by [`format_hex`] (and the
/// common `%a` output of C libraries). Decimal literals are rejected.
pub fn parse_hex(s: &str) -> Result<f64> {
    let bad = || Error::malformed(format!("{s:?}"), "not a hexadecimal float literal");
    let s = s.trim();
    match s {
        "inf" | "+inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        "nan" => return Ok(f64::NAN),
        _ => {}
    }
    let (negative, rest) = match s.as_bytes().first() {
        Some(b'-') => (true, &s[1..]),
        Some(b'+') => (false, &s[1..]),
        _ => (false, s),
    };
    let rest = rest
        .strip_prefix("0x")
        .or_else(|| rest.strip_prefix("0X"))
        .ok_or_else(bad)?;
    let (mant, exp) = rest.split_once(['p', 'P']).ok_or_else(bad)?;
    let exp: i32 = exp.parse().map_err(|_| bad())?;
    let (int_part, frac_part) = mant.split_once('.').unwrap_or((mant, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let all = int_part.bytes().chain(frac_part.bytes());
    let mut acc: u64 = 0;
    let mut used = 0usize;
    let mut dropped_exp = 0i32;
    for (i, b) in all.enumerate() {
        let d = (b as char).to_digit(16).ok_or_else(bad)? as u64;
        if used == 0 && d == 0 {
            if i >= int_part.len() {
                dropped_exp -= 4;
            }
            continue;
        }
        if used < 15 {
            acc = (acc << 4) | d;
            used += 1;
            if i >= int_part.len() {
                dropped_exp -= 4;
            }
        } else if i < int_part.len() {
            // Digits beyond 60 bits only shift the magnitude.
            dropped_exp += 4;
        }
    }
    let value = ldexp(acc as f64, exp + dropped_exp);
    Ok(if negative { -value } else { value })
}

/// `x * 2^e`, exact whenever the result is representable.
fn ldexp(mut x: f64, mut e: i32) -> f64 {
    let step_up = f64::from_bits(((EXP_BIAS + 512) as u64) << MANT_BITS);
    let step_down = f64::from_bits(((EXP_BIAS - 512) as u64) << MANT_BITS);
    while e > 512 {
        x *= step_up;
        e -= 512;
    }
    while e < -512 {
        // Keep the intermediate normal until the last multiplication.
        if x == 0.0 {
            return x;
        }
        x *= step_down;
        e += 512;
    }
    x * f64::from_bits(((EXP_BIAS + e) as u64) << MANT_BITS)
}
